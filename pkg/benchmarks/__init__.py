"""
Benchmark utilities for comparing the four captioning variants.

See `benchmark_variants.py` for the benchmarking script and output format.
"""
