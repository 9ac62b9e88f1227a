"""Core package: autodiff, captioning model, training, decoding and metrics."""
