import tempfile
import time
from pathlib import Path

from core.captioning_service import CaptioningService
from core.config import VARIANTS
from core.inference import caption_videos
from core.models import InferenceConfig, SynthSpec, TrainConfig
from core.synth import gen_synth
from core.textdata import split_records


CORPUS = SynthSpec(n_videos=24, alphabet=4, events=2, seed=3)
HIDDEN = 16


def benchmark(workdir: Path, manifest: Path, vocab: Path, variant: str):
    """
    Time one training epoch and one greedy decode pass over the test split.
    Returns: (train_time, decode_time, final_total_loss)
    """
    config = TrainConfig(variant=variant, hidden=HIDDEN, epochs=1, batch_size=8, lr0=1e-2, seed=0)

    t0 = time.perf_counter()
    model, summaries = CaptioningService.train(manifest, vocab, config, workdir / variant, validate=False)
    t1 = time.perf_counter()

    corpus = CaptioningService.load_corpus(manifest)
    test_records = split_records(corpus.records, "test")
    features = CaptioningService.load_video_features(test_records, corpus.layout)
    caption_videos(model, features, InferenceConfig(), greedy=True)
    t2 = time.perf_counter()

    return t1 - t0, t2 - t1, summaries[-1].loss.total


if __name__ == "__main__":
    with tempfile.TemporaryDirectory() as tmp:
        workdir = Path(tmp)
        manifest = gen_synth(CORPUS, workdir / "corpus")
        vocab = workdir / "vocab.txt"
        CaptioningService.build_vocab(manifest, vocab, threshold=1)

        results = {variant: benchmark(workdir, manifest, vocab, variant) for variant in VARIANTS}

    baseline_train = results["baseline"][0]
    print(f"\n=== Variant Benchmark ({CORPUS.n_videos} videos, H={HIDDEN}) ===")
    print(f"{'variant':<9} | {'train epoch':>12} {'decode':>10} {'vs baseline':>12} {'loss':>9}")
    print("─" * 60)
    for variant, (train_time, decode_time, loss) in results.items():
        delta_pct = ((train_time - baseline_train) / baseline_train) * 100 if baseline_train else 0.0
        print(f"{variant:<9} | {train_time:11.3f}s {decode_time:9.3f}s {delta_pct:+11.1f}% {loss:9.4f}")
    print()
