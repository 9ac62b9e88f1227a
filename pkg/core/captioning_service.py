import csv
import json
import logging
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .config import (
    DUAL_STREAM_VARIANTS,
    END_ID,
    FRAME_SAMPLE_COUNT,
    GRADCHECK_FD_STEP,
    GRADCHECK_FEATURE_DIMS,
    GRADCHECK_FRAMES,
    GRADCHECK_HIDDEN,
    GRADCHECK_MAX_ENTRIES,
    GRADCHECK_TARGET_LEN,
    GRADCHECK_TOL,
    GRADCHECK_VOCAB,
    RESERVED_TOKENS,
    VOCAB_THRESHOLD,
)
from .decoder import AttentionTrace, CaptionModel
from .encoder import FeatureSequence
from .errors import MetricError, ValidationError
from .gradcheck import grad_check
from .inference import caption_videos, decode_greedy
from .metrics import EvalItem, evaluate
from .models import (
    AdamConfig,
    CaptionRecord,
    EpochSummary,
    GradCheckReport,
    InferenceConfig,
    MetricsReport,
    ModelSpec,
    SweepRow,
    TrainConfig,
)
from .objective import (
    TRAIN_LOG_FILE,
    Trainer,
    TrainingSample,
    latest_checkpoint,
    load_checkpoint,
    mixed_loss,
)
from .optimizer import AdamState
from .params import ParamStore
from .synth import SPEC_NAME
from .textdata import Vocabulary, encode_caption, load_features, read_features, read_manifest, split_records

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class FeatureLayout(NamedTuple):
    appearance_dim: int
    sample_count: Optional[int]  # None keeps every frame


class Corpus(NamedTuple):
    records: List[CaptionRecord]
    layout: FeatureLayout


class CaptioningService:
    """Orchestration shared by the command-line layer, the benchmark and the tests."""

    # -------------------------------------------------------------------------
    # Data loading
    # -------------------------------------------------------------------------
    @staticmethod
    def feature_layout(manifest: PathLike, records: Sequence[CaptionRecord], appearance_dim: Optional[int] = None) -> FeatureLayout:
        """
        Synthetic corpora carry their appearance width in synth_spec.json and
        keep every frame; other corpora are resampled to 50 frames and split
        in half unless ``appearance_dim`` is given.
        """
        spec_file = Path(manifest).parent / SPEC_NAME
        if spec_file.is_file():
            meta = json.loads(spec_file.read_text(encoding="utf-8"))
            return FeatureLayout(appearance_dim=appearance_dim or int(meta["appearance_dim"]), sample_count=None)
        if appearance_dim is None:
            if not records:
                raise ValidationError(f"{manifest}: manifest has no usable videos")
            appearance_dim = read_features(records[0].feature_path).shape[1] // 2
        return FeatureLayout(appearance_dim=appearance_dim, sample_count=FRAME_SAMPLE_COUNT)

    @classmethod
    def load_corpus(cls, manifest: PathLike, appearance_dim: Optional[int] = None) -> Corpus:
        records = read_manifest(manifest)
        return Corpus(records=records, layout=cls.feature_layout(manifest, records, appearance_dim))

    @staticmethod
    def load_video_features(records: Sequence[CaptionRecord], layout: FeatureLayout) -> List[FeatureSequence]:
        return [load_features(r.feature_path, layout.appearance_dim, layout.sample_count) for r in records]

    @classmethod
    def training_samples(cls, records: Sequence[CaptionRecord], vocab: Vocabulary, layout: FeatureLayout) -> List[TrainingSample]:
        """One sample per (video, reference caption) pair."""
        samples = []
        for record, features in zip(records, cls.load_video_features(records, layout)):
            for caption in record.captions:
                targets = encode_caption(caption, vocab).trimmed_targets()
                samples.append(TrainingSample(video_id=record.video_id, features=features, targets=targets))
        return samples

    # -------------------------------------------------------------------------
    # Vocabulary
    # -------------------------------------------------------------------------
    @staticmethod
    def build_vocab(manifest: PathLike, out: PathLike, threshold: int = VOCAB_THRESHOLD) -> Vocabulary:
        records = split_records(read_manifest(manifest), "train")
        if not records:
            raise ValidationError(f"{manifest}: no training videos to build a vocabulary from")
        vocab = Vocabulary.build(records, threshold)
        vocab.save(out)
        return vocab

    # -------------------------------------------------------------------------
    # Training
    # -------------------------------------------------------------------------
    @staticmethod
    def model_spec(config: TrainConfig, vocab: Vocabulary, layout: FeatureLayout, feature_dim: int) -> ModelSpec:
        return ModelSpec(
            variant=config.variant,
            hidden=config.hidden,
            vocab_size=len(vocab),
            appearance_dim=layout.appearance_dim,
            motion_dim=feature_dim - layout.appearance_dim,
            share_va=config.share_va,
            seed=config.seed,
        )

    @classmethod
    def train(
        cls,
        manifest: PathLike,
        vocab_path: PathLike,
        config: TrainConfig,
        out_dir: PathLike,
        resume: bool = False,
        validate: bool = True,
        trace: Optional[AttentionTrace] = None,
    ) -> Tuple[CaptionModel, List[EpochSummary]]:
        out_dir = Path(out_dir)
        vocab = Vocabulary.load(vocab_path)
        corpus = cls.load_corpus(manifest)
        train_records = split_records(corpus.records, "train")
        if not train_records:
            raise ValidationError(f"{manifest}: no training videos")
        samples = cls.training_samples(train_records, vocab, corpus.layout)

        if config.variant not in DUAL_STREAM_VARIANTS and config.lambda_ != 0.0:
            logger.warning("lambda=%.2f ignored: variant '%s' has no self-forcing stream", config.lambda_, config.variant)

        start_epoch = 0
        adam = None
        latest = latest_checkpoint(out_dir) if resume else None
        if latest is not None:
            last_epoch, path = latest
            model = load_checkpoint(path)
            adam = AdamState.load(path.with_suffix(".adam"), AdamConfig.from_train_config(config))
            start_epoch = last_epoch + 1
            cls._truncate_log(out_dir / TRAIN_LOG_FILE, last_epoch)
            logger.info("resuming from %s at epoch %d", path, start_epoch)
        else:
            if resume:
                logger.warning("no checkpoint in %s; training from scratch", out_dir)
            spec = cls.model_spec(config, vocab, corpus.layout, samples[0].features.dim)
            model = CaptionModel.build(spec)
            log_file = out_dir / TRAIN_LOG_FILE
            if log_file.exists():
                log_file.unlink()

        on_epoch_end = None
        val_records = split_records(corpus.records, "val")
        if validate and len(val_records) >= 2:
            val_features = cls.load_video_features(val_records, corpus.layout)

            def on_epoch_end(epoch: int, current: CaptionModel) -> Dict[str, float]:
                report = cls.score(current, val_records, val_features, vocab, InferenceConfig(), greedy=True)
                return {"bleu4": report.bleu4, "rouge_l": report.rouge_l, "cider": report.cider}

        trainer = Trainer(model, config, adam=adam, out_dir=out_dir)
        summaries = trainer.train_epochs(samples, start_epoch=start_epoch, trace=trace, on_epoch_end=on_epoch_end)
        return model, summaries

    @staticmethod
    def _truncate_log(log_file: Path, last_epoch: int) -> None:
        """Drop log lines written after the checkpoint being resumed from."""
        if not log_file.exists():
            return
        kept = [
            line for line in log_file.read_text(encoding="utf-8").splitlines()
            if line and json.loads(line)["epoch"] <= last_epoch
        ]
        log_file.write_text("".join(line + "\n" for line in kept), encoding="utf-8")

    # -------------------------------------------------------------------------
    # Decoding and evaluation
    # -------------------------------------------------------------------------
    @staticmethod
    def check_inference(model: CaptionModel, inference: InferenceConfig, gamma_given: bool = False) -> None:
        if not model.spec.dual_stream:
            if gamma_given:
                raise ValidationError(f"--gamma applies to dual-stream variants only, checkpoint is '{model.spec.variant}'")
            if inference.stream == "sf":
                raise ValidationError(f"variant '{model.spec.variant}' has no self-forcing stream")

    @staticmethod
    def decode(
        model: CaptionModel,
        features: Sequence[FeatureSequence],
        vocab: Vocabulary,
        inference: InferenceConfig,
        greedy: bool = False,
        workers: int = 1,
    ) -> List[List[str]]:
        if len(vocab) != model.vocab_size:
            raise ValidationError(f"vocabulary has {len(vocab)} tokens, checkpoint expects {model.vocab_size}")
        # beam width 1 is greedy decoding
        use_greedy = greedy or inference.beam_width == 1
        token_ids = caption_videos(model, features, inference, greedy=use_greedy, workers=workers)
        return [vocab.decode(ids) for ids in token_ids]

    @classmethod
    def score(
        cls,
        model: CaptionModel,
        records: Sequence[CaptionRecord],
        features: Sequence[FeatureSequence],
        vocab: Vocabulary,
        inference: InferenceConfig,
        greedy: bool = False,
        workers: int = 1,
    ) -> MetricsReport:
        candidates = cls.decode(model, features, vocab, inference, greedy, workers)
        eval_set = [
            EvalItem(video_id=r.video_id, candidate=c, references=r.captions)
            for r, c in zip(records, candidates)
        ]
        return evaluate(eval_set)

    @classmethod
    def evaluate_checkpoint(
        cls,
        checkpoint: PathLike,
        manifest: PathLike,
        vocab_path: PathLike,
        inference: InferenceConfig,
        split: str = "test",
        greedy: bool = False,
        workers: int = 1,
        trace_path: Optional[PathLike] = None,
    ) -> MetricsReport:
        model = load_checkpoint(Path(checkpoint))
        cls.check_inference(model, inference)
        vocab = Vocabulary.load(vocab_path)
        corpus = cls.load_corpus(manifest, model.spec.appearance_dim)
        records = split_records(corpus.records, split)
        if len(records) < 2:
            raise MetricError(f"split '{split}' has {len(records)} videos; metrics need at least two")
        features = cls.load_video_features(records, corpus.layout)

        report = cls.score(model, records, features, vocab, inference, greedy, workers)
        if trace_path is not None:
            cls.write_trace(model, records, features, inference, trace_path)
        return report

    @staticmethod
    def write_trace(
        model: CaptionModel,
        records: Sequence[CaptionRecord],
        features: Sequence[FeatureSequence],
        inference: InferenceConfig,
        path: PathLike,
    ) -> int:
        """Dump every attention vector of the greedy decodes as JSON lines; returns the line count."""
        frozen = model.frozen()
        lines = []
        for record, feature in zip(records, features):
            trace = AttentionTrace()
            decode_greedy(frozen.encode(feature), frozen, inference, trace)
            for stream, step, weights in trace.records:
                lines.append(json.dumps({"video_id": record.video_id, "stream": stream, "step": step, "alpha": weights.tolist()}))
        Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
        return len(lines)

    @classmethod
    def caption(
        cls,
        checkpoint: PathLike,
        manifest: PathLike,
        vocab_path: PathLike,
        inference: InferenceConfig,
        out: PathLike,
        split: str = "test",
        greedy: bool = False,
        workers: int = 1,
    ) -> int:
        """Write ``<video_id>\\t<caption>`` lines; returns the number of videos captioned."""
        model = load_checkpoint(Path(checkpoint))
        cls.check_inference(model, inference)
        vocab = Vocabulary.load(vocab_path)
        corpus = cls.load_corpus(manifest, model.spec.appearance_dim)
        records = split_records(corpus.records, split)
        features = cls.load_video_features(records, corpus.layout)
        captions = cls.decode(model, features, vocab, inference, greedy, workers)
        Path(out).write_text(
            "".join(f"{r.video_id}\t{' '.join(c)}\n" for r, c in zip(records, captions)),
            encoding="utf-8",
        )
        return len(records)

    # -------------------------------------------------------------------------
    # Sweeps
    # -------------------------------------------------------------------------
    @classmethod
    def sweep(
        cls,
        param: str,
        values: Sequence[float],
        manifest: PathLike,
        vocab_path: PathLike,
        config: TrainConfig,
        inference: InferenceConfig,
        out_dir: PathLike,
        split: str = "test",
        greedy: bool = False,
        workers: int = 1,
    ) -> List[SweepRow]:
        """
        gamma: train once, evaluate the checkpoint at every value.
        lambda: retrain per value, evaluate each with ``inference``.
        """
        out_dir = Path(out_dir)
        vocab = Vocabulary.load(vocab_path)
        corpus = cls.load_corpus(manifest)
        records = split_records(corpus.records, split)
        if len(records) < 2:
            raise MetricError(f"split '{split}' has {len(records)} videos; metrics need at least two")
        features = cls.load_video_features(records, corpus.layout)

        rows = []
        if param == "gamma":
            # every grid point is validated before the training run starts
            settings = [InferenceConfig(**{**inference.model_dump(), "gamma": value}) for value in values]
            model, _ = cls.train(manifest, vocab_path, config, out_dir / "train", validate=False)
            for value, setting in zip(values, settings):
                report = cls.score(model, records, features, vocab, setting, greedy, workers)
                rows.append(SweepRow(param=param, value=value, bleu4=report.bleu4, rouge_l=report.rouge_l, cider=report.cider))
        elif param == "lambda":
            run_configs = [TrainConfig(**{**config.model_dump(), "lambda_": value}) for value in values]
            for value, run_config in zip(values, run_configs):
                model, _ = cls.train(manifest, vocab_path, run_config, out_dir / f"lambda_{value:g}", validate=False)
                report = cls.score(model, records, features, vocab, inference, greedy, workers)
                rows.append(SweepRow(param=param, value=value, bleu4=report.bleu4, rouge_l=report.rouge_l, cider=report.cider))
        else:
            raise ValidationError(f"unknown sweep parameter '{param}'")
        return sorted(rows, key=lambda row: row.value)

    @staticmethod
    def write_curves(rows: Sequence[SweepRow], path: PathLike) -> None:
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["value", "bleu4", "rouge_l", "cider"])
            for row in rows:
                writer.writerow([f"{row.value:g}", f"{row.bleu4:.6f}", f"{row.rouge_l:.6f}", f"{row.cider:.6f}"])

    # -------------------------------------------------------------------------
    # Gradient check
    # -------------------------------------------------------------------------
    @staticmethod
    def gradcheck_fixture(variant: str, seed: int, lambda_: float = 0.8) -> Tuple[CaptionModel, FeatureSequence, Tuple[int, ...], float]:
        """Small model, random video and random target caption ending in <end>."""
        appearance_dim, motion_dim = GRADCHECK_FEATURE_DIMS
        spec = ModelSpec(
            variant=variant,
            hidden=GRADCHECK_HIDDEN,
            vocab_size=GRADCHECK_VOCAB,
            appearance_dim=appearance_dim,
            motion_dim=motion_dim,
            seed=seed,
        )
        model = CaptionModel.build(spec)
        rng = np.random.default_rng([seed, 7])
        features = FeatureSequence(
            appearance=rng.normal(size=(GRADCHECK_FRAMES, appearance_dim)),
            motion=rng.normal(size=(GRADCHECK_FRAMES, motion_dim)),
        )
        words = rng.integers(len(RESERVED_TOKENS), GRADCHECK_VOCAB, size=GRADCHECK_TARGET_LEN - 1)
        targets = tuple(int(w) for w in words) + (END_ID,)
        return model, features, targets, lambda_ if spec.dual_stream else 0.0

    @classmethod
    def gradcheck(
        cls,
        variant: str,
        seed: int = 0,
        tolerance: float = GRADCHECK_TOL,
        fd_step: float = GRADCHECK_FD_STEP,
        max_entries: int = GRADCHECK_MAX_ENTRIES,
    ) -> GradCheckReport:
        model, features, targets, lambda_ = cls.gradcheck_fixture(variant, seed)

        def loss_fn(params: ParamStore):
            current = CaptionModel(model.spec, params)
            p_tf, p_sf = current.unroll_training(current.encode(features), targets)
            return mixed_loss(p_tf, p_sf, targets, lambda_).total

        return grad_check(loss_fn, model.params, tolerance, fd_step, max_entries=max_entries or None, seed=seed)

    # -------------------------------------------------------------------------
    # Printed tables
    # -------------------------------------------------------------------------
    @staticmethod
    def print_metrics(report: MetricsReport, label: str) -> None:
        shown = report.presentation
        print("\n" + "═" * 72)
        print(f"Evaluation [{label}] | videos: {len(report.videos)}")
        print(f"BLEU-4: {shown['bleu4']:5.1f} | ROUGE-L: {shown['rouge_l']:5.1f} | CIDEr: {shown['cider']:5.1f}")
        print("─" * 72)
        print(f"{'video':<12} | {'B4':>6} {'R-L':>6} {'CIDEr':>7} | caption")
        print("─" * 72)
        for video in report.videos:
            print(f"{video.video_id:<12} | {video.bleu4:6.3f} {video.rouge_l:6.3f} {video.cider:7.3f} | {video.candidate}")
        print("═" * 72 + "\n")

    @staticmethod
    def print_sweep(rows: Sequence[SweepRow]) -> None:
        print("\n" + "═" * 48)
        print(f"Sweep over {rows[0].param if rows else '-'}")
        print("─" * 48)
        print(f"{'value':>8} | {'BLEU-4':>8} {'ROUGE-L':>8} {'CIDEr':>8}")
        print("─" * 48)
        for row in rows:
            print(f"{row.value:8.3f} | {row.bleu4 * 100:8.1f} {row.rouge_l * 100:8.1f} {row.cider * 100:8.1f}")
        print("═" * 48 + "\n")

    @staticmethod
    def print_gradcheck(reports: Dict[str, GradCheckReport]) -> None:
        print("\n" + "═" * 80)
        print("Gradient check")
        print("─" * 80)
        print(f"{'variant':<9} | {'parameter':<28} | {'checked':>7} {'max rel':>10} {'max abs':>10} {'fail':>5}")
        print("─" * 80)
        for variant, report in reports.items():
            for entry in report.entries:
                print(
                    f"{variant:<9} | {entry.name:<28} | {entry.checked:7d} "
                    f"{entry.max_rel_error:10.2e} {entry.max_abs_error:10.2e} {entry.failures:5d}"
                )
        print("─" * 80)
        verdict = "PASS" if all(r.passed for r in reports.values()) else "FAIL"
        print(f"{verdict} (tol {next(iter(reports.values())).tolerance:g})" if reports else verdict)
        print("═" * 80 + "\n")


