"""
Mixed training objective L = L_t + lambda * L_s and the epoch loop.

Per-sample losses are length-normalized negative log-likelihoods over the
non-<pad> target positions; a batch loss is the mean of its per-sample
losses.
"""

import logging
import re
from pathlib import Path
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .config import LOG_CLAMP, PAD_ID
from .decoder import AttentionTrace, CaptionModel
from .encoder import FeatureSequence
from .errors import NonFiniteLossError, TokenError
from .models import AdamConfig, EpochSummary, LossRecord, ModelSpec, TrainConfig, TrainLogRecord
from .optimizer import AdamState, adam_step, clip_gradients
from .params import ParamStore

logger = logging.getLogger(__name__)

CHECKPOINT_PATTERN = re.compile(r"^epoch_(\d+)\.ckpt$")
MODEL_SPEC_FILE = "model.json"
TRAIN_LOG_FILE = "train_log.jsonl"


class TrainingSample(NamedTuple):
    video_id: str
    features: FeatureSequence
    targets: Tuple[int, ...]  # y*_1..y*_m ending in <end>, no padding


class MixedLoss(NamedTuple):
    total: Tensor
    record: LossRecord
    clamped: int  # probabilities floored at LOG_CLAMP before the log


def sequence_nll(probs: Tensor, targets: Sequence[int]) -> Tuple[Tensor, int]:
    """-(1/m) sum_t log probs[t, y*_t] over the non-<pad> positions."""
    target_ids = np.asarray(targets, dtype=np.int64)
    if probs.data.ndim != 2 or probs.shape[0] != len(target_ids):
        raise TokenError(f"targets of length {len(target_ids)} do not match distributions {probs.shape}")
    if target_ids.size and (target_ids.min() < 0 or target_ids.max() >= probs.shape[1]):
        raise TokenError("target id outside the vocabulary")
    real = target_ids != PAD_ID
    m = int(real.sum())
    if m == 0:
        raise TokenError("target sequence has no non-<pad> positions")

    selector = np.zeros(probs.shape)
    rows = np.nonzero(real)[0]
    selector[rows, target_ids[rows]] = 1.0
    picked = ad.sum_(probs * selector, axis=1)
    # <pad> rows read log(1) = 0
    picked = picked + (~real).astype(np.float64)

    clamped = int(np.sum(picked.data[real] < LOG_CLAMP))
    nll = ad.sum_(ad.log(picked)) * (-1.0 / m)
    return nll, clamped


def mixed_loss(
    p_tf: Tensor,
    p_sf: Optional[Tensor],
    targets: Sequence[int],
    lambda_: float,
) -> MixedLoss:
    """total = l_tf + lambda * l_sf; l_sf is 0 when the model has no SF stream."""
    l_tf, clamped = sequence_nll(p_tf, targets)
    if p_sf is None:
        total = l_tf
        l_sf_value = 0.0
    else:
        l_sf, clamped_sf = sequence_nll(p_sf, targets)
        clamped += clamped_sf
        total = l_tf + l_sf * lambda_
        l_sf_value = l_sf.item()

    if clamped:
        logger.warning("clamped %d zero probabilities at %.0e before log", clamped, LOG_CLAMP)
    record = LossRecord(l_tf=l_tf.item(), l_sf=l_sf_value, total=total.item(), lambda_=lambda_)
    return MixedLoss(total=total, record=record, clamped=clamped)


# -----------------------------------------------------------------------------
# Checkpoints
# -----------------------------------------------------------------------------
def checkpoint_path(out_dir: Path, epoch: int) -> Path:
    return out_dir / f"epoch_{epoch:03d}.ckpt"


def save_checkpoint(model: CaptionModel, adam: AdamState, out_dir: Path, epoch: int) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / MODEL_SPEC_FILE).write_text(model.spec.model_dump_json(indent=2))
    path = checkpoint_path(out_dir, epoch)
    model.params.save(path)
    adam.save(path.with_suffix(".adam"))
    return path


def load_checkpoint(path: Path) -> CaptionModel:
    """Load parameters and the sibling model.json describing them."""
    path = Path(path)
    spec = ModelSpec.model_validate_json((path.parent / MODEL_SPEC_FILE).read_text())
    return CaptionModel(spec, ParamStore.load(path))


def latest_checkpoint(out_dir: Path) -> Optional[Tuple[int, Path]]:
    if not out_dir.is_dir():
        return None
    found = []
    for entry in out_dir.iterdir():
        match = CHECKPOINT_PATTERN.match(entry.name)
        if match:
            found.append((int(match.group(1)), entry))
    return max(found) if found else None


# -----------------------------------------------------------------------------
# Training loop
# -----------------------------------------------------------------------------
EpochCallback = Callable[[int, CaptionModel], Optional[dict]]


class Trainer:
    """Deterministic epoch loop: shuffle per (seed, epoch), unroll, mixed loss, backward, Adam."""

    def __init__(
        self,
        model: CaptionModel,
        config: TrainConfig,
        adam: Optional[AdamState] = None,
        out_dir: Optional[Path] = None,
    ):
        self.model = model
        self.config = config
        self.adam = adam or AdamState(config=AdamConfig.from_train_config(config))
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.lambda_ = config.lambda_ if model.spec.dual_stream else 0.0

    def epoch_order(self, epoch: int, size: int) -> np.ndarray:
        return np.random.default_rng([self.config.seed, epoch]).permutation(size)

    def sample_loss(self, sample: TrainingSample, trace: Optional[AttentionTrace] = None) -> MixedLoss:
        video = self.model.encode(sample.features)
        p_tf, p_sf = self.model.unroll_training(video, sample.targets, trace)
        result = mixed_loss(p_tf, p_sf, sample.targets, self.lambda_)
        if not np.isfinite(result.record.total):
            raise NonFiniteLossError(sample.video_id, result.record.total)
        return result

    def train_step(
        self,
        batch: Sequence[TrainingSample],
        epoch: int,
        trace: Optional[AttentionTrace] = None,
    ) -> Tuple[LossRecord, float, int]:
        """Forward + backward + Adam on one batch; returns (mean loss record, lr, clamped)."""
        with Tape() as tape:
            results = [self.sample_loss(sample, trace) for sample in batch]
            total = results[0].total
            for result in results[1:]:
                total = total + result.total
            total = total * (1.0 / len(results))
        tape.backward(total)

        if self.config.clip_norm is not None:
            clip_gradients(self.model.params, self.config.clip_norm)
        lr = adam_step(self.model.params, self.adam, epoch)

        l_tf = float(np.mean([r.record.l_tf for r in results]))
        l_sf = float(np.mean([r.record.l_sf for r in results]))
        record = LossRecord(l_tf=l_tf, l_sf=l_sf, total=total.item(), lambda_=self.lambda_)
        return record, lr, sum(r.clamped for r in results)

    def train_epochs(
        self,
        dataset: Sequence[TrainingSample],
        start_epoch: int = 0,
        trace: Optional[AttentionTrace] = None,
        on_epoch_end: Optional[EpochCallback] = None,
    ) -> List[EpochSummary]:
        if not dataset:
            raise TokenError("training set is empty")
        summaries: List[EpochSummary] = []
        batch_size = self.config.batch_size

        for epoch in range(start_epoch, self.config.epochs):
            order = self.epoch_order(epoch, len(dataset))
            weighted = np.zeros(3)
            clamped = 0
            lr = self.adam.effective_lr(epoch)

            for batch_index, start in enumerate(range(0, len(order), batch_size)):
                batch = [dataset[i] for i in order[start:start + batch_size]]
                record, lr, batch_clamped = self.train_step(batch, epoch, trace)
                clamped += batch_clamped
                weighted += len(batch) * np.array([record.l_tf, record.l_sf, record.total])
                self._log(TrainLogRecord(epoch=epoch, batch=batch_index, lr=lr, **record.model_dump()))

            l_tf, l_sf, _ = weighted / len(dataset)
            epoch_loss = LossRecord(l_tf=l_tf, l_sf=l_sf, total=l_tf + self.lambda_ * l_sf, lambda_=self.lambda_)
            summary = EpochSummary(epoch=epoch, lr=lr, loss=epoch_loss, clamped_logs=clamped)

            if self.out_dir is not None:
                save_checkpoint(self.model, self.adam, self.out_dir, epoch)
            if on_epoch_end is not None:
                summary.val = on_epoch_end(epoch, self.model)
                if summary.val is not None:
                    self._write_line(summary.model_dump_json(include={"epoch", "val"}))

            logger.info(
                "epoch %d lr=%.3g l_tf=%.4f l_sf=%.4f total=%.4f",
                epoch, lr, epoch_loss.l_tf, epoch_loss.l_sf, epoch_loss.total,
            )
            summaries.append(summary)
        return summaries

    def _log(self, record: TrainLogRecord) -> None:
        logger.debug("epoch %d batch %d total=%.6f", record.epoch, record.batch, record.total)
        self._write_line(record.model_dump_json(by_alias=True))

    def _write_line(self, line: str) -> None:
        if self.out_dir is None:
            return
        self.out_dir.mkdir(parents=True, exist_ok=True)
        with open(self.out_dir / TRAIN_LOG_FILE, "a", encoding="utf-8") as handle:
            handle.write(line + "\n")
