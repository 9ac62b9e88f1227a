from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, computed_field, field_validator, model_validator

from .config import (
    ADAM_BETA1,
    ADAM_BETA2,
    ADAM_EPS,
    ADAM_LR0,
    DECAY_FACTOR,
    DEFAULT_BATCH_SIZE,
    DEFAULT_BEAM_WIDTH,
    DEFAULT_EPOCHS,
    DEFAULT_GAMMA,
    DEFAULT_HIDDEN,
    DEFAULT_LAMBDA,
    DUAL_STREAM_VARIANTS,
    EPOCHS_PER_DECAY,
    INIT_SCHEME,
    MAX_DECODE_LEN,
    SYNTH_FEATURE_DIM,
    SYNTH_FRAMES_PER_EVENT,
    VISUAL_AWARE_VARIANTS,
)

Variant = Literal["baseline", "va", "dd", "vadd"]
Split = Literal["train", "val", "test"]
Stream = Literal["mixed", "tf", "sf"]


class ModelSpec(BaseModel):
    """Dimensions and wiring of one captioning model; stored next to every checkpoint."""

    variant: Variant = "vadd"
    hidden: int = Field(DEFAULT_HIDDEN, ge=1)
    embed_dim: Optional[int] = Field(None, ge=1)
    attention_dim: Optional[int] = Field(None, ge=1)
    track_dim: Optional[int] = Field(None, ge=1)
    vocab_size: int = Field(..., ge=5)
    appearance_dim: int = Field(..., ge=1)
    motion_dim: int = Field(..., ge=1)
    share_va: bool = False
    init_scheme: str = INIT_SCHEME
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def fill_defaults(self) -> "ModelSpec":
        # Embedding, attention and visual-track sizes default to the LSTM hidden size
        if self.embed_dim is None:
            self.embed_dim = self.hidden
        if self.attention_dim is None:
            self.attention_dim = self.hidden
        if self.track_dim is None:
            self.track_dim = self.hidden
        return self

    @property
    def dual_stream(self) -> bool:
        return self.variant in DUAL_STREAM_VARIANTS

    @property
    def visual_aware(self) -> bool:
        return self.variant in VISUAL_AWARE_VARIANTS

    @property
    def feature_dim(self) -> int:
        return self.appearance_dim + self.motion_dim


class TrainConfig(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    lambda_: float = Field(DEFAULT_LAMBDA, ge=0.0, alias="lambda")
    lr0: float = Field(ADAM_LR0, gt=0.0)
    decay_every: int = Field(EPOCHS_PER_DECAY, ge=1)
    decay_factor: float = Field(DECAY_FACTOR, ge=1.0)
    epochs: int = Field(DEFAULT_EPOCHS, ge=1)
    batch_size: int = Field(DEFAULT_BATCH_SIZE, ge=1)
    seed: int = Field(0, ge=0)
    hidden: int = Field(DEFAULT_HIDDEN, ge=1)
    variant: Variant = "vadd"
    share_va: bool = False
    clip_norm: Optional[float] = Field(None, gt=0.0)


class AdamConfig(BaseModel):
    """Adam constants and the step-decay schedule; the moments live in ``AdamState``."""

    lr0: float = Field(ADAM_LR0, gt=0.0)
    beta1: float = Field(ADAM_BETA1, ge=0.0, lt=1.0)
    beta2: float = Field(ADAM_BETA2, ge=0.0, lt=1.0)
    eps: float = Field(ADAM_EPS, gt=0.0)
    decay_every: int = Field(EPOCHS_PER_DECAY, ge=1)
    decay_factor: float = Field(DECAY_FACTOR, ge=1.0)

    @classmethod
    def from_train_config(cls, config: TrainConfig) -> "AdamConfig":
        return cls(lr0=config.lr0, decay_every=config.decay_every, decay_factor=config.decay_factor)

    def effective_lr(self, epoch: int) -> float:
        """Learning rate for a 0-based epoch index."""
        return self.lr0 / self.decay_factor ** (epoch // self.decay_every)


class InferenceConfig(BaseModel):
    gamma: float = Field(DEFAULT_GAMMA, ge=0.0, le=1.0)
    beam_width: int = Field(DEFAULT_BEAM_WIDTH, ge=1)
    max_len: int = Field(MAX_DECODE_LEN, ge=1)
    length_norm: bool = True
    stream: Stream = "mixed"


class SynthSpec(BaseModel):
    n_videos: int = Field(20, ge=1)
    alphabet: int = Field(4, ge=1, le=12)
    events: int = Field(2, ge=1)
    feature_dim: int = Field(SYNTH_FEATURE_DIM, ge=1)
    frames_per_event: int = Field(SYNTH_FRAMES_PER_EVENT, ge=1)
    sigma: float = Field(0.05, ge=0.0)
    paraphrases: int = Field(2, ge=1)
    seed: int = Field(0, ge=0)
    val_fraction: float = Field(0.1, ge=0.0, lt=1.0)
    test_fraction: float = Field(0.2, ge=0.0, lt=1.0)
    distinct_programs: bool = False

    @model_validator(mode="after")
    def check_feasible(self) -> "SynthSpec":
        if self.val_fraction + self.test_fraction >= 1.0:
            raise ValueError("val_fraction + test_fraction must leave room for a training split")
        if self.distinct_programs and self.n_videos > self.alphabet ** self.events:
            raise ValueError(f"only {self.alphabet ** self.events} distinct programs for {self.n_videos} videos")
        return self


class ManifestEntry(BaseModel):
    """One manifest line as stored on disk (raw caption strings)."""

    video_id: str = Field(..., min_length=1)
    feature_path: str
    captions: List[str] = Field(..., min_length=1)
    split: Split = "train"


class CaptionRecord(BaseModel):
    """One video with its preprocessed reference captions."""

    video_id: str
    feature_path: str
    captions: List[List[str]] = Field(..., min_length=1)
    split: Split = "train"


class LossRecord(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    l_tf: float
    l_sf: float = 0.0
    total: float
    lambda_: float = Field(..., ge=0.0, alias="lambda")

    @model_validator(mode="after")
    def check_total(self) -> "LossRecord":
        expected = self.l_tf + self.lambda_ * self.l_sf
        if abs(self.total - expected) > 1e-12 * max(1.0, abs(expected)):
            raise ValueError(f"total {self.total} != l_tf + lambda * l_sf = {expected}")
        return self


class TrainLogRecord(LossRecord):
    epoch: int
    batch: int
    lr: float


class EpochSummary(BaseModel):
    epoch: int
    lr: float
    loss: LossRecord
    clamped_logs: int = 0
    val: Optional[Dict[str, float]] = None


class GradCheckEntry(BaseModel):
    name: str
    checked: int
    max_rel_error: float
    max_abs_error: float
    failures: int

    @property
    def passed(self) -> bool:
        return self.failures == 0


class GradCheckReport(BaseModel):
    tolerance: float
    fd_step: float
    entries: List[GradCheckEntry]

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def max_rel_error(self) -> float:
        return max((e.max_rel_error for e in self.entries), default=0.0)

    def failed_names(self) -> List[str]:
        return [e.name for e in self.entries if not e.passed]


class VideoDiagnostics(BaseModel):
    video_id: str
    candidate: str
    bleu4: float
    rouge_l: float
    cider: float


class MetricsReport(BaseModel):
    bleu4: float
    rouge_l: float
    cider: float
    videos: List[VideoDiagnostics] = []

    @computed_field
    @property
    def presentation(self) -> Dict[str, float]:
        """x100-scaled values for display; included in the JSON report."""
        return {
            "bleu4": round(self.bleu4 * 100, 1),
            "rouge_l": round(self.rouge_l * 100, 1),
            "cider": round(self.cider * 100, 1),
        }


class SweepRow(BaseModel):
    param: Literal["lambda", "gamma"]
    value: float
    bleu4: float
    rouge_l: float
    cider: float


class RunConfig(BaseModel):
    """Validated settings of one command: configs plus the paths it reads and writes."""

    train: Optional[TrainConfig] = None
    inference: Optional[InferenceConfig] = None
    manifest: Optional[str] = None
    vocab: Optional[str] = None
    checkpoint: Optional[str] = None
    out: Optional[str] = None
    variant: Optional[Variant] = None
    split: Split = "test"
    workers: int = Field(1, ge=1)

    @field_validator("manifest", "vocab", "checkpoint", "out")
    @classmethod
    def strip_paths(cls, v: Optional[str]) -> Optional[str]:
        return v.strip() if isinstance(v, str) else v
