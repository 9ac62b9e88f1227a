"""
Guardrails around the core: every command's flags are checked here before
any model state is built or any file is written.
"""

import argparse
from pathlib import Path
from typing import Callable, List, Optional, Tuple, Type, TypeVar

import pydantic

from core.config import DUAL_STREAM_VARIANTS, VARIANTS
from core.errors import ValidationError
from core.models import InferenceConfig, ModelSpec, RunConfig, SynthSpec, TrainConfig
from core.objective import MODEL_SPEC_FILE

Model = TypeVar("Model", bound=pydantic.BaseModel)

TRUE_WORDS = ("1", "true", "yes", "on")
FALSE_WORDS = ("0", "false", "no", "off")


# -----------------------------------------------------------------------------
# Config file
# -----------------------------------------------------------------------------
def read_config_file(path: str, flag_kinds: Callable[[str], Optional[bool]]) -> List[str]:
    """
    Turn ``key=value`` lines into command-line tokens placed before the real
    flags, so that anything given on the command line wins. ``flag_kinds``
    answers True for switch flags, False for valued flags and None for
    unknown keys.
    """
    config_path = Path(path)
    if not config_path.is_file():
        raise ValidationError(f"config file not found: {config_path}")

    tokens: List[str] = []
    for line_no, raw in enumerate(config_path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{config_path}:{line_no}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.lstrip("-")
        is_switch = flag_kinds(key)
        if is_switch is None:
            raise ValidationError(f"{config_path}:{line_no}: unknown key '{key}'")
        if is_switch:
            if value.lower() in TRUE_WORDS:
                tokens.append(f"--{key}")
            elif value.lower() not in FALSE_WORDS:
                raise ValidationError(f"{config_path}:{line_no}: '{key}' expects true or false, got {value!r}")
        else:
            tokens.extend([f"--{key}", value])
    return tokens


# -----------------------------------------------------------------------------
# Field checks
# -----------------------------------------------------------------------------
def build_model(model_cls: Type[Model], **values) -> Model:
    """Instantiate a pydantic config, reporting field errors as a ValidationError."""
    try:
        return model_cls(**{k: v for k, v in values.items() if v is not None})
    except pydantic.ValidationError as exc:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or model_cls.__name__}: {err['msg']}" for err in exc.errors()
        )
        raise ValidationError(problems) from exc


def require_file(path: Optional[str], flag: str) -> Path:
    if not path:
        raise ValidationError(f"{flag} is required")
    resolved = Path(path)
    if not resolved.is_file():
        raise ValidationError(f"{flag}: file not found: {resolved}")
    return resolved


def require_out(path: Optional[str], flag: str = "--out") -> Path:
    if not path:
        raise ValidationError(f"{flag} is required")
    resolved = Path(path)
    if resolved.parent != Path("") and resolved.parent.exists() and not resolved.parent.is_dir():
        raise ValidationError(f"{flag}: parent of {resolved} is not a directory")
    return resolved


def parse_values(raw: Optional[str]) -> List[float]:
    if not raw:
        raise ValidationError("--values is required")
    try:
        values = [float(v) for v in raw.split(",") if v.strip()]
    except ValueError as exc:
        raise ValidationError(f"--values: {exc}") from exc
    if not values:
        raise ValidationError("--values is empty")
    if len(set(values)) != len(values):
        raise ValidationError("--values contains duplicates")
    return values


def checkpoint_spec(checkpoint: Path) -> ModelSpec:
    spec_file = checkpoint.parent / MODEL_SPEC_FILE
    if not spec_file.is_file():
        raise ValidationError(f"--ckpt: {MODEL_SPEC_FILE} missing next to {checkpoint}")
    try:
        return ModelSpec.model_validate_json(spec_file.read_text(encoding="utf-8"))
    except pydantic.ValidationError as exc:
        raise ValidationError(f"{spec_file}: {exc.error_count()} invalid field(s)") from exc


def check_stream_flags(variant: str, gamma: Optional[float], stream: Optional[str]) -> None:
    """gamma and the SF stream only exist for dual-stream variants."""
    if variant in DUAL_STREAM_VARIANTS:
        return
    if gamma is not None:
        raise ValidationError(f"--gamma applies to dual-stream variants only, not '{variant}'")
    if stream == "sf":
        raise ValidationError(f"--stream sf needs a dual-stream variant, not '{variant}'")


# -----------------------------------------------------------------------------
# Per-command validation
# -----------------------------------------------------------------------------
def synth_spec(args: argparse.Namespace) -> SynthSpec:
    require_out(args.out)
    return build_model(
        SynthSpec,
        n_videos=args.videos,
        seed=args.seed,
        events=args.events,
        alphabet=args.alphabet,
        sigma=args.sigma,
        paraphrases=args.paraphrases,
        distinct_programs=args.distinct_programs,
        feature_dim=args.feature_dim,
        frames_per_event=args.frames_per_event,
        val_fraction=args.val_fraction,
        test_fraction=args.test_fraction,
    )


def train_config(args: argparse.Namespace) -> TrainConfig:
    return build_model(
        TrainConfig,
        lambda_=args.lambda_,
        lr0=args.lr,
        decay_every=args.decay_every,
        decay_factor=args.decay_factor,
        epochs=args.epochs,
        batch_size=args.batch,
        seed=args.seed,
        hidden=args.hidden,
        variant=args.variant,
        share_va=args.share_va,
        clip_norm=args.clip_norm,
    )


def inference_config(args: argparse.Namespace) -> InferenceConfig:
    return build_model(
        InferenceConfig,
        gamma=args.gamma,
        beam_width=args.beam,
        max_len=args.max_len,
        length_norm=not args.no_length_norm,
        stream=args.stream,
    )


def validate_train(args: argparse.Namespace) -> RunConfig:
    manifest = require_file(args.manifest, "--manifest")
    vocab = require_file(args.vocab, "--vocab")
    out = require_out(args.out)
    train = train_config(args)
    return build_model(
        RunConfig,
        train=train,
        manifest=str(manifest),
        vocab=str(vocab),
        out=str(out),
        variant=train.variant,
        workers=args.workers,
    )


def validate_decode(args: argparse.Namespace) -> RunConfig:
    """Shared by eval and caption: checkpoint, manifest and vocab plus inference flags."""
    checkpoint = require_file(args.ckpt, "--ckpt")
    manifest = require_file(args.manifest, "--manifest")
    vocab = require_file(args.vocab, "--vocab")
    spec = checkpoint_spec(checkpoint)
    check_stream_flags(spec.variant, args.gamma, args.stream)
    # caption writes a file, eval only prints
    out = str(require_out(args.out)) if "out" in vars(args) else None
    return build_model(
        RunConfig,
        inference=inference_config(args),
        manifest=str(manifest),
        vocab=str(vocab),
        checkpoint=str(checkpoint),
        out=out,
        variant=spec.variant,
        split=args.split,
        workers=args.workers,
    )


def validate_sweep(args: argparse.Namespace) -> Tuple[RunConfig, List[float]]:
    if args.param is None:
        raise ValidationError("--param is required (lambda or gamma)")
    manifest = require_file(args.manifest, "--manifest")
    vocab = require_file(args.vocab, "--vocab")
    out = require_out(args.out)
    values = parse_values(args.values)
    if args.param == "gamma":
        check_stream_flags(args.variant, 0.0, args.stream)
        if any(not 0.0 <= v <= 1.0 for v in values):
            raise ValidationError("--values: gamma must lie in [0, 1]")
    elif any(v < 0.0 for v in values):
        raise ValidationError("--values: lambda must be non-negative")
    run = build_model(
        RunConfig,
        train=train_config(args),
        inference=inference_config(args),
        manifest=str(manifest),
        vocab=str(vocab),
        out=str(out),
        variant=args.variant,
        split=args.split,
        workers=args.workers,
    )
    return run, values


def validate_gradcheck(args: argparse.Namespace) -> List[str]:
    if args.tol <= 0.0:
        raise ValidationError("--tol must be positive")
    if args.fd_step <= 0.0:
        raise ValidationError("--fd-step must be positive")
    if args.max_entries < 0:
        raise ValidationError("--max-entries must be >= 0")
    return list(VARIANTS) if args.variant == "all" else [args.variant]


def validate_convert(args: argparse.Namespace) -> None:
    source = require_file(args.input, "--input")
    if source.suffix != ".npy":
        raise ValidationError(f"--input: expected a .npy file, got {source.name}")
    require_out(args.out)
