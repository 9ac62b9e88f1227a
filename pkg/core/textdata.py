"""
Caption preprocessing, vocabulary, manifests and binary feature files.
"""

import logging
import struct
import unicodedata
from collections import Counter
from pathlib import Path
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Union

import numpy as np

from .config import (
    DECODER_STEPS,
    END_ID,
    FEATURE_MAGIC,
    FEATURE_VERSION,
    MAX_CAPTION_WORDS,
    PAD_ID,
    RESERVED_TOKENS,
    START_ID,
    UNK_ID,
    VOCAB_THRESHOLD,
)
from .encoder import FeatureSequence
from .errors import FormatError, TokenError
from .models import CaptionRecord, ManifestEntry

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

_FEATURE_HEADER = struct.Struct("<4sIII")


# -----------------------------------------------------------------------------
# Captions
# -----------------------------------------------------------------------------
def preprocess(raw: str) -> Optional[List[str]]:
    """
    Lowercase, drop every character in a Unicode punctuation category (P*),
    split on whitespace and keep at most 18 words. Returns None (and warns)
    when nothing is left.
    """
    lowered = raw.lower()
    cleaned = "".join(ch for ch in lowered if not unicodedata.category(ch).startswith("P"))
    tokens = cleaned.split()
    if not tokens:
        logger.warning("skipping caption that is empty after cleaning: %r", raw)
        return None
    return tokens[:MAX_CAPTION_WORDS]


class EncodedCaption(NamedTuple):
    inputs: List[int]  # <start>, w_1..w_k, padded to 19
    targets: List[int]  # w_1..w_k, <end>, padded to 19
    mask: List[bool]  # True on real (non-<pad>) target positions

    @property
    def length(self) -> int:
        return sum(self.mask)

    def trimmed_targets(self) -> tuple:
        return tuple(self.targets[: self.length])


class Vocabulary:
    """Dense token ids; the four reserved tokens come first, then (-frequency, token) order."""

    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[: len(RESERVED_TOKENS)]) != RESERVED_TOKENS:
            raise TokenError(f"vocabulary must start with {RESERVED_TOKENS}")
        if len(set(tokens)) != len(tokens):
            raise TokenError("vocabulary contains duplicate tokens")
        self.token_of: List[str] = list(tokens)
        self.id_of: Dict[str, int] = {token: i for i, token in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.token_of)

    def __contains__(self, token: str) -> bool:
        return token in self.id_of

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.token_of == other.token_of

    @classmethod
    def build(cls, records: Iterable[CaptionRecord], threshold: int = VOCAB_THRESHOLD) -> "Vocabulary":
        """Count words over the given (training) records and keep those seen >= threshold times."""
        counts: Counter = Counter()
        for record in records:
            for caption in record.captions:
                counts.update(caption)
        for reserved in RESERVED_TOKENS:
            counts.pop(reserved, None)
        kept = sorted((t for t, c in counts.items() if c >= threshold), key=lambda t: (-counts[t], t))
        logger.info("vocabulary: %d of %d word types kept (threshold %d)", len(kept), len(counts), threshold)
        return cls(list(RESERVED_TOKENS) + kept)

    def encode(self, tokens: Sequence[str]) -> List[int]:
        return [self.id_of.get(token, UNK_ID) for token in tokens]

    def decode(self, ids: Iterable[int]) -> List[str]:
        """Map ids back to words, stopping at <end> and dropping <pad>/<start>."""
        words = []
        for token_id in ids:
            if token_id == END_ID:
                break
            if token_id in (PAD_ID, START_ID):
                continue
            words.append(self.token_of[token_id])
        return words

    def save(self, path: PathLike) -> None:
        Path(path).write_text("\n".join(self.token_of) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: PathLike) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([line for line in lines if line])


def encode_caption(tokens: Sequence[str], vocab: Vocabulary) -> EncodedCaption:
    if len(tokens) > MAX_CAPTION_WORDS:
        raise TokenError(f"caption has {len(tokens)} words, at most {MAX_CAPTION_WORDS} allowed")
    ids = vocab.encode(tokens)
    pad = DECODER_STEPS - (len(ids) + 1)
    inputs = [START_ID] + ids + [PAD_ID] * pad
    targets = ids + [END_ID] + [PAD_ID] * pad
    mask = [True] * (len(ids) + 1) + [False] * pad
    return EncodedCaption(inputs=inputs, targets=targets, mask=mask)


def decode_caption(ids: Iterable[int], vocab: Vocabulary) -> List[str]:
    return vocab.decode(ids)


# -----------------------------------------------------------------------------
# Manifests
# -----------------------------------------------------------------------------
def read_manifest(path: PathLike) -> List[CaptionRecord]:
    """Parse a JSON-lines manifest; relative feature paths resolve against its directory."""
    path = Path(path)
    records: List[CaptionRecord] = []
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        entry = ManifestEntry.model_validate_json(line)
        captions = [tokens for tokens in (preprocess(raw) for raw in entry.captions) if tokens]
        if not captions:
            logger.warning("%s:%d: video '%s' has no usable caption; skipped", path, line_no, entry.video_id)
            continue
        feature_path = Path(entry.feature_path)
        if not feature_path.is_absolute():
            feature_path = path.parent / feature_path
        records.append(
            CaptionRecord(
                video_id=entry.video_id,
                feature_path=str(feature_path),
                captions=captions,
                split=entry.split,
            )
        )
    return records


def write_manifest(path: PathLike, entries: Iterable[ManifestEntry]) -> None:
    lines = [entry.model_dump_json() for entry in entries]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def split_records(records: Iterable[CaptionRecord], split: str) -> List[CaptionRecord]:
    return [r for r in records if r.split == split]


# -----------------------------------------------------------------------------
# Feature files
# -----------------------------------------------------------------------------
def write_features(path: PathLike, frames: np.ndarray) -> None:
    """Layout: magic "VFEA", version u32, n u32, d u32, then n*d little-endian f32."""
    frames = np.asarray(frames)
    if frames.ndim != 2 or frames.shape[0] < 1:
        raise FormatError(str(path), f"expected an [n x d] matrix, got shape {frames.shape}")
    n, d = frames.shape
    payload = _FEATURE_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, n, d)
    payload += np.ascontiguousarray(frames, dtype="<f4").tobytes()
    Path(path).write_bytes(payload)


def read_features(path: PathLike) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _FEATURE_HEADER.size:
        raise FormatError(str(path), "truncated header")
    magic, version, n, d = _FEATURE_HEADER.unpack_from(raw, 0)
    if magic != FEATURE_MAGIC:
        raise FormatError(str(path), f"bad magic {magic!r}")
    if version != FEATURE_VERSION:
        raise FormatError(str(path), f"unsupported version {version}")
    expected = _FEATURE_HEADER.size + 4 * n * d
    if len(raw) != expected:
        raise FormatError(str(path), f"expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", count=n * d, offset=_FEATURE_HEADER.size)
    return data.astype(np.float64).reshape(n, d)


def sample_frames(frames: np.ndarray, count: int) -> np.ndarray:
    """Uniform stride down to exactly ``count`` rows; short videos repeat their last frame."""
    n = frames.shape[0]
    if n >= count:
        index = (np.arange(count) * n) // count
    else:
        index = np.concatenate([np.arange(n), np.full(count - n, n - 1)])
    return frames[index]


def load_features(
    path: PathLike,
    appearance_dim: int,
    sample_count: Optional[int] = None,
) -> FeatureSequence:
    frames = read_features(path)
    if sample_count is not None and frames.shape[0] != sample_count:
        logger.debug("%s: resampling %d frames to %d", path, frames.shape[0], sample_count)
        frames = sample_frames(frames, sample_count)
    return FeatureSequence.from_matrix(frames, appearance_dim)


def convert_numpy_features(source: PathLike, target: PathLike) -> int:
    """Convert an externally produced ``.npy`` [n x d] dump into a VFEA file; returns n."""
    frames = np.load(source)
    write_features(target, frames)
    return int(frames.shape[0])
