# tests/core/conftest.py

import numpy as np
import pytest

from core.decoder import CaptionModel
from core.encoder import FeatureSequence
from core.models import ModelSpec, SynthSpec
from core.synth import gen_synth
from core.textdata import Vocabulary, read_manifest, split_records

APPEARANCE_DIM = 3
MOTION_DIM = 2


@pytest.fixture
def make_model():
    """Factory for small models: H=6, D=10, feature dims 3 + 2."""

    def build(variant: str = "vadd", seed: int = 0, hidden: int = 6, vocab_size: int = 10, **extra) -> CaptionModel:
        spec = ModelSpec(
            variant=variant,
            hidden=hidden,
            vocab_size=vocab_size,
            appearance_dim=APPEARANCE_DIM,
            motion_dim=MOTION_DIM,
            seed=seed,
            **extra,
        )
        return CaptionModel.build(spec)

    return build


@pytest.fixture
def make_features():
    def build(n: int = 4, seed: int = 0) -> FeatureSequence:
        rng = np.random.default_rng([seed, 99])
        return FeatureSequence(
            appearance=rng.normal(size=(n, APPEARANCE_DIM)),
            motion=rng.normal(size=(n, MOTION_DIM)),
        )

    return build


@pytest.fixture
def synth_corpus(tmp_path):
    """12-video synthetic corpus plus a threshold-1 vocabulary built from its training split."""
    spec = SynthSpec(n_videos=12, alphabet=3, events=2, feature_dim=4, seed=5, val_fraction=0.2, test_fraction=0.2)
    manifest = gen_synth(spec, tmp_path / "corpus")
    vocab = Vocabulary.build(split_records(read_manifest(manifest), "train"), threshold=1)
    vocab_path = tmp_path / "vocab.txt"
    vocab.save(vocab_path)
    return manifest, vocab_path
