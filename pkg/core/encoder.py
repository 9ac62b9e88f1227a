"""Bidirectional LSTM (LSTM1) fusing per-frame motion and appearance features."""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError
from .nn import LSTMCellParams, lstm_cell


@dataclass(frozen=True)
class FeatureSequence:
    """Per-frame appearance [n x d_a] and motion [n x d_m] features of one video."""

    appearance: np.ndarray
    motion: np.ndarray

    def __post_init__(self):
        if self.appearance.ndim != 2 or self.motion.ndim != 2:
            raise ShapeError("FeatureSequence", self.appearance.shape, self.motion.shape, detail="expects 2-D")
        if self.appearance.shape[0] != self.motion.shape[0] or self.appearance.shape[0] < 1:
            raise ShapeError("FeatureSequence", self.appearance.shape, self.motion.shape, detail="frame counts")
        if not (np.all(np.isfinite(self.appearance)) and np.all(np.isfinite(self.motion))):
            raise ValueError("feature rows must be finite")

    @property
    def n(self) -> int:
        return self.appearance.shape[0]

    @property
    def dim(self) -> int:
        return self.appearance.shape[1] + self.motion.shape[1]

    def encoder_inputs(self) -> np.ndarray:
        """Rows v_m ∘ v_a in the order LSTM1 consumes them."""
        return np.concatenate([self.motion, self.appearance], axis=1)

    @classmethod
    def from_matrix(cls, frames: np.ndarray, appearance_dim: int) -> "FeatureSequence":
        """Split an [n x (d_a + d_m)] matrix stored as appearance ∘ motion."""
        frames = np.asarray(frames, dtype=np.float64)
        if not 0 < appearance_dim < frames.shape[1]:
            raise ShapeError("FeatureSequence", frames.shape, detail=f"appearance_dim={appearance_dim}")
        return cls(appearance=frames[:, :appearance_dim], motion=frames[:, appearance_dim:])


class EncodedVideo(NamedTuple):
    """V = {x_1..x_n}; row i is the forward hidden state ∘ the backward hidden state."""

    states: Tensor  # [n x 2H]

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[1]


def encode(features: FeatureSequence, forward: LSTMCellParams, backward: LSTMCellParams) -> EncodedVideo:
    """Run LSTM1 left-to-right and right-to-left from zero states and concatenate per frame."""
    if features.dim != forward.input_dim or features.dim != backward.input_dim:
        raise ShapeError("encode", (features.n, features.dim), forward.w_ih.shape, detail="feature dim vs LSTM1 input")

    inputs = Tensor(features.encoder_inputs())
    n = features.n

    fwd_states = _run_direction(inputs, forward, range(n))
    bwd_states = _run_direction(inputs, backward, range(n - 1, -1, -1))

    forward_rows = ad.stack([fwd_states[i] for i in range(n)])
    backward_rows = ad.stack([bwd_states[i] for i in range(n)])
    return EncodedVideo(states=ad.concat([forward_rows, backward_rows], axis=1))


def _run_direction(inputs: Tensor, params: LSTMCellParams, order) -> dict:
    h = Tensor(np.zeros(params.hidden))
    c = Tensor(np.zeros(params.hidden))
    states = {}
    for i in order:
        h, c = lstm_cell(inputs[i], h, c, params)
        states[i] = h
    return states
