"""
Temporal attention over encoded frames.

``attend`` is the conventional additive attention. The visual-aware variant
keeps one LSTM2 track per frame (all frames share the same LSTM2 weights);
each track accumulates the attended feature alpha_i * x_i of its frame, and
the sum of the track hidden states joins the decoder hidden state as the
attention query of the next step.
"""

from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import EncodedVideo
from .errors import ShapeError
from .nn import LSTMCellParams, ParamShapes, lstm_cell
from .params import ParamStore


class AttentionParams(NamedTuple):
    w_vu: Tensor  # [A x 2H]
    w_hu: Tensor  # [A x Q]
    w_u: Tensor  # [A]

    @classmethod
    def from_store(cls, store: ParamStore, prefix: str) -> "AttentionParams":
        return cls(store[f"{prefix}.w_vu"], store[f"{prefix}.w_hu"], store[f"{prefix}.w_u"])

    @property
    def query_dim(self) -> int:
        return self.w_hu.shape[1]


class AttentionOutput(NamedTuple):
    scores: Tensor  # u_t [n]
    weights: Tensor  # alpha_t [n]
    context: Tensor  # c_t [2H]


class VisualTrackState(NamedTuple):
    hidden: Tensor  # [n x H_v], one row per frame
    cell: Tensor  # [n x H_v]
    summed: Tensor  # [H_v], row-sum of hidden

    @classmethod
    def zeros(cls, n: int, track_dim: int) -> "VisualTrackState":
        return cls(
            hidden=Tensor(np.zeros((n, track_dim))),
            cell=Tensor(np.zeros((n, track_dim))),
            summed=Tensor(np.zeros(track_dim)),
        )


def attention_shapes(prefix: str, value_dim: int, query_dim: int, inner_dim: int) -> ParamShapes:
    return {
        f"{prefix}.w_vu": ((inner_dim, value_dim), value_dim),
        f"{prefix}.w_hu": ((inner_dim, query_dim), query_dim),
        f"{prefix}.w_u": ((inner_dim,), inner_dim),
    }


def attend(video: EncodedVideo, query: Tensor, p: AttentionParams) -> AttentionOutput:
    """u_i = w_u . tanh(W_vu x_i + W_hu q); alpha = softmax(u); c = sum_i alpha_i x_i."""
    if video.n == 0:
        raise ShapeError("attend", video.states.shape, detail="no frames")
    if query.shape != (p.query_dim,):
        raise ShapeError("attend", query.shape, p.w_hu.shape, detail="query vs W_hu")
    if video.dim != p.w_vu.shape[1]:
        raise ShapeError("attend", video.states.shape, p.w_vu.shape, detail="frames vs W_vu")

    keys = video.states @ ad.transpose(p.w_vu)  # [n x A]
    projected_query = p.w_hu @ query  # [A]
    scores = ad.tanh(keys + projected_query) @ p.w_u
    weights = ad.softmax_lastdim(scores)
    context = weights @ video.states
    return AttentionOutput(scores=scores, weights=weights, context=context)


def track_update(
    state: VisualTrackState,
    weights: Tensor,
    video: EncodedVideo,
    lstm2: LSTMCellParams,
) -> VisualTrackState:
    """Advance every frame's track with its attended feature alpha_i * x_i (shared LSTM2)."""
    n = video.n
    if weights.shape != (n,) or state.hidden.shape[0] != n:
        raise ShapeError("track_update", weights.shape, state.hidden.shape, detail=f"{n} frames")
    attended = ad.reshape(weights, (n, 1)) * video.states
    hidden, cell = lstm_cell(attended, state.hidden, state.cell, lstm2)
    return VisualTrackState(hidden=hidden, cell=cell, summed=ad.sum_(hidden, axis=0))


def visual_aware_attend(
    video: EncodedVideo,
    query_h: Tensor,
    state: VisualTrackState,
    p: AttentionParams,
) -> AttentionOutput:
    """Attention queried by h_{t-1} ∘ sum_i h^v_{i,t-1}; the caller then runs ``track_update``."""
    return attend(video, ad.concat([query_h, state.summed]), p)
