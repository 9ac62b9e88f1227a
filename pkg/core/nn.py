"""
Neural building blocks parameterized through a ``ParamStore``: LSTM cell,
linear map, hard and soft embedding, and seeded parameter initialization.
"""

import zlib
from typing import Dict, NamedTuple, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import SIMPLEX_TOL
from .errors import DistributionError, ParameterError, ShapeError
from .params import ParamStore

# name -> (shape, fan_in); fan_in None marks a bias (initialized to zero)
ParamShapes = Dict[str, Tuple[Tuple[int, ...], Optional[int]]]


class LSTMCellParams(NamedTuple):
    """Stacked gate weights, rows ordered (input, forget, candidate, output)."""

    w_ih: Tensor  # [4H x I]
    w_hh: Tensor  # [4H x H]
    b: Tensor  # [4H]

    @classmethod
    def from_store(cls, store: ParamStore, prefix: str) -> "LSTMCellParams":
        return cls(store[f"{prefix}.w_ih"], store[f"{prefix}.w_hh"], store[f"{prefix}.b"])

    @property
    def hidden(self) -> int:
        return self.w_hh.shape[1]

    @property
    def input_dim(self) -> int:
        return self.w_ih.shape[1]


class LinearParams(NamedTuple):
    w: Tensor  # [O x I]
    b: Tensor  # [O]

    @classmethod
    def from_store(cls, store: ParamStore, prefix: str) -> "LinearParams":
        return cls(store[f"{prefix}.w"], store[f"{prefix}.b"])


class EmbeddingParams(NamedTuple):
    w_e: Tensor  # [D x E], row k embeds token id k

    @classmethod
    def from_store(cls, store: ParamStore, name: str) -> "EmbeddingParams":
        return cls(store[name])


# -----------------------------------------------------------------------------
# Layers
# -----------------------------------------------------------------------------
def lstm_cell(x: Tensor, h_prev: Tensor, c_prev: Tensor, p: LSTMCellParams) -> Tuple[Tensor, Tensor]:
    """
    One LSTM step. ``x`` may be a single input [I] or a batch of rows [n x I]
    sharing the same parameters (the per-frame visual tracks use this).
    """
    hidden = p.hidden
    if x.shape[-1] != p.input_dim:
        raise ShapeError("lstm_cell", x.shape, p.w_ih.shape, detail="input vs w_ih")
    if h_prev.shape[-1] != hidden or c_prev.shape != h_prev.shape:
        raise ShapeError("lstm_cell", h_prev.shape, c_prev.shape, detail=f"state vs hidden {hidden}")
    if p.w_ih.shape[0] != 4 * hidden or p.b.shape != (4 * hidden,):
        raise ShapeError("lstm_cell", p.w_ih.shape, p.b.shape, detail="gate stacking")

    gates = x @ ad.transpose(p.w_ih) + h_prev @ ad.transpose(p.w_hh) + p.b
    i = ad.sigmoid(gates[..., 0:hidden])
    f = ad.sigmoid(gates[..., hidden:2 * hidden])
    g = ad.tanh(gates[..., 2 * hidden:3 * hidden])
    o = ad.sigmoid(gates[..., 3 * hidden:4 * hidden])

    c = f * c_prev + i * g
    h = o * ad.tanh(c)
    return h, c


def linear(x: Tensor, p: LinearParams) -> Tensor:
    if x.shape[-1] != p.w.shape[1]:
        raise ShapeError("linear", x.shape, p.w.shape)
    return x @ ad.transpose(p.w) + p.b


def embed_hard(token_id: int, e: EmbeddingParams) -> Tensor:
    return ad.embed_lookup(e.w_e, token_id)


def embed_soft(p_dist: Tensor, e: EmbeddingParams) -> Tensor:
    """Probability-weighted mixture of embedding rows, W_e^T p."""
    if p_dist.shape != (e.w_e.shape[0],):
        raise ShapeError("embed_soft", p_dist.shape, e.w_e.shape)
    check_simplex(p_dist.data, "embed_soft")
    return p_dist @ e.w_e


def check_simplex(p: np.ndarray, where: str, tol: float = SIMPLEX_TOL) -> None:
    if np.any(p < -tol) or abs(float(p.sum()) - 1.0) > tol:
        raise DistributionError(f"{where}: input is not a probability vector (sum={float(p.sum()):.8f})")


# -----------------------------------------------------------------------------
# Parameter declaration and initialization
# -----------------------------------------------------------------------------
def lstm_shapes(prefix: str, input_dim: int, hidden: int) -> ParamShapes:
    return {
        f"{prefix}.w_ih": ((4 * hidden, input_dim), input_dim),
        f"{prefix}.w_hh": ((4 * hidden, hidden), hidden),
        f"{prefix}.b": ((4 * hidden,), None),
    }


def linear_shapes(prefix: str, input_dim: int, output_dim: int) -> ParamShapes:
    return {
        f"{prefix}.w": ((output_dim, input_dim), input_dim),
        f"{prefix}.b": ((output_dim,), None),
    }


def init_params(store: ParamStore, shapes: ParamShapes, seed: int) -> None:
    """
    Weights ~ U(-s, s) with s = 1/sqrt(fan_in), biases zero. Each entry draws
    from its own stream seeded by (seed, crc32(name)), so a parameter's
    initial value does not depend on which other parameters exist.
    """
    clashes = [name for name in shapes if name in store]
    if clashes:
        raise ParameterError(f"duplicate parameter name(s): {sorted(clashes)}")

    for name in sorted(shapes):
        shape, fan_in = shapes[name]
        if fan_in is None:
            store.add(name, np.zeros(shape))
            continue
        rng = np.random.default_rng([seed, zlib.crc32(name.encode("utf-8"))])
        bound = 1.0 / np.sqrt(fan_in)
        store.add(name, rng.uniform(-bound, bound, size=shape))
