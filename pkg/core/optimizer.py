"""Adam with the step-decay learning-rate schedule (lr0 / 3 every 5 epochs)."""

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np
import pydantic

from .errors import FormatError, MissingGradientError
from .models import AdamConfig
from .params import ParamStore, read_tensor_file, write_tensor_file

logger = logging.getLogger(__name__)

_TRAILER = struct.Struct("<Qd")  # step counter, lr0


@dataclass
class AdamState:
    """Step counter and first/second moments; the constants come from ``config``."""

    config: AdamConfig = field(default_factory=AdamConfig)
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def effective_lr(self, epoch: int) -> float:
        return self.config.effective_lr(epoch)

    def save(self, path: Union[str, Path]) -> None:
        entries = []
        for name in sorted(self.m):
            entries.append((f"m.{name}", self.m[name]))
            entries.append((f"v.{name}", self.v[name]))
        write_tensor_file(path, entries, trailer=_TRAILER.pack(self.step, self.config.lr0))

    @classmethod
    def load(cls, path: Union[str, Path], schedule: Optional[AdamConfig] = None) -> "AdamState":
        """Restore moments and step; ``schedule`` supplies every constant except the stored lr0."""
        arrays, trailer = read_tensor_file(path)
        if len(trailer) != _TRAILER.size:
            raise FormatError(str(path), "missing optimizer step trailer")
        step, lr0 = _TRAILER.unpack(trailer)
        base = schedule or AdamConfig()
        try:
            config = AdamConfig(**{**base.model_dump(), "lr0": lr0})
        except pydantic.ValidationError:
            raise FormatError(str(path), f"invalid stored learning rate {lr0!r}") from None
        state = cls(config=config, step=step)
        for key, value in arrays.items():
            moment, name = key.split(".", 1)
            (state.m if moment == "m" else state.v)[name] = value
        return state


def adam_step(params: ParamStore, state: AdamState, epoch: int) -> float:
    """
    One bias-corrected Adam update at the epoch's effective learning rate.
    Gradients are zeroed afterwards. Returns the learning rate used.
    """
    items = params.items()
    for name, tensor in items:
        if tensor.grad is None:
            raise MissingGradientError(name)

    config = state.config
    state.step += 1
    lr = state.effective_lr(epoch)
    correction1 = 1.0 - config.beta1 ** state.step
    correction2 = 1.0 - config.beta2 ** state.step

    for name, tensor in items:
        grad = tensor.grad
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(tensor.data)
            v = np.zeros_like(tensor.data)
        m = config.beta1 * m + (1.0 - config.beta1) * grad
        v = config.beta2 * v + (1.0 - config.beta2) * grad * grad
        state.m[name] = m
        state.v[name] = v

        m_hat = m / correction1
        v_hat = v / correction2
        tensor.data = tensor.data - lr * m_hat / (np.sqrt(v_hat) + config.eps)
        tensor.zero_grad()

    return lr


def clip_gradients(params: ParamStore, max_norm: Optional[float]) -> float:
    """Rescale all gradients so their global L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float(np.sum(t.grad * t.grad)) for _, t in params.items() if t.grad is not None)))
    if max_norm is not None and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for _, tensor in params.items():
            if tensor.grad is not None:
                tensor.grad *= scale
        logger.debug("clipped gradient norm %.4f -> %.4f", total, max_norm)
    return total
