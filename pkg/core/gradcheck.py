"""Central finite-difference oracle for analytic gradients."""

import logging
from typing import Callable, Optional

import numpy as np

from .autodiff import Tape, Tensor
from .config import GRADCHECK_DENOM_FLOOR, GRADCHECK_FD_STEP, GRADCHECK_TOL
from .models import GradCheckEntry, GradCheckReport
from .params import ParamStore

logger = logging.getLogger(__name__)

LossFn = Callable[[ParamStore], Tensor]

# Entries whose gradients are tiny are judged on absolute error scaled by this
# floor; float64 central differences carry ~1e-10 of rounding noise.
PASS_FLOOR = 1e-4


def grad_check(
    loss_fn: LossFn,
    params: ParamStore,
    tolerance: float = GRADCHECK_TOL,
    fd_step: float = GRADCHECK_FD_STEP,
    max_entries: Optional[int] = None,
    seed: int = 0,
) -> GradCheckReport:
    """
    Compare analytic gradients of ``loss_fn(params)`` with
    (f(x+h) - f(x-h)) / 2h for every parameter entry.

    Relative error is |a - n| / max(|a|, |n|, 1e-8). An entry fails when its
    absolute error exceeds ``tolerance * max(|a|, |n|, PASS_FLOOR)``.
    ``max_entries`` samples that many entries per parameter (all by default).
    """
    params.zero_grad()
    with Tape() as tape:
        loss = loss_fn(params)
    tape.backward(loss)
    analytic = {name: tensor.grad.copy() for name, tensor in params.items()}
    params.zero_grad()

    rng = np.random.default_rng(seed)
    entries = []
    for name, tensor in params.items():
        size = tensor.data.size
        indices = np.arange(size)
        if max_entries is not None and size > max_entries:
            indices = np.sort(rng.choice(size, size=max_entries, replace=False))

        max_rel = 0.0
        max_abs = 0.0
        failures = 0
        for flat_index in indices:
            position = np.unravel_index(int(flat_index), tensor.shape)
            original = tensor.data[position]

            tensor.data[position] = original + fd_step
            f_plus = loss_fn(params).item()
            tensor.data[position] = original - fd_step
            f_minus = loss_fn(params).item()
            tensor.data[position] = original

            numeric = (f_plus - f_minus) / (2.0 * fd_step)
            exact = float(analytic[name][position])
            abs_error = abs(exact - numeric)
            scale = max(abs(exact), abs(numeric))
            rel_error = abs_error / max(scale, GRADCHECK_DENOM_FLOOR)

            max_rel = max(max_rel, rel_error)
            max_abs = max(max_abs, abs_error)
            if abs_error > tolerance * max(scale, PASS_FLOOR):
                failures += 1

        entries.append(
            GradCheckEntry(
                name=name,
                checked=len(indices),
                max_rel_error=max_rel,
                max_abs_error=max_abs,
                failures=failures,
            )
        )
        if failures:
            logger.debug("grad check: %s failed on %d/%d entries", name, failures, len(indices))

    return GradCheckReport(tolerance=tolerance, fd_step=fd_step, entries=entries)
