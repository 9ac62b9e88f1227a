# tests/core/test_gradcheck.py

import numpy as np
import pytest

from core import autodiff as ad
from core.captioning_service import CaptioningService
from core.config import VARIANTS
from core.gradcheck import grad_check
from core.params import ParamStore


def _quadratic_store() -> ParamStore:
    store = ParamStore()
    store.add("w", np.array([[0.3, -1.2], [0.7, 2.0]]))
    store.add("b", np.array([0.1, -0.4]))
    return store


def test_correct_gradients_pass():
    def loss_fn(params):
        return ad.sum_(ad.tanh(params["w"] @ params["b"]) * params["b"])

    report = grad_check(loss_fn, _quadratic_store())

    assert report.passed
    assert report.max_rel_error < 1e-6
    assert {e.name for e in report.entries} == {"w", "b"}


def test_wrong_vector_jacobian_product_is_reported():
    def bad_square(x):
        # derivative of x^2 is 2x; this op claims x
        return ad._emit("bad_square", (x,), x.data ** 2, lambda g: (g * x.data,))

    def loss_fn(params):
        return ad.sum_(bad_square(params["b"])) + ad.sum_(params["w"])

    report = grad_check(loss_fn, _quadratic_store())

    assert not report.passed
    assert report.failed_names() == ["b"]


@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("seed", [0, 1])
def test_model_gradients_pass_for_every_variant(variant, seed):
    report = CaptioningService.gradcheck(variant, seed=seed, max_entries=4)
    assert report.passed, report.failed_names()


def test_default_check_covers_every_entry_of_the_full_model():
    report = CaptioningService.gradcheck("vadd", seed=0)
    model, _, _, _ = CaptioningService.gradcheck_fixture("vadd", seed=0)

    assert report.passed, report.failed_names()
    assert {e.name: e.checked for e in report.entries} == {name: t.data.size for name, t in model.params.items()}


@pytest.mark.slow
@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
def test_model_gradients_pass_for_every_entry(variant, seed):
    report = CaptioningService.gradcheck(variant, seed=seed, max_entries=0)
    assert report.passed, report.failed_names()


def test_absurd_tolerance_reports_failures_without_crashing():
    report = CaptioningService.gradcheck("baseline", seed=0, tolerance=1e-12, max_entries=3)
    assert not report.passed
    assert report.failed_names()
    assert report.tolerance == 1e-12
