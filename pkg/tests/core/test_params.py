# tests/core/test_params.py

import numpy as np
import pydantic
import pytest

from core.config import ADAM_LR0
from core.errors import FormatError, MissingGradientError, ParameterError
from core.models import AdamConfig
from core.optimizer import AdamState, adam_step, clip_gradients
from core.params import ParamStore, read_tensor_file


def _store() -> ParamStore:
    store = ParamStore()
    store.add("decoder.w_p.w", np.arange(6.0).reshape(2, 3))
    store.add("decoder.w_p.b", np.array([0.5, -0.5]))
    store.add("encoder.fwd.b", np.array([np.pi]))
    return store


def test_duplicate_and_unknown_names_raise():
    store = _store()
    with pytest.raises(ParameterError):
        store.add("decoder.w_p.b", np.zeros(2))
    with pytest.raises(ParameterError):
        store["decoder.missing"]
    with pytest.raises(ParameterError):
        store.add("bad name!", np.zeros(1))


def test_names_iterate_in_lexicographic_order():
    store = _store()
    assert store.names() == ["decoder.w_p.b", "decoder.w_p.w", "encoder.fwd.b"]
    assert store.with_prefix("decoder.") == ["decoder.w_p.b", "decoder.w_p.w"]
    assert store.size() == 9


def test_checkpoint_save_load_is_bit_exact(tmp_path):
    store = _store()
    path = tmp_path / "params.ckpt"
    store.save(path)

    loaded = ParamStore.load(path)
    assert loaded.names() == store.names()
    for name, tensor in store.items():
        assert loaded[name].data.tobytes() == tensor.data.tobytes()


def test_checkpoint_reader_rejects_bad_magic_and_truncation(tmp_path):
    path = tmp_path / "params.ckpt"
    _store().save(path)
    raw = path.read_bytes()

    bad_magic = tmp_path / "magic.ckpt"
    bad_magic.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError, match="magic"):
        read_tensor_file(bad_magic)

    truncated = tmp_path / "short.ckpt"
    truncated.write_bytes(raw[:-5])
    with pytest.raises(FormatError):
        read_tensor_file(truncated)


def test_checkpoint_reader_rejects_names_that_are_not_utf8(tmp_path):
    path = tmp_path / "params.ckpt"
    _store().save(path)
    raw = bytearray(path.read_bytes())
    # 12-byte header, then the first entry's 4-byte name length and its name
    raw[16:18] = b"\xff\xfe"
    corrupt = tmp_path / "name.ckpt"
    corrupt.write_bytes(bytes(raw))

    with pytest.raises(FormatError, match="invalid entry name"):
        read_tensor_file(corrupt)
    with pytest.raises(FormatError):
        ParamStore.load(corrupt)


def test_snapshot_is_frozen_and_detached():
    store = _store()
    frozen = store.snapshot()
    assert not frozen["decoder.w_p.w"].requires_grad
    with pytest.raises(ValueError):
        frozen["decoder.w_p.w"].data[0, 0] = 1.0
    store["decoder.w_p.w"].data = store["decoder.w_p.w"].data + 1.0
    assert frozen["decoder.w_p.w"].data[0, 0] == 0.0


def test_learning_rate_drops_by_three_every_five_epochs():
    state = AdamState()
    assert state.effective_lr(0) == ADAM_LR0
    assert state.effective_lr(4) == ADAM_LR0
    assert state.effective_lr(5) == pytest.approx(ADAM_LR0 / 3.0)
    assert state.effective_lr(4) / state.effective_lr(5) == pytest.approx(3.0)
    assert state.effective_lr(10) == pytest.approx(ADAM_LR0 / 9.0)


def test_first_adam_step_moves_each_entry_by_lr_against_the_gradient():
    store = _store()
    before = {name: t.data.copy() for name, t in store.items()}
    for _, tensor in store.items():
        tensor.grad = np.full(tensor.shape, 0.25)

    state = AdamState(config=AdamConfig(lr0=0.01))
    lr = adam_step(store, state, epoch=0)

    assert lr == 0.01
    assert state.step == 1
    for name, tensor in store.items():
        np.testing.assert_allclose(before[name] - tensor.data, 0.01, rtol=1e-6)
        assert not tensor.grad.any()


def test_adam_step_without_gradient_raises():
    store = _store()
    store["encoder.fwd.b"].grad = None
    with pytest.raises(MissingGradientError, match="encoder.fwd.b"):
        adam_step(store, AdamState(), epoch=0)


def test_optimizer_state_survives_a_save_load_cycle(tmp_path):
    store = _store()
    state = AdamState(config=AdamConfig(lr0=0.003))
    for _ in range(3):
        for _, tensor in store.items():
            tensor.grad = np.ones(tensor.shape)
        adam_step(store, state, epoch=0)

    path = tmp_path / "opt.adam"
    state.save(path)
    restored = AdamState.load(path)

    assert restored.step == 3
    assert restored.config.lr0 == 0.003
    for name in state.m:
        assert restored.m[name].tobytes() == state.m[name].tobytes()
        assert restored.v[name].tobytes() == state.v[name].tobytes()


def test_clip_gradients_rescales_to_max_norm():
    store = _store()
    for _, tensor in store.items():
        tensor.grad = np.full(tensor.shape, 2.0)

    norm = clip_gradients(store, max_norm=1.0)

    assert norm == pytest.approx(6.0)  # sqrt(9 * 4)
    clipped = np.sqrt(sum(float(np.sum(t.grad ** 2)) for _, t in store.items()))
    assert clipped == pytest.approx(1.0, rel=1e-9)


def test_adam_constants_are_validated():
    with pytest.raises(pydantic.ValidationError):
        AdamConfig(lr0=0.0)
    with pytest.raises(pydantic.ValidationError):
        AdamConfig(beta1=1.0)
    with pytest.raises(pydantic.ValidationError):
        AdamConfig(decay_factor=0.5)


def test_resumed_optimizer_takes_its_schedule_from_the_run(tmp_path):
    state = AdamState(config=AdamConfig(lr0=0.02))
    path = tmp_path / "opt.adam"
    state.save(path)

    restored = AdamState.load(path, AdamConfig(lr0=0.5, decay_every=2, decay_factor=10.0))

    assert restored.config.lr0 == 0.02  # stored learning rate wins
    assert restored.effective_lr(2) == pytest.approx(0.002)
