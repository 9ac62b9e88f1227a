# tests/core/test_decoder.py

import numpy as np
import pytest

from core.autodiff import Tape, Tensor
from core.config import END_ID, START_ID
from core.decoder import SF_PREFIX, AttentionTrace, CaptionModel
from core.errors import DistributionError, ShapeError, TokenError
from core.inference import decode_greedy
from core.models import InferenceConfig
from core.objective import mixed_loss
from core.params import ParamStore


def _tie_sf_to_tf(model: CaptionModel) -> CaptionModel:
    """Copy every TF-stream parameter into its SF counterpart (lstm3 -> lstm4)."""
    arrays = {name: tensor.data.copy() for name, tensor in model.params.items()}
    for name in list(arrays):
        if name.startswith(SF_PREFIX):
            source = name.replace("decoder.sf.lstm4", "decoder.tf.lstm3").replace("decoder.sf.", "decoder.tf.")
            arrays[name] = arrays[source].copy()
    model.params.load_arrays(arrays)
    return CaptionModel(model.spec, model.params)


def test_parameter_sets_per_variant(make_model):
    baseline = make_model("baseline").params.names()
    va = make_model("va").params.names()
    dd = make_model("dd").params.names()
    vadd = make_model("vadd").params.names()

    assert not any(n.startswith(SF_PREFIX) for n in baseline + va)
    assert not any(".lstm2." in n for n in baseline + dd)
    assert "decoder.tf.lstm2.w_ih" in va
    assert "decoder.sf.lstm4.w_ih" in dd
    assert {"decoder.sf.lstm2.w_ih", "decoder.sf.att.w_hu"} <= set(vadd)
    # W_e and W_p are registered once and shared by both streams
    assert vadd.count("decoder.w_e") == 1
    assert "decoder.w_p.w" in vadd


def test_shared_visual_attention_drops_sf_copies(make_model):
    names = make_model("vadd", share_va=True).params.names()
    assert not any(n.startswith("decoder.sf.att") or n.startswith("decoder.sf.lstm2") for n in names)
    assert "decoder.sf.lstm4.w_ih" in names


def test_visual_aware_query_is_wider(make_model):
    dd = make_model("dd")
    vadd = make_model("vadd")
    hidden = dd.spec.hidden
    assert dd.params["decoder.tf.att.w_hu"].shape[1] == hidden
    assert vadd.params["decoder.tf.att.w_hu"].shape[1] == hidden + vadd.spec.track_dim


def test_unroll_yields_one_distribution_per_target(make_model, make_features):
    model = make_model("vadd")
    video = model.encode(make_features())
    targets = [5, 6, 7, END_ID]

    p_tf, p_sf = model.unroll_training(video, targets)

    assert p_tf.shape == (4, model.vocab_size)
    assert p_sf.shape == (4, model.vocab_size)
    np.testing.assert_allclose(p_tf.data.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(p_sf.data.sum(axis=1), 1.0, atol=1e-12)


def test_single_stream_unroll_has_no_sf_output(make_model, make_features):
    model = make_model("baseline")
    _, p_sf = model.unroll_training(model.encode(make_features()), [4, END_ID])
    assert p_sf is None
    with pytest.raises(ShapeError):
        model.sf_step(model.initial_state(model.encode(make_features())).tf, Tensor(np.ones(10) / 10), None)


def test_tf_stream_ignores_the_sf_stream(make_model, make_features):
    """TF outputs of a dual-stream model equal those of the same weights without an SF stream."""
    dd = make_model("dd")
    baseline = CaptionModel(
        dd.spec.model_copy(update={"variant": "baseline"}),
        _subset(dd.params, [n for n in dd.params.names() if not n.startswith(SF_PREFIX)]),
    )
    features = make_features()
    targets = [4, 5, END_ID]

    p_dd, _ = dd.unroll_training(dd.encode(features), targets)
    p_base, _ = baseline.unroll_training(baseline.encode(features), targets)
    np.testing.assert_array_equal(p_dd.data, p_base.data)


def test_sf_first_step_matches_tf_when_streams_are_tied(make_model, make_features):
    """The SF stream starts from a one-hot <start>, so tied streams agree at step one."""
    model = _tie_sf_to_tf(make_model("dd"))
    video = model.encode(make_features())
    state = model.initial_state(video)

    _, p_tf = model.tf_step(state.tf, START_ID, video)
    _, p_sf = model.sf_step(state.sf, state.sf.last_p, video)
    np.testing.assert_allclose(p_sf.data, p_tf.data, rtol=1e-12, atol=1e-15)


@pytest.mark.parametrize("k", [0, 1, 2])
def test_teacher_forcing_is_causal_and_sf_never_sees_targets(make_model, make_features, k):
    model = make_model("vadd")
    video = model.encode(make_features())
    targets = [4, 5, 6, 7, END_ID]
    perturbed = list(targets)
    perturbed[k] = 9

    p_tf, p_sf = model.unroll_training(video, targets)
    q_tf, q_sf = model.unroll_training(video, perturbed)

    np.testing.assert_array_equal(p_tf.data[: k + 1], q_tf.data[: k + 1])
    for row in range(k + 1, len(targets)):
        assert not np.array_equal(p_tf.data[row], q_tf.data[row])
    np.testing.assert_array_equal(p_sf.data, q_sf.data)


def _shared_grads(model, features, targets, lambda_):
    model.params.zero_grad()
    with Tape() as tape:
        p_tf, p_sf = model.unroll_training(model.encode(features), targets)
        loss = mixed_loss(p_tf, p_sf, targets, lambda_)
    tape.backward(loss.total)
    return {name: model.params[name].grad.copy() for name in ("decoder.w_e", "decoder.w_p.w", "decoder.w_p.b")}


@pytest.mark.parametrize("variant", ["dd", "vadd"])
def test_shared_embedding_and_projection_learn_from_both_streams(make_model, make_features, variant):
    model = make_model(variant)
    features = make_features()
    targets = [4, 6, END_ID]

    tf_only = _shared_grads(model, features, targets, 0.0)
    both = _shared_grads(model, features, targets, 0.8)
    half = _shared_grads(model, features, targets, 0.4)

    for name, grad in tf_only.items():
        assert np.any(grad != 0.0), name
        sf_part = both[name] - grad
        assert np.abs(sf_part).max() > 1e-8, name
        # the SF share scales with lambda
        np.testing.assert_allclose(half[name] - grad, 0.5 * sf_part, rtol=1e-7, atol=1e-12)


def test_steps_validate_their_inputs(make_model, make_features):
    model = make_model("dd")
    video = model.encode(make_features())
    state = model.initial_state(video)

    with pytest.raises(TokenError):
        model.tf_step(state.tf, model.vocab_size, video)
    with pytest.raises(DistributionError):
        model.sf_step(state.sf, Tensor(np.full(model.vocab_size, 0.5)), video)


def test_attention_trace_records_every_step(make_model, make_features):
    model = make_model("vadd")
    trace = AttentionTrace()
    model.unroll_training(model.encode(make_features()), [4, 5, END_ID], trace)

    assert len(trace.records) == 6  # 3 steps x 2 streams
    assert {stream for stream, _, _ in trace.records} == {"tf", "sf"}
    assert trace.simplex_violations() == 0


def test_visual_aware_reduces_to_plain_attention_when_track_block_is_zero(make_model, make_features):
    """With the track columns of W_hu zeroed, vadd decodes exactly like dd with the same weights."""
    vadd = make_model("vadd")
    hidden = vadd.spec.hidden
    arrays = {name: tensor.data.copy() for name, tensor in vadd.params.items()}
    for stream in ("tf", "sf"):
        arrays[f"decoder.{stream}.att.w_hu"][:, hidden:] = 0.0
    vadd.params.load_arrays(arrays)

    dd_spec = vadd.spec.model_copy(update={"variant": "dd"})
    dd_arrays = {
        name: value[:, :hidden].copy() if name.endswith(".att.w_hu") else value
        for name, value in arrays.items()
        if ".lstm2." not in name
    }
    dd_params = ParamStore()
    for name in sorted(dd_arrays):
        dd_params.add(name, dd_arrays[name])
    dd = CaptionModel(dd_spec, dd_params)

    features = make_features(n=5, seed=3)
    config = InferenceConfig(gamma=0.6, max_len=8)
    vadd_trace, dd_trace = AttentionTrace(), AttentionTrace()
    vadd_tokens = decode_greedy(vadd.encode(features), vadd, config, vadd_trace)
    dd_tokens = decode_greedy(dd.encode(features), dd, config, dd_trace)

    assert vadd_tokens == dd_tokens
    assert len(vadd_trace.records) == len(dd_trace.records)
    for (s1, t1, a1), (s2, t2, a2) in zip(vadd_trace.records, dd_trace.records):
        assert (s1, t1) == (s2, t2)
        np.testing.assert_allclose(a1, a2, rtol=1e-12, atol=1e-15)


def test_frozen_copy_decodes_identically(make_model, make_features):
    model = make_model("vadd")
    frozen = model.frozen()
    features = make_features()
    config = InferenceConfig(max_len=6)
    assert decode_greedy(model.encode(features), model, config) == decode_greedy(frozen.encode(features), frozen, config)
    assert not frozen.params["decoder.w_e"].requires_grad


def _subset(params: ParamStore, names) -> ParamStore:
    subset = ParamStore()
    for name in names:
        subset.add(name, params[name].data.copy())
    return subset
