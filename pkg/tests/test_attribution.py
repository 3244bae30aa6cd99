import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deeplift.attribution import (
    AttributionResult,
    LayerInput,
    MultiplierState,
    _step,
    as_rules,
    attribute_multi_reference,
    compute_deltas,
    deeplift,
    linear_rule,
    normalize_softmax_contributions,
    rescale_split,
    reveal_cancel_split,
    rule_preset,
    select_target,
)
from deeplift.baselines import gradient_times_input
from deeplift.errors import DataError, MissingRule, ReferenceMismatch, TargetOutOfRange
from deeplift.fixtures import linear_model, min_network, saturation_network, threshold_unit
from deeplift.graph import Conv1D, Dense, Flatten, Graph, MaxPool, ReLU, Sigmoid, Softmax, Tanh, forward
from deeplift.trainer import init_graph, load_config


def layer_input(x0, dp, dn):
    x0, dp, dn = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (x0, dp, dn))
    return LayerInput(x0 + dp + dn, x0, dp + dn, dp, dn)


def deltas(g, x, ref, rules="rescale"):
    return compute_deltas(g, forward(g, np.asarray(x, float)[None]), forward(g, np.asarray(ref, float)[None]),
                          as_rules(g, rules))


# ------------------------------------------------------------ deltas


def test_linear_split_example():
    g = linear_model([3.0, -2.0])
    rec = deltas(g, [2.0, 1.0], [0.0, 0.0])
    assert rec.delta_pos[1][0, 0] == 6.0
    assert rec.delta_neg[1][0, 0] == -2.0
    assert rec.delta[1][0, 0] == 4.0


def test_reveal_cancel_split_example():
    dy_pos, dy_neg, m_pos, m_neg = reveal_cancel_split(ReLU(), layer_input(0.0, 2.0, -3.0))
    assert dy_pos[0] == 1.0 and dy_neg[0] == -1.0
    assert m_pos[0] == 0.5
    assert abs(m_neg[0] - 1 / 3) < 1e-15


def test_zero_delta_layer():
    g = Graph((Dense([[1.0, -2.0], [0.5, 3.0]], [0.1, -0.2]), Tanh(), Dense([[1.0], [1.0]], [0.0])), (2,))
    rec = deltas(g, [0.7, -0.3], [0.7, -0.3], "revealcancel")
    for arrays in (rec.delta, rec.delta_pos, rec.delta_neg):
        assert all(not np.any(a) for a in arrays)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 100_000))
def test_delta_record_split_invariants(seed):
    rng = np.random.default_rng(seed)
    g = Graph((Dense(rng.normal(size=(3, 5)), rng.normal(size=5)), ReLU(),
               Dense(rng.normal(size=(5, 4)), rng.normal(size=4)), Sigmoid(),
               Dense(rng.normal(size=(4, 2)), rng.normal(size=2))), (3,))
    rules = {1: "revealcancel", 3: "rescale"} if seed % 2 else "revealcancel"
    rec = deltas(g, rng.normal(size=3), rng.normal(size=3), rules)
    for d, p, n in zip(rec.delta, rec.delta_pos, rec.delta_neg):
        assert np.all(p >= 0) and np.all(n <= 0)
        np.testing.assert_allclose(p + n, d, atol=1e-9, rtol=0)


def test_missing_rule():
    g = saturation_network()
    with pytest.raises(MissingRule):
        deeplift(g, [1.0, 1.0], None, {})


# ------------------------------------------------------------ linear rule


def test_linear_contributions():
    res = deeplift(linear_model([3.0, -2.0]), [2.0, 1.0])
    assert res.scores.tolist() == [6.0, -2.0]
    assert res.delta_t == 4.0


def test_linear_zero_delta_uses_half_weight_per_channel():
    layer = Dense([[4.0]], [0.0])
    inp = layer_input(0.0, 0.0, 0.0)
    inp = LayerInput(inp.x[None], inp.x0[None], inp.delta[None], inp.delta_pos[None], inp.delta_neg[None])
    through_pos = linear_rule(layer, inp, MultiplierState(np.ones((1, 1)), np.zeros((1, 1))))
    through_neg = linear_rule(layer, inp, MultiplierState(np.zeros((1, 1)), np.ones((1, 1))))
    assert through_pos.m_pos[0, 0] == 2.0 and through_neg.m_neg[0, 0] == 2.0


def test_bias_only_change_gets_no_importance():
    g = Graph((Dense([[1.0, -1.0], [2.0, 0.5]], [0.3, -0.1]), ReLU(), Dense([[1.0], [2.0]], [0.0])), (2,))
    x = np.array([0.4, 0.9])
    res = deeplift(g, x, x)
    assert np.all(np.isfinite(res.scores)) and not np.any(res.scores)
    # a different bias shifts the output but scores still decompose the new delta
    g2 = g.with_layers((Dense([[1.0, -1.0], [2.0, 0.5]], [2.0, -0.1]),) + g.layers[1:])
    res2 = deeplift(g2, x, np.zeros(2))
    assert abs(res2.scores.sum() - res2.delta_t) < 1e-12


def test_single_affine_layer_equals_weighted_delta():
    rng = np.random.default_rng(4)
    w = rng.normal(size=6)
    x, ref = rng.normal(size=6), rng.normal(size=6)
    res = deeplift(linear_model(w, 0.7), x, ref)
    assert np.array_equal(res.scores, w * (x - ref))
    assert np.array_equal(res.scores, gradient_times_input(linear_model(w, 0.7), x, ref).scores)


def test_linear_network_matches_gradient_times_input():
    rng = np.random.default_rng(5)
    g = Graph((Dense(rng.normal(size=(4, 5)), rng.normal(size=5)), Dense(rng.normal(size=(5, 2)), rng.normal(size=2))),
              (4,))
    x, ref = rng.normal(size=4), rng.normal(size=4)
    for target in (0, 1):
        np.testing.assert_allclose(deeplift(g, x, ref, target=target).scores,
                                   gradient_times_input(g, x, ref, target).scores, rtol=1e-12, atol=1e-14)


# ----------------------------------------------------------- rescale


def test_saturation_rescale_multiplier():
    g = saturation_network()
    act, ref = forward(g, np.array([[1.0, 1.0]])), forward(g, np.zeros((1, 2)))
    inp = LayerInput(act[1], ref[1], act[1] - ref[1], np.zeros((1, 1)), act[1] - ref[1])
    _, _, m_pos, m_neg = rescale_split(ReLU(), inp)
    assert m_neg[0, 0] == 0.5
    # from the ReLU output to y the multiplier is the output weight, -1
    res = deeplift(g, [1.0, 1.0], [0.0, 0.0])
    assert res.scores.tolist() == [0.5, 0.5]


def test_threshold_unit_rescale():
    assert abs(deeplift(threshold_unit(), [10.01]).scores[0] - 0.01) < 1e-12


def test_rescale_fallback_to_derivative():
    _, _, m_pos, m_neg = rescale_split(Sigmoid(), layer_input(0.0, 0.0, 0.0))
    assert m_pos[0] == 0.25 and m_neg[0] == 0.25


@pytest.mark.parametrize("layer", [ReLU(), Sigmoid(), Tanh()])
@pytest.mark.parametrize("x0", [-1.3, 0.4, 2.0])
def test_rescale_converges_to_derivative(layer, x0):
    for step in (1e-6, 1e-8, 1e-10):
        _, _, m, _ = rescale_split(layer, layer_input(x0, step, 0.0))
        assert abs(m[0] - layer.deriv(np.array([x0]))[0]) < 1e-4


@settings(max_examples=50, deadline=None)
@given(st.floats(-4, 4), st.floats(-4, 4))
def test_rescale_consistency(x0, dx):
    if abs(dx) < 1e-6:
        return
    for layer in (ReLU(), Sigmoid(), Tanh()):
        dp, dn = max(dx, 0.0), min(dx, 0.0)
        dy_pos, dy_neg, m_pos, m_neg = rescale_split(layer, layer_input(x0, dp, dn))
        dy = layer.fn(np.array([x0 + dx])) - layer.fn(np.array([x0]))
        assert abs(m_pos[0] * dp + m_neg[0] * dn - dy[0]) < 1e-9


# ------------------------------------------------------- reveal-cancel


def test_min_network_reveal_cancel():
    assert deeplift(min_network(), [2.0, 4.0], None, "revealcancel").scores.tolist() == [1.0, 1.0]


def test_min_network_rescale():
    assert deeplift(min_network(), [2.0, 4.0], None, "rescale").scores.tolist() == [2.0, 0.0]
    assert deeplift(min_network(), [4.0, 2.0], None, "rescale").scores.tolist() == [0.0, 2.0]


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(0.01, 3))
def test_reveal_cancel_without_negative_part_equals_rescale(x0, dp):
    for layer in (ReLU(), Sigmoid(), Tanh()):
        inp = layer_input(x0, dp, 0.0)
        rc = reveal_cancel_split(layer, inp)
        rs = rescale_split(layer, inp)
        np.testing.assert_allclose(rc[2], rs[2], rtol=1e-12)
        np.testing.assert_allclose(rc[0] + rc[1], rs[0] + rs[1], rtol=1e-12, atol=1e-15)


def test_reveal_cancel_near_zero_part_keeps_total():
    inp = layer_input(0.5, 1e-9, -1.0)
    dy_pos, dy_neg, m_pos, _ = reveal_cancel_split(Tanh(), inp)
    total = np.tanh(0.5 + 1e-9 - 1.0) - np.tanh(0.5)
    assert abs(dy_pos[0] + dy_neg[0] - total) < 1e-15
    assert np.isfinite(m_pos[0])


# ---------------------------------------------------- layer-wise sums


def test_reconstruction_at_every_layer():
    rng = np.random.default_rng(6)
    g = Graph((Conv1D(rng.normal(size=(3, 2, 3)), rng.normal(size=3)), ReLU(), Flatten(),
               Dense(rng.normal(size=(12, 4)), rng.normal(size=4)), Tanh(),
               Dense(rng.normal(size=(4, 2)), rng.normal(size=2))), (6, 2))
    rules = as_rules(g, "fc-rc-conv-rs")
    x, ref = rng.normal(size=(1, 6, 2)), rng.normal(size=(1, 6, 2))
    act, r = forward(g, x), forward(g, ref)
    rec = compute_deltas(g, act, r, rules)
    p = len(g.layers)
    seed = np.zeros((1, 2))
    seed[0, 1] = 1.0
    state = MultiplierState(seed, seed.copy())
    delta_t = rec.delta[p][0, 1]
    for i in reversed(range(p)):
        inp = LayerInput(act[i], r[i], rec.delta[i], rec.delta_pos[i], rec.delta_neg[i])
        state = _step(g, i, rules, inp, state)
        total = np.sum(state.m_pos * rec.delta_pos[i] + state.m_neg * rec.delta_neg[i])
        assert abs(total - delta_t) < 1e-9 * max(1, abs(delta_t))


def test_maxpool_graph_runs():
    rng = np.random.default_rng(7)
    g = Graph((Conv1D(rng.normal(size=(2, 1, 2)), np.zeros(2)), ReLU(), MaxPool(2), Flatten(),
               Dense(rng.normal(size=(12, 1)), np.zeros(1))), (13, 1))
    res = deeplift(g, rng.normal(size=(13, 1)))
    assert res.scores.shape == (13, 1) and np.all(np.isfinite(res.scores))


# ------------------------------------------------------------- targets


def softmax_model(n_classes=10):
    rng = np.random.default_rng(8)
    return Graph((Dense(rng.normal(size=(5, n_classes)), rng.normal(size=n_classes)), Softmax()), (5,))


def test_select_target_logit_by_default():
    t = select_target(softmax_model(), 3)
    assert (t.position, t.index) == (1, 3)
    assert select_target(softmax_model(), 3, use_final=True).position == 2


def test_select_target_plain_output():
    t = select_target(linear_model([1.0, 2.0]), 0)
    assert (t.position, t.index) == (1, 0)


def test_select_target_out_of_range():
    with pytest.raises(TargetOutOfRange):
        select_target(softmax_model(), 10)


def test_softmax_is_not_propagated():
    with pytest.raises(MissingRule):
        deeplift(softmax_model(), np.ones(5), use_final=True)


def test_fc_rc_conv_rs_preset():
    cfg = load_config("genomic")
    g = init_graph(cfg["architecture"], cfg["input_shape"])
    rules = rule_preset(g, "fc-rc-conv-rs")
    for i, rule in rules.items():
        expect = "rescale" if isinstance(g.layers[i - 1], Conv1D) else "revealcancel"
        assert rule == expect
    assert set(rules.values()) == {"rescale", "revealcancel"}


def test_unknown_preset():
    with pytest.raises(DataError):
        rule_preset(min_network(), "nope")


# -------------------------------------------------------- normalization


def results(rows):
    return [AttributionResult(np.asarray(r, float), c, "m", "zeros", 0.0) for c, r in enumerate(rows)]


def test_normalize_equal_contributions():
    out = normalize_softmax_contributions(results([[2.5], [2.5], [2.5]]))
    assert [r.scores.tolist() for r in out] == [[0.0], [0.0], [0.0]]


def test_normalize_example():
    out = normalize_softmax_contributions(results([[3.0], [1.0], [-1.0]]))
    assert [r.scores[0] for r in out] == [2.0, 0.0, -2.0]


def test_normalize_class_count_mismatch():
    with pytest.raises(DataError):
        normalize_softmax_contributions(results([[1.0], [2.0]]), n_classes=3)


def test_normalization_keeps_best_pairwise_difference():
    rng = np.random.default_rng(9)
    rows = rng.normal(size=(10, 30))
    out = np.stack([r.scores for r in normalize_softmax_contributions(results(rows))])
    for c in range(10):
        assert np.array_equal(np.argmax(rows[c] - rows, axis=0), np.argmax(out[c] - out, axis=0))


# ------------------------------------------------------ multi-reference


def test_multi_reference():
    g = min_network()
    x = np.array([1.0, 3.0])
    r1, r2 = np.array([0.5, 0.0]), np.array([-1.0, 2.0])
    single = deeplift(g, x, r1, "revealcancel")
    assert np.array_equal(attribute_multi_reference(g, x, [r1], "revealcancel").scores, single.scores)
    assert np.array_equal(attribute_multi_reference(g, x, [r1, r1, r1], "revealcancel").scores, single.scores)
    both = attribute_multi_reference(g, x, [r1, r2], "revealcancel")
    other = deeplift(g, x, r2, "revealcancel")
    np.testing.assert_allclose(both.scores, (single.scores + other.scores) / 2, rtol=1e-15)
    assert abs(both.delta_t - (single.delta_t + other.delta_t) / 2) < 1e-15


def test_multi_reference_empty():
    with pytest.raises(ReferenceMismatch):
        attribute_multi_reference(min_network(), [1.0, 2.0], [])


# ---------------------------------------------------------------- misc


def test_batch_matches_single():
    rng = np.random.default_rng(10)
    g = Graph((Dense(rng.normal(size=(3, 4)), rng.normal(size=4)), Tanh(), Dense(rng.normal(size=(4, 1)), [0.0])),
              (3,))
    xs = rng.normal(size=(5, 3))
    batch = deeplift(g, xs, None, "revealcancel")
    for i in range(5):
        np.testing.assert_allclose(batch.scores[i], deeplift(g, xs[i], None, "revealcancel").scores, rtol=1e-14)


def test_result_json_round_trip():
    res = deeplift(min_network(), [2.0, 4.0], None, "revealcancel")
    d = json.loads(res.to_json())
    assert set(d) >= {"method", "target", "reference", "delta_t", "scores", "shape"}
    back = AttributionResult.from_dict(d)
    assert np.array_equal(back.scores, res.scores) and back.delta_t == res.delta_t
