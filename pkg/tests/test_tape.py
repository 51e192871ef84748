import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import fd_gradient, rel_err
from refgame import tape as T
from refgame.errors import DimensionError, TapeReuseError
from refgame.params import ParamStore
from refgame.tape import GruParams, Tape, Var


def test_affine_zero_weights():
    store = ParamStore(np.random.default_rng(0))
    W = store.zeros("W", 2, 2)
    b = store.zeros("b", 2)
    out = T.affine(np.array([1.0, 1.0]), W, b)
    assert np.array_equal(out.value, np.zeros(2))


def test_affine_identity_with_bias():
    store = ParamStore(np.random.default_rng(0))
    W = store.from_values("W", np.eye(2))
    b = store.from_values("b", np.array([0.5, -0.5]))
    out = T.affine(np.array([1.0, 0.0]), W, b)
    assert np.allclose(out.value, [1.5, -0.5], atol=0, rtol=0)


def test_affine_shape_mismatch_names_tensors():
    store = ParamStore(np.random.default_rng(0))
    W = store.zeros("weights", 2, 3)
    b = store.zeros("bias", 2)
    with pytest.raises(DimensionError, match="weights"):
        T.affine(np.zeros(4), W, b)


def test_affine_gradients_match_finite_differences():
    rng = np.random.default_rng(42)
    store = ParamStore(rng)
    W = store.from_values("W", rng.normal(size=(3, 4)))
    b = store.from_values("b", rng.normal(size=3))
    x0 = rng.normal(size=4)
    x_holder = Var(x0.copy())

    def loss_value():
        return float(np.sum(W.values @ x_holder.value + b.values))

    with Tape() as tape:
        out = T.affine(x_holder, W, b)
        total = T.sum_all(out)
    tape.backward(total)

    assert rel_err(W.grad, fd_gradient(loss_value, W.values)) <= 1e-6
    assert rel_err(b.grad, fd_gradient(loss_value, b.values)) <= 1e-6
    assert rel_err(x_holder.grad, fd_gradient(loss_value, x_holder.value)) <= 1e-6


def test_elementwise_values():
    assert T.elementwise("sigmoid", np.zeros(1)).value[0] == 0.5
    assert T.elementwise("tanh", np.zeros(1)).value[0] == 0.0
    assert T.elementwise("relu", np.array([-1.0])).value[0] == 0.0
    # evaluate 1/(1+e^-2) independently
    expected = 1.0 / (1.0 + math.exp(-2.0))
    got = float(T.elementwise("sigmoid", np.array([2.0])).value[0])
    assert abs(got - expected) < 1e-12
    assert round(got, 6) == 0.880797


def test_softmax_uniform_for_constant_logits():
    for c in (-3.0, 0.0, 7.5):
        out = T.softmax(np.full(3, c)).value
        assert np.allclose(out, np.full(3, 1.0 / 3.0), atol=1e-15)


def test_softmax_closed_form():
    out = T.softmax(np.array([0.0, math.log(3.0)])).value
    assert np.allclose(out, [0.25, 0.75], atol=1e-12)


def test_softmax_empty_errors():
    with pytest.raises(DimensionError):
        T.softmax(np.zeros(0))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=1, max_size=8),
       st.floats(-30, 30))
def test_softmax_sums_to_one_and_shift_invariant(logits, k):
    logits = np.asarray(logits)
    out = T.softmax(logits).value
    assert abs(out.sum() - 1.0) <= 1e-12
    assert np.all(out >= 0)
    shifted = T.softmax(logits + k).value
    assert np.abs(out - shifted).max() <= 1e-12


def test_softmax_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    x = Var(rng.normal(size=5))
    w = rng.normal(size=5)

    def loss_value():
        e = np.exp(x.value - x.value.max())
        return float(w @ (e / e.sum()))

    with Tape() as tape:
        loss = T.sum_all(T.mul(T.softmax(x), w))
    tape.backward(loss)
    assert rel_err(x.grad, fd_gradient(loss_value, x.value)) <= 1e-6


def test_backward_sum_of_parameter_gives_ones():
    store = ParamStore(np.random.default_rng(0))
    p = store.from_values("p", np.arange(6.0).reshape(2, 3))
    q = store.from_values("q", np.ones(4))
    with Tape() as tape:
        loss = T.sum_all(T.matvec(p, np.ones(3)))
    tape.backward(loss)
    assert np.array_equal(p.grad, np.ones((2, 3)))
    # loss independent of q: grad untouched
    assert np.array_equal(q.grad, np.zeros(4))


def test_backward_twice_raises():
    with Tape() as tape:
        loss = T.sum_all(Var(np.ones(3)))
    tape.backward(loss)
    with pytest.raises(TapeReuseError):
        tape.backward(loss)


def test_backward_requires_scalar_root():
    with Tape() as tape:
        out = T.sigmoid(np.zeros(2))
    with pytest.raises(DimensionError):
        tape.backward(out)


def test_no_active_tape_is_eval_mode():
    out = T.sigmoid(np.zeros(2))
    assert out.grad is None
    assert np.allclose(out.value, 0.5)


def test_tape_backward_visits_reverse_order():
    calls = []
    tape = Tape()
    with tape:
        a = T.sigmoid(np.zeros(1))
        b = T.tanh(a)
        c = T.sum_all(b)
    order = [id(rec[0]) for rec in tape._records]
    assert order == [id(a), id(b), id(c)]
    tape.backward(c)


def test_bernoulli_logprob_and_entropy_values():
    p = np.array([0.5, 0.5])
    lp = T.bernoulli_logprob(p, np.array([1.0, 0.0]))
    assert abs(float(lp.value) - 2 * math.log(0.5)) < 1e-12
    ent = T.bernoulli_entropy_sum(p)
    assert abs(float(ent.value) - 2 * math.log(2.0)) < 1e-12
    # saturated probabilities clamp to near-zero entropy
    ent_sat = T.bernoulli_entropy_sum(np.array([0.0, 1.0]))
    assert float(ent_sat.value) < 1e-5


def test_log_clamped_blocks_gradient_outside_range():
    x = Var(np.array([0.0, 0.5, 1.0]))
    with Tape() as tape:
        loss = T.sum_all(T.log_clamped(x))
    tape.backward(loss)
    assert x.grad[0] == 0.0 and x.grad[2] == 0.0
    assert abs(x.grad[1] - 2.0) < 1e-12


def test_concat_stack_pick_gradients():
    rng = np.random.default_rng(9)
    a = Var(rng.normal(size=3))
    b = Var(rng.normal(size=2))
    w = rng.normal(size=5)

    def loss_value():
        return float(w @ np.concatenate([a.value, b.value]))

    with Tape() as tape:
        loss = T.sum_all(T.mul(T.concat([a, b]), w))
    tape.backward(loss)
    assert rel_err(a.grad, fd_gradient(loss_value, a.value)) <= 1e-6
    assert rel_err(b.grad, fd_gradient(loss_value, b.value)) <= 1e-6

    rows = [Var(rng.normal(size=3)) for _ in range(2)]
    with Tape() as tape:
        M = T.stack(rows)
        loss = T.pick(T.matvec(M, np.ones(3)), 1)
    tape.backward(loss)
    assert np.allclose(rows[0].grad, 0.0)
    assert np.allclose(rows[1].grad, 1.0)


def _zero_gru(q: int, d: int) -> GruParams:
    store = ParamStore(np.random.default_rng(0))
    return GruParams(
        store.zeros("uw", q, d), store.zeros("uu", q, q), store.zeros("ub", q),
        store.zeros("rw", q, d), store.zeros("ru", q, q), store.zeros("rb", q),
        store.zeros("cw", q, d), store.zeros("cu", q, q), store.zeros("cb", q),
    )


def test_gru_zero_params_fixed_point_and_halving():
    params = _zero_gru(3, 2)
    out = T.gru_step(np.zeros(2), np.zeros(3), params)
    assert np.array_equal(out.value, np.zeros(3))
    # update gate 0.5, candidate 0: the memory halves exactly
    out = T.gru_step(np.zeros(2), np.ones(3), params)
    assert np.array_equal(out.value, np.full(3, 0.5))


def test_gru_gradients_match_finite_differences():
    rng = np.random.default_rng(17)
    q, d = 3, 2
    store = ParamStore(rng)
    params = GruParams(
        store.from_values("uw", rng.normal(size=(q, d))),
        store.from_values("uu", rng.normal(size=(q, q))),
        store.from_values("ub", rng.normal(size=q)),
        store.from_values("rw", rng.normal(size=(q, d))),
        store.from_values("ru", rng.normal(size=(q, q))),
        store.from_values("rb", rng.normal(size=q)),
        store.from_values("cw", rng.normal(size=(q, d))),
        store.from_values("cu", rng.normal(size=(q, q))),
        store.from_values("cb", rng.normal(size=q)),
    )
    x = Var(rng.normal(size=d))
    h = Var(rng.normal(size=q))
    w = rng.normal(size=q)

    def forward_value():
        sig = lambda v: 1.0 / (1.0 + np.exp(-v))
        z = sig(params.update_w.values @ x.value + params.update_u.values @ h.value
                + params.update_b.values)
        r = sig(params.reset_w.values @ x.value + params.reset_u.values @ h.value
                + params.reset_b.values)
        cand = np.tanh(params.cand_w.values @ x.value
                       + params.cand_u.values @ (r * h.value) + params.cand_b.values)
        return float(w @ ((1 - z) * h.value + z * cand))

    with Tape() as tape:
        loss = T.sum_all(T.mul(T.gru_step(x, h, params), w))
    tape.backward(loss)

    for t in params.tensors():
        assert rel_err(t.grad, fd_gradient(forward_value, t.values)) <= 1e-5, t.name
    assert rel_err(x.grad, fd_gradient(forward_value, x.value)) <= 1e-5
    assert rel_err(h.grad, fd_gradient(forward_value, h.value)) <= 1e-5


def test_gru_shape_mismatch():
    params = _zero_gru(3, 2)
    with pytest.raises(DimensionError):
        T.gru_step(np.zeros(5), np.zeros(3), params)
