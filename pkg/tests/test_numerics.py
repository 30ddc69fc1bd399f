import math
from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from aac_lwf import numerics as nx
from aac_lwf.errors import InvariantError, NumericError, ParameterError
from aac_lwf.numerics import AdamState, Tensor

from gradcases import OP_TOL, op_cases, op_points

finite = st.floats(-20, 20, allow_nan=False, allow_infinity=False)


# softmax -------------------------------------------------------------------

def test_softmax_uniform_logits():
    p = nx.softmax_t(np.zeros(3), 2.0).data
    np.testing.assert_allclose(p, [1 / 3] * 3, rtol=0, atol=1e-15)


def test_softmax_log3():
    p = nx.softmax_t(np.array([0.0, math.log(3)]), 1.0).data
    np.testing.assert_allclose(p, [0.25, 0.75], rtol=0, atol=1e-15)


def test_softmax_temperature_two_matches_decimal_oracle():
    getcontext().prec = 50
    e = [(Decimal(x) / 2).exp() for x in (1, 2, 3)]
    z = sum(e)
    oracle = [float(v / z) for v in e]
    np.testing.assert_allclose(nx.softmax_t(np.array([1.0, 2.0, 3.0]), 2.0).data, oracle, rtol=1e-14)


@pytest.mark.parametrize("T", [0.0, -1.0])
def test_softmax_rejects_non_positive_temperature(T):
    with pytest.raises(ParameterError):
        nx.softmax_t(np.zeros(3), T)


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)), elements=finite),
       st.floats(0.1, 10), finite)
def test_softmax_rows_normalised_and_shift_invariant(x, T, shift):
    p = nx.softmax_t(x, T).data
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)
    assert np.all(p >= 0)
    np.testing.assert_allclose(nx.softmax_t(x + shift, T).data, p, atol=1e-12)


# losses --------------------------------------------------------------------

def test_cross_entropy_perfect_prediction_is_zero():
    target = np.eye(4)[[2]]
    assert nx.cross_entropy(target, Tensor(target)).item() == 0.0


def test_cross_entropy_uniform_is_log_w():
    target = np.eye(4)[[0, 3, 1]]
    val = nx.cross_entropy(target, Tensor(np.full((3, 4), 0.25))).item()
    assert val == pytest.approx(math.log(4), abs=1e-15)
    assert round(val, 6) == 1.386294


def _ce_oracle(target, probs, mask):
    total, n = 0.0, 0
    for t in range(len(target)):
        if not mask[t]:
            continue
        n += 1
        for w in range(len(target[t])):
            if target[t][w] == 1:
                total -= math.log(max(probs[t][w], 1e-12))
    return total / n


def test_cross_entropy_matches_loop_oracle(rng):
    probs = nx.softmax_t(rng.normal(size=(3, 5)), 1.0).data
    target = np.eye(5)[rng.integers(0, 5, 3)]
    mask = np.array([True, False, True])
    got = nx.cross_entropy(target, Tensor(probs), mask).item()
    assert got == pytest.approx(_ce_oracle(target.tolist(), probs.tolist(), mask), abs=1e-12)
    full = nx.cross_entropy(target, Tensor(probs)).item()
    assert full == pytest.approx(_ce_oracle(target.tolist(), probs.tolist(), [True] * 3), abs=1e-12)


def test_cross_entropy_index_and_one_hot_targets_agree(rng):
    probs = Tensor(nx.softmax_t(rng.normal(size=(2, 3, 5)), 1.0).data)
    idx = rng.integers(0, 5, size=(2, 3))
    assert nx.cross_entropy(idx, probs).item() == nx.cross_entropy(np.eye(5)[idx], probs).item()


def test_kl_identical_is_zero(rng):
    p = nx.softmax_t(rng.normal(size=(4, 6)), 2.0).data
    assert nx.kl_divergence(p, Tensor(p)).item() == 0.0


def test_kl_point_mass_vs_uniform():
    val = nx.kl_divergence(np.array([[1.0, 0.0]]), Tensor(np.array([[0.5, 0.5]]))).item()
    assert val == pytest.approx(math.log(2), abs=1e-15)
    assert round(val, 6) == 0.693147


def test_kl_matches_direct_sum():
    p, q = [0.3, 0.7], [0.6, 0.4]
    oracle = sum(pi * (math.log(pi) - math.log(qi)) for pi, qi in zip(p, q))
    assert nx.kl_divergence(np.array([p]), Tensor(np.array([q]))).item() == pytest.approx(oracle, abs=1e-15)


@given(hnp.arrays(np.float64, (3, 5), elements=finite), hnp.arrays(np.float64, (3, 5), elements=finite))
def test_kl_non_negative(a, b):
    p = nx.softmax_t(a, 1.0).data
    q = nx.softmax_t(b, 1.0).data
    assert nx.kl_divergence(p, Tensor(q)).item() >= -1e-12


def test_masked_steps_do_not_count(rng):
    probs = nx.softmax_t(rng.normal(size=(1, 4, 5)), 1.0).data
    idx = rng.integers(0, 5, size=(1, 4))
    mask = np.array([[1, 1, 0, 0]], bool)
    scrambled = probs.copy()
    scrambled[0, 2:] = 1 / 5
    a = nx.cross_entropy(idx, Tensor(probs), mask).item()
    b = nx.cross_entropy(idx, Tensor(scrambled), mask).item()
    assert a == b


def test_unbatched_equals_single_batch(rng):
    probs = nx.softmax_t(rng.normal(size=(4, 5)), 1.0).data
    idx = rng.integers(0, 5, size=4)
    assert nx.cross_entropy(idx, Tensor(probs)).item() == nx.cross_entropy(idx[None], Tensor(probs[None])).item()


# backward ------------------------------------------------------------------

def test_backward_square():
    x = Tensor([3.0], requires_grad=True)
    nx.backward(x * x)
    assert x.grad.tolist() == [6.0]


def test_sum_of_softmax_has_zero_gradient(rng):
    x = Tensor(rng.normal(size=(2, 5)), requires_grad=True)
    nx.backward(nx.sum_(nx.softmax_t(x, 1.0)))
    np.testing.assert_allclose(x.grad, 0.0, atol=1e-15)


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ParameterError):
        nx.backward(x * 2.0)


def test_backward_accumulates_shared_nodes():
    x = Tensor([2.0], requires_grad=True)
    y = x * x
    nx.backward(y + y * 3.0)  # 4 x^2
    assert x.grad.tolist() == [16.0]


def test_no_grad_builds_no_graph():
    x = Tensor([1.0], requires_grad=True)
    with nx.no_grad():
        y = nx.exp(x)
    assert not y.requires_grad and y._parents == ()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_debug_checks_flag_non_finite():
    with nx.debug_checks():
        with pytest.raises(NumericError):
            nx.log(Tensor([-1.0]))
    assert np.isnan(nx.log(Tensor([-1.0])).item())  # unchecked outside the block


def test_check_invariants_grad_shape():
    t = Tensor(np.ones(3))
    t.grad = np.ones(2)
    with pytest.raises(InvariantError):
        nx.check_invariants(t)


@pytest.mark.parametrize("name,closure,point", op_cases(), ids=[c[0] for c in op_cases()])
def test_op_gradients_match_finite_differences(name, closure, point):
    for p in op_points(point):
        assert nx.finite_diff_check(closure, p) < OP_TOL


@settings(max_examples=25, deadline=None)
@given(hnp.arrays(np.float64, (2, 3), elements=st.floats(-3, 3)))
def test_composite_gradient_property(x):
    w1 = Tensor(np.arange(6.0).reshape(3, 2) / 6)
    w2 = Tensor(np.arange(6.0, 0, -1).reshape(3, 2) / 6)

    def f(t):
        return nx.sum_(nx.tanh(nx.matmul(t, w1)) * nx.sigmoid(nx.matmul(t, w2))) + nx.sum_(nx.exp(t * 0.3))
    assert nx.finite_diff_check(f, x) < OP_TOL


def test_finite_diff_exact_for_linear_map(rng):
    w = rng.normal(size=(4,))
    err = nx.finite_diff_check(lambda x: nx.sum_(x * w), rng.normal(size=4))
    assert err < 1e-8


# adam ----------------------------------------------------------------------

def test_adam_first_step_moves_by_alpha_sign():
    p = {"w": Tensor([1.0, -2.0, 0.5], requires_grad=True)}
    p["w"].grad = np.array([3.0, -0.2, 50.0])
    nx.adam_step(p, AdamState(alpha=0.01))
    np.testing.assert_allclose(p["w"].data, [1.0 - 0.01, -2.0 + 0.01, 0.5 - 0.01], atol=1e-8)


def test_adam_zero_gradient_leaves_params():
    p = {"w": Tensor([1.0, 2.0], requires_grad=True)}
    p["w"].grad = np.zeros(2)
    nx.adam_step(p, AdamState())
    assert p["w"].data.tolist() == [1.0, 2.0]


def test_adam_three_steps_match_scalar_oracle():
    # f(w) = (w - 3)^2, w0 = 0
    alpha, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    w, m, v = 0.0, 0.0, 0.0
    expected = []
    for t in range(1, 4):
        g = 2 * (w - 3)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w = w - alpha * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        expected.append(w)
    p = {"w": Tensor([0.0], requires_grad=True)}
    state = AdamState(alpha=alpha)
    got = []
    for _ in range(3):
        x = p["w"]
        x.grad = None
        nx.backward((x - 3.0) * (x - 3.0))
        nx.adam_step(p, state)
        got.append(p["w"].data[0])
    np.testing.assert_allclose(got, expected, rtol=0, atol=1e-12)
    assert state.step_count == 3


def test_adam_missing_gradient_is_an_error():
    p = {"w": Tensor([1.0], requires_grad=True)}
    with pytest.raises(InvariantError):
        nx.adam_step(p, AdamState())


def test_adam_wrong_gradient_shape():
    p = {"w": Tensor([1.0, 2.0], requires_grad=True)}
    with pytest.raises(ParameterError):
        nx.adam_step(p, AdamState(), {"w": np.ones(3)})


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=6), st.integers(1, 5))
def test_adam_state_contract(grads, steps):
    p = {"w": Tensor(np.zeros(len(grads)), requires_grad=True)}
    state = AdamState()
    for k in range(steps):
        nx.adam_step(p, state, {"w": np.array(grads)})
        assert state.step_count == k + 1
        assert state.first_moment["w"].shape == p["w"].shape
        assert state.second_moment["w"].shape == p["w"].shape
