import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from nftlab import losses
from nftlab.errors import NumericalError, ShapeError
from nftlab.gradcheck import central_difference, relative_error

finite = st.floats(-6, 6, allow_nan=False, width=64)


def test_softmax_symmetric_pair():
    np.testing.assert_allclose(losses.softmax(np.array([0.0, 0.0])), [0.5, 0.5])


@given(c=st.floats(-500, 500))
def test_softmax_shift_invariant_uniform(c):
    np.testing.assert_allclose(losses.softmax(np.full(4, c)), 0.25)


@given(z=arrays(np.float64, st.integers(2, 8), elements=finite))
def test_softmax_is_a_distribution(z):
    p = losses.softmax(z)
    assert np.all(p > 0) and abs(p.sum() - 1) < 1e-5


def test_softmax_rejects_nan():
    with pytest.raises(NumericalError):
        losses.softmax(np.array([0.0, np.nan]))


@pytest.mark.parametrize("seed", range(10))
def test_softmax_jacobian_block_form_and_fd(seed):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(int(rng.integers(2, 9)))
    p = losses.softmax(z)
    jac = losses.softmax_jacobian(z)
    np.testing.assert_allclose(np.diag(jac), p * (1 - p), atol=1e-15)
    off = ~np.eye(len(z), dtype=bool)
    np.testing.assert_allclose(jac[off], -np.outer(p, p)[off], atol=1e-15)
    num = np.stack([central_difference(lambda zz: losses.softmax(zz)[j], z) for j in range(len(z))], axis=1)
    assert relative_error(jac, num) < 1e-4


def test_ce_symmetric_example():
    ev = losses.ce(np.array([0.0, 0.0]), np.array([1.0, 0.0]))
    assert ev.value == pytest.approx(np.log(2))
    np.testing.assert_allclose(ev.grad, [-0.5, 0.5])


def test_ce_grad_vanishes_at_perfect_fit():
    ev = losses.ce(np.array([40.0, 0.0, 0.0]), np.array([1.0, 0.0, 0.0]))
    assert np.max(np.abs(ev.grad)) < 1e-15


def test_ce_rejects_soft_labels():
    with pytest.raises(ValueError, match="one-hot"):
        losses.ce(np.zeros(2), np.array([0.5, 0.5]))


def test_ice_symmetric_example():
    ev = losses.ice(np.array([0.0, 0.0]), np.array([1.0, 0.0]))
    assert ev.value == pytest.approx(np.log(2))
    np.testing.assert_allclose(ev.grad, [0.5, -0.5])


def test_ice_gradient_fades_when_true_class_is_gone():
    c = 4
    p = np.full(c, (1 - 1e-6) / (c - 1))
    p[0] = 1e-6
    ev = losses.ice(np.log(p), np.eye(c)[0])
    assert np.max(np.abs(ev.grad)) < 1e-5


def test_ice_closed_form_entries(rng):
    z = rng.standard_normal(5)
    y = np.eye(5)[2]
    p = losses.softmax(z)
    g = losses.ice(z, y).grad
    assert g[2] == pytest.approx(p[2])
    for i in (0, 1, 3, 4):
        assert g[i] == pytest.approx(-p[i] * p[2] / (1 - p[2]))


def test_ice_saturated_true_class_is_finite():
    ev = losses.ice(np.array([60.0, 0.0, 0.0]), np.eye(3)[0])
    assert np.isfinite(ev.value) and np.all(np.isfinite(ev.grad))


@given(c=st.integers(2, 8), v=st.floats(-50, 50))
def test_klu_zero_at_uniform(c, v):
    ev = losses.klu(np.full(c, v))
    assert abs(ev.value) < 1e-12
    assert np.max(np.abs(ev.grad)) < 1e-12


def test_klu_two_class_example():
    ev = losses.klu(np.log(np.array([0.75, 0.25])))
    np.testing.assert_allclose(ev.grad, [0.25, -0.25], atol=1e-12)


@given(z=arrays(np.float64, st.integers(2, 8), elements=finite))
def test_klu_grad_vanishes_only_at_uniform(z):
    # |grad| is exactly the distance of p from uniform, so it is zero iff p is uniform
    p = losses.softmax(z)
    g = losses.klu(z).grad
    assert np.max(np.abs(g)) == pytest.approx(np.max(np.abs(p - 1 / len(z))), abs=1e-15)


def test_mse_examples():
    ev = losses.mse(np.array([1.0, 0.0]), np.array([0.0, 0.0]))
    assert ev.value == 1.0
    np.testing.assert_array_equal(ev.grad, [2.0, 0.0])
    same = losses.mse(np.ones((3, 2)), np.ones((3, 2)))
    assert same.value == 0 and not np.any(same.grad)


def test_mse_shape_mismatch():
    with pytest.raises(ShapeError):
        losses.mse(np.zeros((2, 3)), np.zeros((2, 4)))


def test_dos_examples():
    ev = losses.dos(np.array([1.0, -1.0]))
    assert ev.value == 2.0
    np.testing.assert_array_equal(ev.grad, [2.0, -2.0])
    zero = losses.dos(np.zeros((4, 3)))
    assert zero.value == 0 and not np.any(zero.grad)


def test_batch_mean_reduction():
    z = np.array([[1.0, -1.0], [0.3, 0.2]])
    y = np.eye(2)
    both = losses.ce(z, y)
    one = [losses.ce(z[i], y[i]) for i in range(2)]
    assert both.value == pytest.approx(np.mean([e.value for e in one]))
    np.testing.assert_allclose(both.grad, np.stack([e.grad for e in one]) / 2)


def test_grad_dtype_follows_input():
    z = np.zeros((2, 3), np.float32)
    assert losses.ce(z, np.eye(3, dtype=np.float32)[:2]).grad.dtype == np.float32


@pytest.mark.parametrize("loss_id", losses.ALL_LOSSES)
def test_finite_differences_random_cases(loss_id):
    from nftlab.gradcheck import check_loss
    assert check_loss(loss_id, cases=30, seed=5).passed


def test_ice_descent_raises_ce_two_classes(rng):
    # with two classes the ICE and CE gradients point in opposite directions
    for _ in range(50):
        z = rng.standard_normal(2) * 2
        y = np.eye(2)[rng.integers(2)]
        assert np.dot(losses.ice(z, y).grad, losses.ce(z, y).grad) < 0


@given(z=arrays(np.float64, st.integers(3, 8), elements=finite), t=st.integers(0, 7))
def test_ice_step_lowers_true_probability(z, t):
    t = t % len(z)
    y = np.eye(len(z))[t]
    p0 = losses.softmax(z)[t]
    stepped = losses.softmax(z - 1e-3 * losses.ice(z, y).grad)[t]
    assert stepped <= p0


def test_klu_has_no_label_argument():
    import inspect
    assert list(inspect.signature(losses.klu).parameters) == ["z"]
    z = np.array([0.2, -0.4, 1.0])
    a = losses.evaluate_loss("KLU", z, np.eye(3)[0])
    b = losses.evaluate_loss("KLU", z, np.eye(3)[2])
    assert a.value == b.value and a.grad.tobytes() == b.grad.tobytes()


def test_probe_shapes():
    ce = [r[2] for r in losses.stability_probe("CE")]
    ice = [r[2] for r in losses.stability_probe("ICE")]
    dos = [r[2] for r in losses.stability_probe("DoS")]
    assert np.all(np.diff(ce) > 0)
    assert np.all(np.diff(ice) < 0) and ice[-1] < 1e-5
    assert np.all(np.diff(dos) < 0) and dos[-1] < 1e-5


def test_probe_csv_columns(tmp_path):
    losses.write_probe_csv(losses.stability_probe("KLU", [0.5, 0.1]), tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "loss_id,path_param,grad_norm"
    assert len(lines) == 3 and lines[1].startswith("KLU,0.5,")


def test_unknown_loss():
    with pytest.raises(ValueError):
        losses.evaluate_loss("hinge", np.zeros(2))
