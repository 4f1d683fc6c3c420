import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from casd import autodiff as ad
from casd.autodiff import Tape
from casd.errors import DimensionError, DomainError
from casd.evidist import StudentT
from casd.fusion import confidence_weights, fuse, mean_fuse, rrm_sample, uncertainty_score

dof = st.floats(0.01, 1e6)
dof2 = st.floats(2.05, 1e4)


def dist(tape, u, o, v):
    return StudentT(tape.const(np.asarray(u, float)), tape.const(np.asarray(o, float)), tape.const(float(v)))


def test_weights_equal_dof():
    c1, c2, c3 = confidence_weights(7.0, 7.0, 7.0)
    assert (c1, c2) == (0.5, 0.5)
    assert c3 == pytest.approx(1 / 3, abs=1e-15)


def test_weights_example():
    c1, c2, c3 = confidence_weights(4.0, 6.0, 8.0)
    assert c1 == pytest.approx(0.4, abs=1e-15)
    assert c2 == pytest.approx(0.6, abs=1e-15)
    assert c3 == pytest.approx(8 / 18, abs=1e-15)


def test_weights_normalized_mode():
    c = confidence_weights(4.0, 6.0, 8.0, normalized=True)
    assert sum(c) == pytest.approx(1.0, abs=1e-15)
    raw = confidence_weights(4.0, 6.0, 8.0)
    np.testing.assert_allclose(np.array(c) / np.array(raw), 1 / sum(raw))


def test_weights_reject_nonpositive():
    with pytest.raises(DomainError):
        confidence_weights(0.0, 1.0, 2.0)


@given(dof, dof, dof)
@settings(max_examples=300, deadline=None)
def test_weights_properties(v1, v2, v3):
    c1, c2, c3 = confidence_weights(v1, v2, v3)
    assert abs(c1 + c2 - 1.0) <= 1e-15
    for c in (c1, c2, c3):
        assert 0.0 < c < 1.0
    if v1 > v2:
        assert c1 > c2


def test_weights_sum_over_random_triples():
    v = np.random.default_rng(0).uniform(1e-3, 1e3, size=(10_000, 3))
    c1, c2, _ = confidence_weights(v[:, 0], v[:, 1], v[:, 2])
    assert np.max(np.abs(c1 + c2 - 1.0)) <= 1e-15


def test_fuse_identical_inputs(tape, rng):
    u, o = rng.standard_normal(5), rng.uniform(0.5, 2, 5)
    f = fuse(*(dist(tape, u, o, 5.0) for _ in range(3)))
    np.testing.assert_allclose(f.u_F.data, 4 / 3 * u, rtol=1e-14)
    np.testing.assert_allclose(f.sigma_F.data, o, rtol=1e-14)
    assert float(f.v_F.data) == 5.0


def test_fuse_zero_location(tape):
    f = fuse(dist(tape, [0.0], [1.0], 3.0), dist(tape, [0.0], [2.0], 9.0), dist(tape, [0.0], [4.0], 30.0))
    assert f.u_F.data[0] == 0.0


def test_fuse_reference_example(tape):
    f = fuse(dist(tape, [0.0], [1.0], 4.0), dist(tape, [0.0], [1.0], 6.0), dist(tape, [0.0], [1.0], 8.0))
    assert abs(f.sigma_F.data[0] - (1 + 12 / 16 + 16 / 24) / 3) <= 1e-9
    assert abs(f.sigma_F.data[0] - 0.805556) <= 1e-6
    assert float(f.v_F.data) == 4.0
    assert abs(f.U_F.data[0] - 3.22222) <= 1e-5
    assert abs(f.U_F.data[0] - 29 / 9) <= 1e-8


@given(dof2, dof2, dof2, st.floats(0.01, 100.0))
@settings(max_examples=100, deadline=None)
def test_fuse_properties(v1, v2, v3, lam):
    tape = Tape()
    r = np.random.default_rng(int(v1 * 1000) % 2**31)
    us = [r.standard_normal(4) for _ in range(3)]
    os_ = [r.uniform(0.1, 3.0, 4) for _ in range(3)]
    vs = (v1, v2, v3)
    f = fuse(*(dist(tape, u, o, v) for u, o, v in zip(us, os_, vs)))
    assert float(f.v_F.data) == min(vs)
    assert np.all(f.sigma_F.data > 0)
    c = [float(w.data) for w in f.weights]
    np.testing.assert_allclose(f.u_F.data, sum(ci * u for ci, u in zip(c, us)), rtol=1e-12, atol=1e-12)
    g = fuse(*(dist(tape, u, lam * o, v) for u, o, v in zip(us, os_, vs)))
    np.testing.assert_allclose(g.sigma_F.data, lam * f.sigma_F.data, rtol=1e-12)
    np.testing.assert_allclose(g.U_F.data, lam * f.U_F.data, rtol=1e-12)


def test_fuse_scale_rule_is_not_permutation_invariant(tape):
    a, b = dist(tape, [0.0], [1.0], 4.0), dist(tape, [0.0], [2.0], 10.0)
    f, g = fuse(a, b, b), fuse(b, a, b)
    assert float(f.v_F.data) == float(g.v_F.data) == 4.0
    assert f.sigma_F.data[0] != pytest.approx(g.sigma_F.data[0])


def test_fuse_errors(tape):
    with pytest.raises(DimensionError):
        fuse(dist(tape, [0.0], [1.0], 4.0), dist(tape, [0.0, 1.0], [1.0, 1.0], 4.0), dist(tape, [0.0], [1.0], 4.0))
    with pytest.raises(DomainError):
        fuse(dist(tape, [0.0], [1.0], 2.0), dist(tape, [0.0], [1.0], 4.0), dist(tape, [0.0], [1.0], 4.0))


def test_mean_fuse(tape):
    f = mean_fuse(dist(tape, [3.0], [1.0], 4.0), dist(tape, [6.0], [2.0], 6.0), dist(tape, [0.0], [3.0], 8.0))
    assert f.u_F.data[0] == pytest.approx(3.0)
    assert f.sigma_F.data[0] == pytest.approx(2.0)
    assert float(f.v_F.data) == 4.0


def test_uncertainty_score_limits(tape):
    s = tape.const([0.805556])
    assert uncertainty_score(s, tape.const(1e9)).data[0] == pytest.approx(0.805556, rel=1e-8)
    clamped = uncertainty_score(tape.const([1.0]), tape.const(3.0005)).data[0]
    assert np.isfinite(clamped)
    assert clamped == pytest.approx(3.0005 / 1e-3)


def test_rrm_zero_scale_returns_location(tape, rng):
    u = rng.standard_normal(6)
    f = fuse(*(dist(tape, u, np.zeros(6), 5.0) for _ in range(3)))
    np.testing.assert_array_equal(rrm_sample(f, rng, "train").data, f.u_F.data)
    np.testing.assert_array_equal(rrm_sample(f, mode="infer").data, f.u_F.data)


def test_rrm_infer_is_pure(tape, rng):
    f = fuse(*(dist(tape, rng.standard_normal(3), rng.uniform(1, 2, 3), 6.0) for _ in range(3)))
    a, b = rrm_sample(f, mode="infer"), rrm_sample(f, rng, mode="infer")
    np.testing.assert_array_equal(a.data, b.data)
    assert a is f.u_F


def test_rrm_train_moments(tape):
    # a single fused element with u_F = 2, sigma_F = 4, v_F = 10
    n = 100_000
    d = dist(tape, np.full(n, 1.5), np.full(n, 4.0), 10.0)
    f = fuse(d, d, d)
    assert f.u_F.data[0] == pytest.approx(2.0) and f.sigma_F.data[0] == pytest.approx(4.0)
    s = rrm_sample(f, np.random.default_rng(5), "train").data
    assert abs(s.mean() - 2.0) <= 0.05
    assert s.var() == pytest.approx(4.0 * 10 / 8, rel=0.05)


def test_rrm_gradients_through_sample():
    t = np.array([0.3, -1.2, 2.0])
    sig = np.array([0.5, 1.5, 2.5])
    w = np.array([1.0, -2.0, 0.5])
    tape = Tape()
    u = tape.param("u", np.zeros(3))
    s = tape.param("sigma", sig)
    f = type("F", (), {})()
    f.u_F, f.sigma_F = u, s
    g = ad.backward(tape, ad.sum(rrm_sample(f, mode="train", t=t) * w))
    np.testing.assert_allclose(g["u"], w)
    np.testing.assert_allclose(g["sigma"], t / (2 * np.sqrt(sig)) * w, rtol=1e-12)
