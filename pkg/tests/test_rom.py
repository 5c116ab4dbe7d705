import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from georom.errors import DegenerateDatasetError, SingularSystemError
from georom.rom import (captured_energy, compress_geometry, pod, pod_project, pod_projection_error,
                        pod_reconstruct, pointwise_relative_error, rbf_eval_coeffs, rbf_fit_coeffs,
                        relative_l2_error)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 8), st.integers(2, 8), st.integers(0, 10**6), st.floats(0.5, 1.0))
def test_orthonormal_and_eckart_young(n, ns, seed, thr):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(n, ns))
    b = pod(M, thr)
    assert np.max(np.abs(b.basis.T @ b.basis - np.eye(b.rank))) < 1e-10
    s_ind = np.linalg.svd(M, compute_uv=False)
    assert np.all(np.diff(b.singular_values) <= 1e-12) and np.all(b.singular_values >= 0)
    R = M - b.basis @ (b.basis.T @ M)
    tail = np.sqrt(np.sum(s_ind[b.rank:] ** 2))
    assert abs(np.linalg.norm(R) - tail) < 1e-12 * max(1.0, np.linalg.norm(M))
    e = [captured_energy(b, k) for k in range(1, len(s_ind) + 1)]
    assert np.all(np.diff(e) >= -1e-15) and e[-1] == pytest.approx(1.0, abs=1e-15)
    assert b.energy >= thr - 1e-12


def test_duplicated_column_rank_one():
    v = np.arange(1.0, 7.0)
    b = pod(np.tile(v[:, None], 5), 0.999)
    assert b.rank == 1
    assert b.singular_values[1] < 1e-12 * b.singular_values[0]
    assert np.allclose(b.basis[:, 0], v / np.linalg.norm(v), atol=1e-14)


def test_sign_convention_deterministic():
    rng = np.random.default_rng(1)
    M = rng.normal(size=(20, 6))
    b1, b2 = pod(M, 1.0), pod(-M, 1.0)
    assert np.allclose(b1.basis, b2.basis, atol=1e-12)
    idx = np.argmax(np.abs(b1.basis), axis=0)
    assert np.all(b1.basis[idx, np.arange(b1.rank)] > 0)


def test_pod_errors():
    with pytest.raises(DegenerateDatasetError):
        pod(np.zeros((5, 3)))
    with pytest.raises(ValueError):
        pod(np.ones((5, 1)))
    with pytest.raises(DegenerateDatasetError):
        compress_geometry(np.zeros((10, 4)))


def test_project_reconstruct():
    rng = np.random.default_rng(2)
    M = rng.normal(size=(30, 6))
    b = pod(M, 1.0)
    assert np.allclose(pod_project(b, b.basis[:, 2]), np.eye(b.rank)[2], atol=1e-14)
    n = rng.normal(size=30)
    n -= b.basis @ (b.basis.T @ n)
    assert np.max(np.abs(pod_project(b, n))) < 1e-12
    for _ in range(100):
        v = rng.normal(size=30)
        assert np.linalg.norm(pod_project(b, v)) <= np.linalg.norm(v) + 1e-12
    assert np.allclose(pod_reconstruct(b, pod_project(b, M[:, 3])), M[:, 3], atol=1e-10)
    assert np.all(pod_reconstruct(b, np.zeros(b.rank)) == 0)
    assert pod_projection_error(b, b.basis[:, 0]) < 1e-14
    assert pod_projection_error(b, n) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        pod_project(b, np.ones(29))
    with pytest.raises(ValueError):
        pod_reconstruct(b, np.ones(b.rank + 1))


def test_compress_geometry_shapes():
    rng = np.random.default_rng(3)
    basis = rng.normal(size=(100, 3))
    G = basis @ rng.normal(size=(3, 40))
    Q, red = compress_geometry(G, 0.999)
    assert Q.rank == 3 and red.shape == (3, 40)


def test_rbf_coeff_interpolation_and_constants():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(30, 3))
    y = rng.normal(size=(30, 5))
    m = rbf_fit_coeffs(x, y)
    assert np.max(np.abs(rbf_eval_coeffs(m, x) - y)) < 1e-8
    c = rbf_fit_coeffs(x, np.full((30, 2), 3.5))
    assert np.max(np.abs(c.weights)) < 1e-9
    assert np.allclose(rbf_eval_coeffs(c, rng.normal(size=(10, 3))), 3.5, atol=1e-9)
    A = rng.normal(size=(3, 2))
    a = rbf_fit_coeffs(x, x @ A + 1.0)
    q = rng.normal(size=(50, 3)) * 3
    assert np.max(np.abs(rbf_eval_coeffs(a, q) - (q @ A + 1.0))) < 1e-9
    with pytest.raises(SingularSystemError):
        rbf_fit_coeffs(np.vstack([x, x[:1]]), np.vstack([y, y[:1]]))
    with pytest.raises(ValueError):
        rbf_fit_coeffs(x[:3], y[:3])


def test_rbf_convergence_sweep():
    f = lambda g: np.sin(g[:, 0]) * np.cos(g[:, 1])
    rng = np.random.default_rng(5)
    test = rng.uniform(0, 2, (400, 2))
    errs = []
    for n in (20, 40, 80):
        x = rng.uniform(0, 2, (n, 2))
        m = rbf_fit_coeffs(x, f(x))
        errs.append(np.sqrt(np.mean((rbf_eval_coeffs(m, test)[:, 0] - f(test)) ** 2)))
    assert errs[0] > errs[1] > errs[2]


def test_error_metrics():
    rng = np.random.default_rng(6)
    t = rng.normal(size=50)
    assert relative_l2_error(t, t) == 0.0
    assert relative_l2_error(t, np.zeros(50)) == 1.0
    with pytest.raises(ValueError):
        relative_l2_error(np.zeros(3), np.ones(3))
    assert np.all(pointwise_relative_error(t, t) == 0)
    for _ in range(50):
        a = rng.normal(size=20)
        a_scaled = a * rng.uniform(0, 1)
        e = pointwise_relative_error(t[:20], a_scaled * np.max(np.abs(t[:20])) / np.max(np.abs(a)))
        assert np.all(e >= 0) and np.all(e <= 2 + 1e-12)
    with pytest.raises(ValueError):
        pointwise_relative_error(np.zeros(3), np.ones(3))


def test_triangle_bound():
    rng = np.random.default_rng(7)
    for _ in range(100):
        a, b, c = rng.normal(size=(3, 15))
        lhs = abs(relative_l2_error(a, c) - relative_l2_error(a, b))
        assert lhs <= np.linalg.norm(b - c) / np.linalg.norm(a) + 1e-12
