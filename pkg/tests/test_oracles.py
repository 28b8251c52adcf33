import numpy as np
import pytest

from conftest import rel
from hdmr_homog import dataset as ds
from hdmr_homog import materials as mat
from hdmr_homog import micro, oracles
from hdmr_homog.tensor import det2

M1, M2 = mat.NeoHookeanA(100.0, 1.0), mat.NeoHookeanA(1000.0, 1.0)
LAM = oracles.LaminateProblem(M1, M2, 0.5)


def jump_residuals(p, Fbar, F1, F2):
    f = p.fraction
    P1, P2 = mat.stress(p.material1, F1), mat.stress(p.material2, F2)
    return np.array([
        F1[0, 1] - Fbar[0, 1], F2[0, 1] - Fbar[0, 1], F1[1, 1] - Fbar[1, 1], F2[1, 1] - Fbar[1, 1],
        f * F1[0, 0] + (1 - f) * F2[0, 0] - Fbar[0, 0], f * F1[1, 0] + (1 - f) * F2[1, 0] - Fbar[1, 0],
        (P1[0, 0] - P2[0, 0]) / 1e3, (P1[1, 0] - P2[1, 0]) / 1e3,
    ])


def test_laminate_identity():
    F1, F2 = oracles.laminate_solve(LAM, np.eye(2))
    np.testing.assert_array_equal(F1, np.eye(2))
    np.testing.assert_array_equal(F2, np.eye(2))
    psi, P = oracles.laminate_energy_stress(LAM, np.eye(2))
    assert psi == 0.0 and np.all(P == 0.0)


def test_laminate_soft_phase_stretches_more():
    Fbar = np.diag([1.2, 1.2])
    F1, F2 = oracles.laminate_solve(LAM, Fbar)
    assert F1[0, 0] > 1.2 > F2[0, 0]
    assert np.abs(jump_residuals(LAM, Fbar, F1, F2)).max() < 1e-12


def test_laminate_equal_materials(rng):
    p = oracles.LaminateProblem(M1, M1, 0.5)
    for _ in range(5):
        Fbar = np.eye(2) + rng.uniform(-0.3, 0.3, (2, 2))
        F1, F2 = oracles.laminate_solve(p, Fbar)
        np.testing.assert_allclose(F1, Fbar, atol=1e-12)
        np.testing.assert_allclose(F2, Fbar, atol=1e-12)


def test_laminate_residuals_random(rng):
    X = ds.sample_box(ds.SamplingBox(*ds.LAMINATE_BOX), 50, 3)
    for x in X:
        Fbar = x.reshape(2, 2)
        F1, F2 = oracles.laminate_solve(LAM, Fbar)
        assert np.abs(jump_residuals(LAM, Fbar, F1, F2)).max() < 1e-12
        assert det2(F1) > 0 and det2(F2) > 0


def test_laminate_vs_fft_at_biaxial():
    cell = micro.laminate_rve(micro.RveGrid(31, 31), M1, M2)
    p = oracles.LaminateProblem(M1, M2, cell.volume_fractions()[0])
    psi, _ = oracles.laminate_energy_stress(p, np.diag([1.2, 1.2]))
    assert micro.solve_micro(cell, np.diag([1.2, 1.2])).psi_bar == pytest.approx(psi, rel=1e-6)


def test_laminate_stress_is_energy_gradient(rng):
    for _ in range(5):
        Fbar = np.eye(2) + rng.uniform(-0.3, 0.3, (2, 2))
        psi, P = oracles.laminate_energy_stress(LAM, Fbar)
        P_fd = oracles.central_diff_gradient(lambda G: oracles.laminate_energy_stress(LAM, G)[0], Fbar, 1e-6)
        assert rel(P, P_fd) < 1e-5


def test_laminate_fraction_validation():
    with pytest.raises(ValueError):
        oracles.LaminateProblem(M1, M2, 1.0)


def test_central_diff_tangent_vs_closed_form():
    m = mat.NeoHookeanB(100.0, 0.4)
    F = np.array([[1.1, 0.2], [-0.1, 0.95]])
    C = mat.tangent(m, F)
    assert rel(oracles.central_diff_tangent(lambda G: mat.stress(m, G), F, 1e-6), C) < 1e-4
    e1 = rel(oracles.central_diff_tangent(lambda G: mat.stress(m, G), F, 1e-4), C)
    e2 = rel(oracles.central_diff_tangent(lambda G: mat.stress(m, G), F, 5e-5), C)
    assert e1 / e2 == pytest.approx(4.0, abs=0.5)


def test_central_diff_laminate_symmetric():
    C = oracles.central_diff_tangent(lambda G: oracles.laminate_energy_stress(LAM, G)[1], np.array([[1.1, 0.1], [0.2, 0.9]]))
    m = C.reshape(4, 4)
    assert np.abs(m - m.T).max() < 1e-6 * np.abs(m).max()


def test_central_diff_eps_range():
    with pytest.raises(ValueError):
        oracles.central_diff_tangent(lambda G: G, np.eye(2), 1e-2)


# ---------------------------------------------------------------- toy1d


def test_toy1d_zero():
    assert oracles.toy1d_micro_stress(0.0) == 0.0
    assert oracles.toy1d_micro_energy(oracles.Toy1dProblem(), 0.0) == 0.0


def test_toy1d_stress_is_derivative():
    p = oracles.Toy1dProblem()
    for e in (0.1, 0.7, 1.5):
        h = 1e-5
        fd = (oracles.toy1d_micro_energy(p, e + h) - oracles.toy1d_micro_energy(p, e - h)) / (2 * h)
        assert fd == pytest.approx(oracles.toy1d_micro_stress(e), rel=1e-6)


def test_toy1d_range_end():
    e = oracles.toy1d_micro_energy(oracles.Toy1dProblem(), 2.0)
    assert np.isfinite(e) and e > 0


def test_toy1d_convex_increasing():
    p = oracles.Toy1dProblem()
    eps = np.linspace(0.05, 1.95, 20)
    h = 1e-3
    f = np.array([[oracles.toy1d_micro_energy(p, e + s) for s in (-h, 0, h)] for e in eps])
    assert np.all(f[:, 2] - f[:, 0] > 0)
    assert np.all(f[:, 2] - 2 * f[:, 1] + f[:, 0] > 0)


def test_toy1d_homogenized_strain_consistent():
    for t0 in (0.1, 0.5, 0.9):
        assert oracles.toy1d_micro_stress(oracles.toy1d_homogenized_strain(t0)) == pytest.approx(t0, rel=1e-12)


def test_bar_zero_traction():
    u = oracles.toy1d_fullfield(oracles.Toy1dProblem(k=10, t0=0.0), 200)
    assert np.all(u == 0.0)


def test_bar_homogeneous_closed_form():
    t0, mu = 0.6, 1.5
    eps = (1.0 + t0 / mu) ** 2 - 1.0  # mu (sqrt(1 + eps) - 1) = t0
    X, u = oracles.solve_bar(1.0, 50, t0, lambda X, e: oracles.toy1d_stress(mu, e),
                             lambda X, e: oracles.toy1d_stiffness(mu, e))
    np.testing.assert_allclose(u, eps * X, rtol=1e-11, atol=1e-14)


def test_bar_converges_to_homogenized():
    t0 = oracles.toy1d_micro_stress(1.0)
    u_hom = oracles.toy1d_homogenized_strain(t0)
    gaps = [abs(oracles.toy1d_fullfield(oracles.Toy1dProblem(k=k, t0=t0), 40 * k)[-1] - u_hom)
            for k in (10, 50, 100)]
    assert max(gaps) / u_hom < 2e-3
    from hdmr_homog.validation import bar_gap
    nodal = [bar_gap(k, t0)[0] for k in (10, 50, 100)]
    assert nodal[0] > nodal[1] > nodal[2]


def test_bar_resolution_guard():
    with pytest.raises(ValueError):
        oracles.toy1d_fullfield(oracles.Toy1dProblem(k=10, t0=0.1), 50)
