"""Independent reference solutions.

* the two-phase laminate, reduced to a small algebraic system;
* the 1D oscillating bar (homogenized energy by root finding, full-field
  response by a 1D FEM);
* central-difference tangents of any stress map.
"""
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded
from scipy.optimize import brentq

from . import materials as mat
from .errors import NewtonDiverged, NonPositiveJacobian, RootFindFailed
from .tensor import as_tensor2, det2, unit2


# --------------------------------------------------------------------------
# laminate


@dataclass(frozen=True)
class LaminateProblem:
    """Layers normal to X1; ``fraction`` is the volume share of ``material1``."""

    material1: mat.NeoHookeanA
    material2: mat.NeoHookeanA
    fraction: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.fraction < 1.0:
            raise ValueError("volume fraction must lie in (0, 1)")


def laminate_solve(p, Fbar, tol=1e-13, max_iter=50):
    """Phase-wise deformation gradients ``(F1, F2)`` for a laminate.

    F12 and F22 are shared by both phases; F11 and F21 average to the
    macroscopic values; P11 and P21 are continuous across the interface.
    The two remaining unknowns (F11 and F21 of phase 1) are found by damped
    Newton starting from ``F1 = F2 = Fbar``.
    """
    Fbar = as_tensor2(Fbar)
    if not det2(Fbar) > 0.0:
        raise NonPositiveJacobian(f"det(Fbar) = {det2(Fbar):.6g} <= 0", location="Fbar")
    f = p.fraction
    g = (1.0 - f)

    def phases(x):
        F1 = Fbar.copy()
        F2 = Fbar.copy()
        F1[0, 0], F1[1, 0] = x
        F2[0, 0] = (Fbar[0, 0] - f * x[0]) / g
        F2[1, 0] = (Fbar[1, 0] - f * x[1]) / g
        return F1, F2

    def jump(x):
        F1, F2 = phases(x)
        if not (det2(F1) > 0.0 and det2(F2) > 0.0):
            return None, F1, F2
        r = mat.stress(p.material1, F1)[:, 0] - mat.stress(p.material2, F2)[:, 0]
        return r, F1, F2

    x = np.array([Fbar[0, 0], Fbar[1, 0]])
    r, F1, F2 = jump(x)
    scale = max(1.0, float(np.abs(mat.stress(p.material1, Fbar)).max()),
                float(np.abs(mat.stress(p.material2, Fbar)).max()))
    for _ in range(max_iter):
        rn = float(np.abs(r).max())
        if rn <= tol * scale:
            return F1, F2
        C1 = mat.tangent(p.material1, F1)
        C2 = mat.tangent(p.material2, F2)
        # d/dx of (P_i1^(1) - P_i1^(2)); x = (F11, F21) of phase 1
        J = np.empty((2, 2))
        for i in range(2):
            for m, (k, l) in enumerate(((0, 0), (1, 0))):
                J[i, m] = C1[i, 0, k, l] + C2[i, 0, k, l] * f / g
        dx = -np.linalg.solve(J, r)
        step = 1.0
        while step > 1e-8:
            r_new, F1n, F2n = jump(x + step * dx)
            if r_new is not None and np.abs(r_new).max() < rn:
                break
            step *= 0.5
        else:
            break
        x = x + step * dx
        r, F1, F2 = r_new, F1n, F2n
    if float(np.abs(r).max()) <= 1e3 * tol * scale:
        # stagnated at round-off level
        return F1, F2
    raise NewtonDiverged(f"laminate system did not converge (|r| = {np.abs(r).max():.3e})")


def laminate_energy_stress(p, Fbar):
    F1, F2 = laminate_solve(p, Fbar)
    f = p.fraction
    psi = f * mat.energy(p.material1, F1) + (1.0 - f) * mat.energy(p.material2, F2)
    P = f * mat.stress(p.material1, F1) + (1.0 - f) * mat.stress(p.material2, F2)
    return psi, P


def central_diff_tangent(stress_fn, Fbar, eps=1e-6):
    """C_ijkl ~ [P_ij(Fbar + eps E_kl) - P_ij(Fbar - eps E_kl)] / (2 eps)."""
    if not 1e-8 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-8, 1e-3]")
    Fbar = as_tensor2(Fbar)
    C = np.empty((2, 2, 2, 2))
    for k in range(2):
        for l in range(2):
            E = eps * unit2(k, l)
            C[:, :, k, l] = (np.asarray(stress_fn(Fbar + E)) - np.asarray(stress_fn(Fbar - E))) / (2 * eps)
    return C


def central_diff_gradient(energy_fn, x, eps):
    """Central-difference gradient of a scalar function of a flat vector."""
    x = np.asarray(x, dtype=float)
    g = np.empty(x.size)
    for r in range(x.size):
        e = np.zeros_like(x)
        e.flat[r] = eps
        g[r] = (energy_fn(x + e) - energy_fn(x - e)) / (2 * eps)
    return g.reshape(x.shape)


# --------------------------------------------------------------------------
# 1D oscillating bar


@dataclass(frozen=True)
class Toy1dProblem:
    """Bar on (0, L) with mu(X) = 3/2 + sin(2 pi k X).

    ``load`` is the distributed body force f(X) (vectorized callable) or
    ``None`` for zero load.
    """

    L: float = 1.0
    k: int = 10
    t0: float = 0.0
    load: object = None

    def __post_init__(self):
        if not self.L > 0 or int(self.k) != self.k or self.k < 1:
            raise ValueError("need L > 0 and integer k >= 1")

    def modulus(self, X):
        return 1.5 + np.sin(2.0 * np.pi * self.k * np.asarray(X))


def toy1d_energy_density(mu, eps):
    return mu * (2.0 / 3.0 * (1.0 + eps) ** 1.5 - eps - 2.0 / 3.0)


def toy1d_stress(mu, eps):
    return mu * (np.sqrt(1.0 + eps) - 1.0)


def toy1d_stiffness(mu, eps):
    return 0.5 * mu / np.sqrt(1.0 + eps)


_PERIOD_SAMPLES = 512


def _period_moduli():
    # trapezoid rule on one period is spectrally accurate for periodic integrands
    theta = 2.0 * np.pi * np.arange(_PERIOD_SAMPLES) / _PERIOD_SAMPLES
    return 1.5 + np.sin(theta)


def toy1d_micro_stress(eps_bar):
    """Constant micro stress sigma with <(1 + sigma/mu)^2 - 1> = eps_bar."""
    mu = _period_moduli()

    def mismatch(s):
        return np.mean((1.0 + s / mu) ** 2) - 1.0 - eps_bar

    if eps_bar == 0.0:
        return 0.0
    lo = -0.5 * (1.0 - 1e-12)  # 1 + s/mu must stay positive, min mu = 1/2
    hi = 1.0
    while mismatch(hi) < 0.0:
        hi *= 2.0
        if hi > 1e8:
            raise RootFindFailed(f"no bracket for eps_bar = {eps_bar}")
    if mismatch(lo) > 0.0:
        raise RootFindFailed(f"eps_bar = {eps_bar} below the admissible range")
    try:
        return brentq(mismatch, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    except (ValueError, RuntimeError) as exc:
        raise RootFindFailed(str(exc)) from exc


def toy1d_micro_energy(p, eps_bar):
    """Homogenized energy of the bar at macroscopic strain ``eps_bar``.

    Independent of ``k``: the cell is one period of the modulus.
    """
    s = toy1d_micro_stress(float(eps_bar))
    mu = _period_moduli()
    eps = (1.0 + s / mu) ** 2 - 1.0
    return float(np.mean(toy1d_energy_density(mu, eps)))


def solve_bar(L, n_elements, t0, stress, stiffness, load=None, load_steps=1,
              tol=1e-12, max_iter=50, n_gauss=3):
    """Nonlinear 1D FEM with linear elements, ``u(0) = 0`` and end traction ``t0``.

    ``stress(X, eps)`` and ``stiffness(X, eps)`` are vectorized over
    quadrature points.  Returns nodal coordinates and displacements.
    """
    n = int(n_elements)
    X = np.linspace(0.0, L, n + 1)
    h = np.diff(X)
    gp, gw = np.polynomial.legendre.leggauss(n_gauss)
    Xq = 0.5 * (X[:-1, None] + X[1:, None]) + 0.5 * h[:, None] * gp[None, :]
    wq = 0.5 * h[:, None] * gw[None, :]

    fext_body = np.zeros(n + 1)
    if load is not None:
        fq = np.asarray(load(Xq), dtype=float) * wq
        Nl = 0.5 * (1.0 - gp)[None, :]
        fext_body[:-1] += (fq * Nl).sum(axis=1)
        fext_body[1:] += (fq * (1.0 - Nl)).sum(axis=1)

    u = np.zeros(n + 1)
    for step in range(1, load_steps + 1):
        lam = step / load_steps
        fext = lam * fext_body
        fext[-1] += lam * t0
        ref = max(np.abs(fext).max(), 1e-30)
        for it in range(max_iter + 1):
            eps = (np.diff(u) / h)[:, None] * np.ones_like(Xq)
            if np.any(1.0 + eps <= 0.0):
                raise NonPositiveJacobian("bar strain reached -1")
            s = (np.asarray(stress(Xq, eps)) * wq).sum(axis=1) / h  # element axial force
            kk = (np.asarray(stiffness(Xq, eps)) * wq).sum(axis=1) / h**2
            R = -fext.copy()
            R[:-1] -= s
            R[1:] += s
            R = R[1:]
            if np.abs(R).max() <= tol * ref:
                break
            if it == max_iter:
                raise NewtonDiverged(f"bar Newton stalled at step {step} (|R| = {np.abs(R).max():.3e})")
            diag = np.zeros(n + 1)
            diag[:-1] += kk
            diag[1:] += kk
            ab = np.zeros((3, n))
            ab[0, 1:] = -kk[1:]
            ab[1, :] = diag[1:]
            ab[2, :-1] = -kk[1:]
            du = solve_banded((1, 1), ab, -R)
            # strains are differences of nodal values: below this the
            # residual is round-off of u / h and cannot drop further
            if np.abs(du).max() <= 1e-13 * max(np.abs(u).max(), 1e-300) and it > 0:
                break
            # keep every element strain above -1
            alpha = 1.0
            while True:
                trial = np.concatenate([[0.0], u[1:] + alpha * du])
                if np.all(1.0 + np.diff(trial) / h > 0.0):
                    break
                alpha *= 0.5
            u = trial
    return X, u


def toy1d_fullfield(p, n_elements, load_steps=1):
    """Full-field heterogeneous bar; returns nodal displacements."""
    if n_elements < 10 * p.k:
        raise ValueError("need at least 10 elements per unit wavenumber to resolve the modulus")

    def stress(X, e):
        return toy1d_stress(p.modulus(X), e)

    def stiff(X, e):
        return toy1d_stiffness(p.modulus(X), e)

    _, u = solve_bar(p.L, n_elements, p.t0, stress, stiff, p.load, load_steps, n_gauss=4)
    return u


def toy1d_homogenized_strain(t0):
    """Exact homogenized strain of the unloaded-body bar under end traction t0."""
    mu = _period_moduli()
    return float(np.mean((1.0 + t0 / mu) ** 2) - 1.0)
