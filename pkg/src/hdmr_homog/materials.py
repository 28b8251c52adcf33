"""Compressible Neo-Hookean energies with closed-form stress and tangent.

Two variants are supported:

* :class:`NeoHookeanA` -- ``psi = mu/2 (tr(F^T F) - 2) + mu/beta (J^-beta - 1)``
* :class:`NeoHookeanB` -- ``psi = lam/2 (log J)^2 - mu log J + mu/2 (tr C - 2)``

Point-wise evaluation goes through :func:`evaluate_points`, which is the
hot kernel of both the spectral micro-solver and the FEM.
"""
from dataclasses import dataclass

import numpy as np

from ._accel import njit, select
from .errors import NonPositiveJacobian

KIND_A = 0
KIND_B = 1


@dataclass(frozen=True)
class NeoHookeanA:
    mu: float
    beta: float

    def __post_init__(self):
        if not (self.mu > 0 and self.beta > 0):
            raise ValueError(f"NeoHookeanA needs mu > 0 and beta > 0, got {self}")

    @classmethod
    def from_poisson(cls, mu, nu):
        """beta = 2 nu / (1 - nu)."""
        if not 0.0 < nu < 0.5:
            raise ValueError("Poisson ratio must lie in (0, 0.5)")
        return cls(mu=mu, beta=2.0 * nu / (1.0 - nu))

    @property
    def params(self):
        return KIND_A, float(self.mu), float(self.beta)

    def to_dict(self):
        return {"model": "neo_hookean_a", "mu": self.mu, "beta": self.beta}


@dataclass(frozen=True)
class NeoHookeanB:
    E: float
    nu: float

    def __post_init__(self):
        if not (self.E > 0 and 0.0 < self.nu < 0.5):
            raise ValueError(f"NeoHookeanB needs E > 0 and 0 < nu < 0.5, got {self}")

    @property
    def lam(self):
        return self.E * self.nu / ((1.0 + self.nu) * (1.0 - 2.0 * self.nu))

    @property
    def mu(self):
        return self.E / (2.0 * (1.0 + self.nu))

    @property
    def params(self):
        return KIND_B, float(self.lam), float(self.mu)

    def to_dict(self):
        return {"model": "neo_hookean_b", "E": self.E, "nu": self.nu}


Material = NeoHookeanA | NeoHookeanB


def material_from_dict(d):
    d = dict(d)
    model = d.pop("model")
    if model == "neo_hookean_a":
        if "beta" in d:
            return NeoHookeanA(mu=float(d["mu"]), beta=float(d["beta"]))
        return NeoHookeanA.from_poisson(float(d["mu"]), float(d["nu"]))
    if model == "neo_hookean_b":
        return NeoHookeanB(E=float(d["E"]), nu=float(d["nu"]))
    raise ValueError(f"unknown material model {model!r}")


def parameter_arrays(materials, phase_index):
    """Per-point (kind, p1, p2) arrays for a phase map."""
    table = np.array([m.params for m in materials], dtype=float).reshape(-1, 3)
    idx = np.asarray(phase_index, dtype=np.int64).ravel()
    return (table[idx, 0].astype(np.int64), table[idx, 1].copy(), table[idx, 2].copy())


# --------------------------------------------------------------------------
# point kernels


@njit
def _constitutive_numba(kind, p1, p2, F, want_tangent):
    n = F.shape[0]
    psi = np.empty(n)
    P = np.empty((n, 2, 2))
    if want_tangent:
        K = np.empty((n, 2, 2, 2, 2))
    else:
        K = np.empty((0, 2, 2, 2, 2))
    Fi = np.empty((2, 2))
    for q in range(n):
        f11 = F[q, 0, 0]
        f12 = F[q, 0, 1]
        f21 = F[q, 1, 0]
        f22 = F[q, 1, 1]
        J = f11 * f22 - f12 * f21
        if not J > 0.0:
            return q, psi, P, K
        Fi[0, 0] = f22 / J
        Fi[0, 1] = -f12 / J
        Fi[1, 0] = -f21 / J
        Fi[1, 1] = f11 / J
        trC = f11 * f11 + f12 * f12 + f21 * f21 + f22 * f22
        if kind[q] == 0:
            mu = p1[q]
            beta = p2[q]
            Jb = J ** (-beta)
            psi[q] = 0.5 * mu * (trC - 2.0) + mu / beta * (Jb - 1.0)
            a = mu * Jb
            for i in range(2):
                for j in range(2):
                    P[q, i, j] = mu * F[q, i, j] - a * Fi[j, i]
            if want_tangent:
                for i in range(2):
                    for j in range(2):
                        for k in range(2):
                            for l in range(2):
                                v = a * (beta * Fi[j, i] * Fi[l, k] + Fi[j, k] * Fi[l, i])
                                if i == k and j == l:
                                    v += mu
                                K[q, i, j, k, l] = v
        else:
            lam = p1[q]
            mu = p2[q]
            lj = np.log(J)
            psi[q] = 0.5 * lam * lj * lj - mu * lj + 0.5 * mu * (trC - 2.0)
            s = lam * lj - mu
            for i in range(2):
                for j in range(2):
                    P[q, i, j] = mu * F[q, i, j] + s * Fi[j, i]
            if want_tangent:
                for i in range(2):
                    for j in range(2):
                        for k in range(2):
                            for l in range(2):
                                v = lam * Fi[j, i] * Fi[l, k] - s * Fi[j, k] * Fi[l, i]
                                if i == k and j == l:
                                    v += mu
                                K[q, i, j, k, l] = v
    return -1, psi, P, K


def _constitutive_numpy(kind, p1, p2, F, want_tangent):
    n = F.shape[0]
    J = F[:, 0, 0] * F[:, 1, 1] - F[:, 0, 1] * F[:, 1, 0]
    bad = np.flatnonzero(~(J > 0.0))
    if bad.size:
        return int(bad[0]), np.empty(n), np.empty((n, 2, 2)), np.empty((0, 2, 2, 2, 2))
    Fi = np.empty_like(F)
    Fi[:, 0, 0] = F[:, 1, 1]
    Fi[:, 0, 1] = -F[:, 0, 1]
    Fi[:, 1, 0] = -F[:, 1, 0]
    Fi[:, 1, 1] = F[:, 0, 0]
    Fi /= J[:, None, None]
    FiT = np.swapaxes(Fi, 1, 2)
    trC = np.einsum("qij,qij->q", F, F)
    lj = np.log(J)
    isA = kind == KIND_A

    # variant A: P = mu F - mu J^-beta F^-T ; variant B: P = mu F + (lam log J - mu) F^-T
    beta = np.where(isA, p2, 1.0)
    mu = np.where(isA, p1, p2)
    lam = np.where(isA, 0.0, p1)
    Jb = np.where(isA, J ** (-beta), 0.0)
    psi = np.where(
        isA,
        0.5 * mu * (trC - 2.0) + mu / beta * (Jb - 1.0),
        0.5 * lam * lj**2 - mu * lj + 0.5 * mu * (trC - 2.0),
    )
    coef = np.where(isA, -mu * Jb, lam * lj - mu)
    P = mu[:, None, None] * F + coef[:, None, None] * FiT
    if not want_tangent:
        return -1, psi, P, np.empty((0, 2, 2, 2, 2))
    # A: mu dd + mu J^-b (b Fi_ji Fi_lk + Fi_jk Fi_li)
    # B: mu dd + lam Fi_ji Fi_lk - s Fi_jk Fi_li
    c_vol = np.where(isA, mu * Jb * beta, lam)
    c_rot = np.where(isA, mu * Jb, -coef)
    K = (
        c_vol[:, None, None, None, None] * np.einsum("qji,qlk->qijkl", Fi, Fi)
        + c_rot[:, None, None, None, None] * np.einsum("qjk,qli->qijkl", Fi, Fi)
        + mu[:, None, None, None, None] * np.einsum("ik,jl->ijkl", np.eye(2), np.eye(2))[None]
    )
    return -1, psi, P, K


constitutive_kernel = select(_constitutive_numba, _constitutive_numpy)


def evaluate_points(kind, p1, p2, F, want_tangent=True):
    """Energy, stress and (optionally) tangent at a stack of points.

    ``F`` has shape ``(n, 2, 2)``; ``kind``, ``p1``, ``p2`` are the per-point
    arrays from :func:`parameter_arrays`.  Raises
    :class:`NonPositiveJacobian` with ``location`` set to the flat index of
    the first point with ``det F <= 0``.
    """
    F = np.ascontiguousarray(F, dtype=float)
    bad, psi, P, K = constitutive_kernel(kind, p1, p2, F, want_tangent)
    if bad >= 0:
        raise NonPositiveJacobian(
            f"det F = {F[bad, 0, 0] * F[bad, 1, 1] - F[bad, 0, 1] * F[bad, 1, 0]:.6g} "
            f"<= 0 at point {bad}",
            location=int(bad),
        )
    return psi, P, (K if want_tangent else None)


def _single(m, F, want_tangent):
    F = np.asarray(F, dtype=float).reshape(1, 2, 2)
    k, a, b = m.params
    return evaluate_points(
        np.array([k], dtype=np.int64), np.array([a]), np.array([b]), F, want_tangent
    )


def energy(m, F):
    return float(_single(m, F, False)[0][0])


def stress(m, F):
    return _single(m, F, False)[1][0]


def tangent(m, F):
    return _single(m, F, True)[2][0]
