"""FFT-Galerkin solver for the periodic micro-equilibrium ``G * P(F) = 0``.

Fields live on an odd ``N1 x N2`` pixel grid and are stored as arrays of
shape ``(N1, N2, 2, 2)``.  The compatibility projection is applied in
Fourier space as

    G_ijkl(xi) = delta_ik xi_j xi_l / |xi|^2   (xi != 0),   G(0) = 0,

which maps any tensor field onto zero-mean gradient fields.  Newton steps
and fluctuation sensitivities are solved matrix-free with conjugate
gradients on the projected linearized operator.
"""
from dataclasses import dataclass, field
from functools import lru_cache
import logging

import numpy as np
import scipy.fft as sfft

from . import materials as mat
from .errors import CgStalled, NewtonDiverged, NonPositiveJacobian
from .tensor import as_tensor2, det2, ddot42

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RveGrid:
    """Cell ``(-L1, L1) x (-L2, L2)`` sampled at ``N1 x N2`` voxel centres."""

    N1: int
    N2: int
    L1: float = 1.0
    L2: float = 1.0

    def __post_init__(self):
        for n in (self.N1, self.N2):
            if int(n) != n or n < 1 or n % 2 == 0:
                raise ValueError(f"grid sizes must be odd positive integers, got {self.N1}x{self.N2}")
        if not (self.L1 > 0 and self.L2 > 0):
            raise ValueError("cell half-lengths must be positive")

    @property
    def shape(self):
        return (self.N1, self.N2)

    @property
    def size(self):
        return self.N1 * self.N2

    @property
    def spacing(self):
        return (2.0 * self.L1 / self.N1, 2.0 * self.L2 / self.N2)

    def coordinates(self):
        """Voxel centres X_j = -L + h (j - 1/2), j = 1..N, as (N1, N2) arrays."""
        h1, h2 = self.spacing
        x1 = -self.L1 + h1 * (np.arange(1, self.N1 + 1) - 0.5)
        x2 = -self.L2 + h2 * (np.arange(1, self.N2 + 1) - 0.5)
        return np.meshgrid(x1, x2, indexing="ij")


def wavenumbers(grid):
    """Scaled wavenumbers xi = pi k / L in FFT (``fftfreq``) ordering.

    Returns two ``(N1, N2)`` arrays; ``k`` runs over ``-(N-1)/2 .. (N-1)/2``.
    """
    k1 = np.fft.fftfreq(grid.N1, d=1.0 / grid.N1)
    k2 = np.fft.fftfreq(grid.N2, d=1.0 / grid.N2)
    xi1 = np.pi * k1 / grid.L1
    xi2 = np.pi * k2 / grid.L2
    return np.meshgrid(xi1, xi2, indexing="ij")


@lru_cache(maxsize=32)
def _half_spectrum(grid):
    # last axis keeps only k2 >= 0 (real-to-complex transform)
    k1 = np.fft.fftfreq(grid.N1, d=1.0 / grid.N1)
    k2 = np.fft.rfftfreq(grid.N2, d=1.0 / grid.N2)
    xi1 = (np.pi * k1 / grid.L1)[:, None] * np.ones((1, k2.size))
    xi2 = (np.pi * k2 / grid.L2)[None, :] * np.ones((k1.size, 1))
    n2 = xi1**2 + xi2**2
    inv = np.zeros_like(n2)
    inv[n2 > 0] = 1.0 / n2[n2 > 0]
    for a in (xi1, xi2, inv):
        a.setflags(write=False)
    return xi1, xi2, inv


def _apply_ghat(W_hat, xi1, xi2, inv):
    # (G:W)_ij = xi_j (W_il xi_l) / |xi|^2
    a = (W_hat[..., 0] * xi1[..., None] + W_hat[..., 1] * xi2[..., None]) * inv[..., None]
    out = np.empty_like(W_hat)
    out[..., 0] = a * xi1[..., None]
    out[..., 1] = a * xi2[..., None]
    return out


def project(W, grid):
    """Return ``G * W`` for a real tensor field of shape ``(N1, N2, 2, 2)``."""
    W = np.asarray(W, dtype=float)
    if W.shape != grid.shape + (2, 2):
        raise ValueError(f"field shape {W.shape} does not match grid {grid.shape}")
    xi1, xi2, inv = _half_spectrum(grid)
    W_hat = sfft.rfftn(W, axes=(0, 1))
    return sfft.irfftn(_apply_ghat(W_hat, xi1, xi2, inv), s=grid.shape, axes=(0, 1))


def project_full(W, grid):
    """Same as :func:`project` through the full complex DFT (reference path)."""
    xi1, xi2 = wavenumbers(grid)
    n2 = xi1**2 + xi2**2
    inv = np.zeros_like(n2)
    inv[n2 > 0] = 1.0 / n2[n2 > 0]
    W_hat = np.fft.fftn(np.asarray(W, dtype=float), axes=(0, 1))
    return np.fft.ifftn(_apply_ghat(W_hat, xi1, xi2, inv), axes=(0, 1)).real


# --------------------------------------------------------------------------
# problem definition


@dataclass
class RveProblem:
    grid: RveGrid
    phases: np.ndarray
    materials: list
    description: str = ""
    _params: tuple = field(init=False, repr=False)

    def __post_init__(self):
        self.phases = np.asarray(self.phases, dtype=np.int64)
        if self.phases.shape != self.grid.shape:
            raise ValueError(f"phase map shape {self.phases.shape} != grid {self.grid.shape}")
        if self.phases.min() < 0 or self.phases.max() >= len(self.materials):
            raise ValueError("phase map refers to an undefined material")
        self.materials = list(self.materials)
        self._params = mat.parameter_arrays(self.materials, self.phases)

    @property
    def params(self):
        return self._params

    def volume_fractions(self):
        counts = np.bincount(self.phases.ravel(), minlength=len(self.materials))
        return counts / self.grid.size

    def constitutive(self, F, want_tangent=True):
        """Per-voxel (psi, P, K) for a field ``F`` of shape (N1, N2, 2, 2)."""
        kind, p1, p2 = self._params
        n1, n2 = self.grid.shape
        try:
            psi, P, K = mat.evaluate_points(kind, p1, p2, F.reshape(-1, 2, 2), want_tangent)
        except NonPositiveJacobian as exc:
            ij = np.unravel_index(exc.location, self.grid.shape)
            raise NonPositiveJacobian(
                f"det F <= 0 at voxel {tuple(int(v) for v in ij)}", location=tuple(int(v) for v in ij)
            ) from None
        psi = psi.reshape(n1, n2)
        P = P.reshape(n1, n2, 2, 2)
        if K is not None:
            K = K.reshape(n1, n2, 2, 2, 2, 2)
        return psi, P, K

    def to_dict(self):
        return {
            "grid": [self.grid.N1, self.grid.N2],
            "lengths": [self.grid.L1, self.grid.L2],
            "materials": [m.to_dict() for m in self.materials],
            "description": self.description,
        }


def homogeneous_rve(grid, material):
    return RveProblem(grid, np.zeros(grid.shape, dtype=np.int64), [material], "homogeneous")


def laminate_rve(grid, material1, material2):
    """Layers normal to X1: the first ``(N1 + 1) // 2`` voxel columns hold phase 1.

    An odd grid cannot split 50/50; :meth:`RveProblem.volume_fractions`
    reports the realized fractions.
    """
    phases = np.ones(grid.shape, dtype=np.int64)
    phases[: (grid.N1 + 1) // 2, :] = 0
    return RveProblem(grid, phases, [material1, material2], "laminate")


def inclusion_rve(grid, matrix, inclusion, fraction=0.2):
    """Centred circular inclusion of area ``fraction * |cell|`` (centre-in-circle rasterization)."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("inclusion fraction must be in (0, 1)")
    area = 4.0 * grid.L1 * grid.L2
    radius = np.sqrt(fraction * area / np.pi)
    X1, X2 = grid.coordinates()
    phases = (X1**2 + X2**2 <= radius**2).astype(np.int64)
    return RveProblem(grid, phases, [matrix, inclusion], f"circular inclusion f={fraction:g}")


# --------------------------------------------------------------------------
# solver


@dataclass(frozen=True)
class SolverOptions:
    newton_tol: float = 1e-8
    newton_max_iter: int = 50
    cg_tol: float = 1e-10
    cg_max_iter: int | None = None

    def __post_init__(self):
        if not (self.newton_tol > 0 and self.newton_max_iter > 0 and self.cg_tol > 0):
            raise ValueError("solver options must be positive")
        if self.cg_max_iter is not None and self.cg_max_iter <= 0:
            raise ValueError("cg_max_iter must be positive")

    def cg_limit(self, grid):
        return self.cg_max_iter if self.cg_max_iter is not None else 10 * grid.size


@dataclass
class MicroSolution:
    F: np.ndarray
    Fbar: np.ndarray
    psi_bar: float
    Pbar: np.ndarray
    iterations: int
    residual_norm: float
    cg_iterations: int = 0


def conjugate_gradient(apply, b, tol, max_iter, atol=0.0, truncate=False):
    """Plain CG; stops when ||r|| <= max(tol * ||b||, atol).

    Loss of positive curvature at round-off level (||r|| already below
    1e-6 ||b||) ends the iteration with the current iterate.  With
    ``truncate`` any loss of curvature does so (the first search direction
    if no step was taken yet), which keeps Newton directions usable far
    from the solution.
    Returns ``(x, iterations)``.
    """
    x = np.zeros_like(b)
    r = b.copy()
    rr = float(np.vdot(r, r))
    bnorm = np.sqrt(rr)
    if bnorm == 0.0:
        return x, 0
    target = max(tol * bnorm, atol)
    if bnorm <= target:
        return x, 0
    p = r.copy()
    for it in range(1, max_iter + 1):
        Ap = apply(p)
        pAp = float(np.vdot(p, Ap))
        if not pAp > 0.0:
            if np.sqrt(rr) <= 1e-6 * bnorm:
                return x, it
            if truncate:
                return (x if it > 1 else p), it
            raise CgStalled(f"non-positive curvature p.Ap = {pAp:.3e} at CG iteration {it}")
        alpha = rr / pAp
        x += alpha * p
        r -= alpha * Ap
        rr_new = float(np.vdot(r, r))
        if np.sqrt(rr_new) <= target:
            return x, it
        p *= rr_new / rr
        p += r
        rr = rr_new
    raise CgStalled(f"CG did not reach {tol:g} in {max_iter} iterations "
                    f"(relative residual {np.sqrt(rr) / bnorm:.3e})")


def _linear_operator(K, grid):
    def apply(x):
        return project(ddot42(K, x), grid)

    return apply


def residual(problem, F):
    """``G * P(F)`` for a total deformation-gradient field."""
    _, P, _ = problem.constitutive(np.asarray(F, dtype=float), want_tangent=False)
    return project(P, problem.grid)


def solve_micro(problem, Fbar, opts=None, initial=None):
    """Newton-Krylov solve of ``G * P(Fbar + F~) = 0`` with ``<F~> = 0``.

    ``initial`` is an optional previous total field used as a warm start;
    only its compatible fluctuation part is kept.
    """
    opts = opts or SolverOptions()
    grid = problem.grid
    Fbar = as_tensor2(Fbar)
    if not det2(Fbar) > 0.0:
        raise NonPositiveJacobian(f"det(Fbar) = {det2(Fbar):.6g} <= 0", location="Fbar")
    F = np.broadcast_to(Fbar, grid.shape + (2, 2)).copy()
    cg_max = opts.cg_limit(grid)
    cg_total = 0
    r0 = None
    if initial is not None:
        # tolerance stays relative to the cold-start residual
        _, P, _ = problem.constitutive(F, want_tangent=False)
        r0 = float(np.linalg.norm(project(P, grid)))
        F += project(np.asarray(initial, dtype=float), grid)
    psi, P, K = problem.constitutive(F, want_tangent=True)
    for it in range(opts.newton_max_iter + 1):
        r = -project(P, grid)
        rn = float(np.linalg.norm(r))
        if r0 is None:
            r0 = rn
        # absolute floor: FFT round-off on a constant or already-equilibrated stress
        floor = 1e-13 * float(np.linalg.norm(P)) + 1e-300
        if rn <= opts.newton_tol * r0 or rn <= floor:
            return MicroSolution(
                F=F,
                Fbar=Fbar,
                psi_bar=float(psi.mean()),
                Pbar=P.mean(axis=(0, 1)),
                iterations=it,
                residual_norm=rn,
                cg_iterations=cg_total,
            )
        if it == opts.newton_max_iter:
            break
        # the inner solve need not beat the outer target by more than 1e-3
        dF, n_cg = conjugate_gradient(
            _linear_operator(K, grid), r, opts.cg_tol, cg_max,
            atol=1e-3 * opts.newton_tol * r0, truncate=True,
        )
        cg_total += n_cg
        F, psi, P, K = _line_search(problem, F, psi, dF, rn, r)
        log.debug("newton %d: |G*P| = %.3e (%d CG)", it + 1, rn, n_cg)
    raise NewtonDiverged(
        f"micro Newton did not converge in {opts.newton_max_iter} iterations "
        f"(|G*P| = {rn:.3e}, initial {r0:.3e})",
        iterations=opts.newton_max_iter,
        residual=rn,
    )


def _line_search(problem, F, psi, dF, rn, r, max_halvings=40):
    """Backtracking on the mean energy along a compatible direction.

    A step is taken when it keeps every det F positive and either lowers
    the energy (Armijo) or the equilibrium residual; the full step is
    almost always accepted close to the solution.
    """
    e0 = float(psi.mean())
    slope = -float(np.vdot(r, dF)) / psi.size  # d<psi>/d alpha at 0
    alpha = 1.0
    for _ in range(max_halvings):
        trial = F + alpha * dF
        try:
            psi_t, P_t, K_t = problem.constitutive(trial, want_tangent=True)
        except NonPositiveJacobian:
            alpha *= 0.5
            continue
        if float(psi_t.mean()) <= e0 + 1e-4 * alpha * min(slope, 0.0) or \
                np.linalg.norm(project(P_t, problem.grid)) < rn:
            return trial, psi_t, P_t, K_t
        alpha *= 0.5
    raise NewtonDiverged("line search found no acceptable micro step", residual=rn)


def macro_tangent(problem, sol, opts=None):
    """Effective tangent ``<K : (I + dF~/dFbar)>`` via four CG sensitivity solves."""
    opts = opts or SolverOptions()
    grid = problem.grid
    _, _, K = problem.constitutive(sol.F, want_tangent=True)
    apply = _linear_operator(K, grid)
    cg_max = opts.cg_limit(grid)
    C = np.empty((2, 2, 2, 2))
    for k in range(2):
        for l in range(2):
            Kkl = np.ascontiguousarray(K[..., k, l])
            S, _ = conjugate_gradient(apply, -project(Kkl, grid), opts.cg_tol, cg_max)
            C[:, :, k, l] = (Kkl + ddot42(K, S)).mean(axis=(0, 1))
    return C


def homogenize(problem, Fbar, opts=None, initial=None, with_tangent=True):
    """Convenience wrapper: (solution, tangent or None)."""
    sol = solve_micro(problem, Fbar, opts, initial)
    C = macro_tangent(problem, sol, opts) if with_tangent else None
    return sol, C


FIELD_COLUMNS = ("X1", "X2", "F11", "F12", "F21", "F22", "P11", "P12", "P21", "P22", "psi")


def export_fields(problem, sol, path):
    """Write per-voxel fields as CSV with columns :data:`FIELD_COLUMNS`.

    Rows follow C order of the grid (X1 index slowest).
    """
    psi, P, _ = problem.constitutive(sol.F, want_tangent=False)
    X1, X2 = problem.grid.coordinates()
    table = np.column_stack(
        [X1.ravel(), X2.ravel(), sol.F.reshape(-1, 4), P.reshape(-1, 4), psi.ravel()]
    )
    np.savetxt(path, table, delimiter=",", header=",".join(FIELD_COLUMNS), comments="", fmt="%.17g")
