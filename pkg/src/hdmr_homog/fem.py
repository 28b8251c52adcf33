"""Plane-strain finite-strain FEM on bilinear quadrilaterals.

The constitutive response at each quadrature point comes from a
*provider*: a direct material, the trained energy surrogate, or nested
FFT micro-solves.  Providers receive all quadrature-point deformation
gradients at once as an array ``(n_elements * 4, 2, 2)``, element-major.

Mesh file format (whitespace separated, ``#`` starts a comment)::

    NODES n
    id x y                      (n lines)
    ELEMS m
    id n1 n2 n3 n4 [mat]        (m lines, counter-clockwise node ids)
    DIRICHLET k
    node comp value             (comp 1 = X1, 2 = X2)
    TRACTION j
    n1 n2 tx ty                 (dead load per unit reference length)
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import logging
import warnings

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from . import materials as mat
from . import micro
from ._accel import njit, select
from .errors import FormatError, HomogError, NewtonDiverged, NonPositiveJacobian
from .surrogate import ExtrapolationWarning
from .tensor import flatten, inv2, matrix_to_tensor4, unflatten

log = logging.getLogger(__name__)

_G = 1.0 / np.sqrt(3.0)
GAUSS_POINTS = np.array([[-_G, -_G], [_G, -_G], [_G, _G], [-_G, _G]])
_REF_NODES = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])


def shape_functions(xi, eta):
    return 0.25 * (1 + _REF_NODES[:, 0] * xi) * (1 + _REF_NODES[:, 1] * eta)


def shape_gradients(xi, eta):
    """dN_a/d(xi, eta) as (4, 2)."""
    return 0.25 * np.column_stack(
        [_REF_NODES[:, 0] * (1 + _REF_NODES[:, 1] * eta), _REF_NODES[:, 1] * (1 + _REF_NODES[:, 0] * xi)]
    )


@dataclass
class MacroMesh:
    nodes: np.ndarray  # (nn, 2)
    elements: np.ndarray  # (ne, 4), counter-clockwise
    material: np.ndarray | None = None  # (ne,) material tag for heterogeneous runs
    dNdX: np.ndarray = field(init=False, repr=False)  # (ne, 4 qp, 4 nodes, 2)
    weights: np.ndarray = field(init=False, repr=False)  # (ne, 4) = w * detJ

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float).reshape(-1, 2)
        self.elements = np.asarray(self.elements, dtype=np.int64).reshape(-1, 4)
        if self.material is not None:
            self.material = np.asarray(self.material, dtype=np.int64).reshape(-1)
            if self.material.size != self.elements.shape[0]:
                raise ValueError("one material tag per element required")
        if self.elements.min() < 0 or self.elements.max() >= self.nodes.shape[0]:
            raise ValueError("element connectivity refers to unknown nodes")
        Xe = self.nodes[self.elements]  # (ne, 4, 2)
        ne = Xe.shape[0]
        self.dNdX = np.empty((ne, 4, 4, 2))
        self.weights = np.empty((ne, 4))
        for q, (xi, eta) in enumerate(GAUSS_POINTS):
            dN = shape_gradients(xi, eta)
            J = np.einsum("eai,aj->eij", Xe, dN)  # dX_i/dxi_j
            detJ = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
            if np.any(detJ <= 0.0):
                bad = int(np.flatnonzero(detJ <= 0.0)[0])
                raise NonPositiveJacobian(f"element {bad} has non-positive Jacobian", location=(bad, q))
            self.dNdX[:, q] = np.einsum("aj,eji->eai", dN, inv2(J))
            self.weights[:, q] = detJ
        self.qp_coords = np.einsum("qa,eai->eqi", np.array([shape_functions(*g) for g in GAUSS_POINTS]), Xe)

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_elements(self):
        return self.elements.shape[0]

    @property
    def n_dofs(self):
        return 2 * self.n_nodes

    def element_dofs(self):
        return np.stack([2 * self.elements, 2 * self.elements + 1], axis=-1).reshape(-1, 8)

    def nearest_node(self, point):
        return int(np.argmin(np.linalg.norm(self.nodes - np.asarray(point, dtype=float), axis=1)))

    def deformation_gradients(self, u):
        """F = I + grad u at every quadrature point, shape (ne * 4, 2, 2)."""
        ue = np.asarray(u, dtype=float).reshape(-1, 2)[self.elements]  # (ne, 4, 2)
        F = np.einsum("eai,eqaj->eqij", ue, self.dNdX)
        F[..., 0, 0] += 1.0
        F[..., 1, 1] += 1.0
        return F.reshape(-1, 2, 2)


@dataclass
class BoundaryConditions:
    dirichlet: list  # (node, component 0/1, value)
    tractions: list = field(default_factory=list)  # (n1, n2, tx, ty)

    def __post_init__(self):
        if not self.dirichlet:
            raise ValueError("at least one Dirichlet condition is required")

    def prescribed(self):
        dofs = np.array([2 * int(n) + int(c) for n, c, _ in self.dirichlet], dtype=np.int64)
        vals = np.array([float(v) for _, _, v in self.dirichlet])
        if np.unique(dofs).size != dofs.size:
            raise ValueError("duplicate Dirichlet conditions")
        return dofs, vals

    def load_vector(self, mesh):
        f = np.zeros(mesh.n_dofs)
        for n1, n2, tx, ty in self.tractions:
            length = np.linalg.norm(mesh.nodes[int(n2)] - mesh.nodes[int(n1)])
            for n in (int(n1), int(n2)):
                f[2 * n] += 0.5 * length * tx
                f[2 * n + 1] += 0.5 * length * ty
        return f


# --------------------------------------------------------------------------
# constitutive providers


class DirectProvider:
    """Closed-form material(s); ``materials[tag]`` per element tag (tag 0 if none)."""

    name = "direct"

    def __init__(self, mesh, materials):
        if isinstance(materials, (mat.NeoHookeanA, mat.NeoHookeanB)):
            materials = [materials]
        tags = mesh.material if mesh.material is not None else np.zeros(mesh.n_elements, dtype=np.int64)
        if tags.max() >= len(materials):
            raise ValueError("mesh material tag without a matching material")
        self._params = mat.parameter_arrays(materials, np.repeat(tags, 4))

    def response(self, F):
        _, P, C = mat.evaluate_points(*self._params, F, True)
        return P, C

    def energy(self, F):
        return mat.evaluate_points(*self._params, F, False)[0]


def _stretch_quadratics():
    # A = F^T F + J I and T = F:F + 2J as quadratic forms f^T Q f in the flat components
    qj = np.zeros((4, 4))
    qj[0, 3] = qj[3, 0] = 0.5
    qj[1, 2] = qj[2, 1] = -0.5
    qa = np.zeros((4, 4, 4))
    for a in range(2):
        for b in range(2):
            for i in range(2):
                p, q = 2 * i + a, 2 * i + b
                qa[2 * a + b, p, q] += 0.5
                qa[2 * a + b, q, p] += 0.5
    qa[0] += qj
    qa[3] += qj
    return qa, np.eye(4) + 2.0 * qj


_QA, _QT = _stretch_quadratics()


def right_stretch(F):
    """Right stretch U = sqrt(F^T F) of 2x2 tensors with det F > 0, and its derivatives.

    Uses the closed form U = (F^T F + J I) / sqrt(F:F + 2J).  Returns flat U
    ``(n, 4)``, dU/dF ``(n, 4, 4)`` and d2U/dF2 ``(n, 4, 4, 4)``.
    """
    f = flatten(F).reshape(-1, 4)
    a = np.einsum("kpq,np,nq->nk", _QA, f, f)
    da = 2.0 * np.einsum("kpq,nq->nkp", _QA, f)
    t = np.sqrt(np.einsum("pq,np,nq->n", _QT, f, f))
    dt = np.einsum("pq,nq->np", _QT, f) / t[:, None]
    ddt = _QT[None] / t[:, None, None] - np.einsum("np,nq->npq", dt, dt) / t[:, None, None]
    u = a / t[:, None]
    du = da / t[:, None, None] - np.einsum("nk,np->nkp", a, dt) / t[:, None, None] ** 2
    t1, t2, t3 = (t ** -m for m in (1, 2, 3))
    dtdt = np.einsum("np,nq->npq", dt, dt)
    ddu = (
        2.0 * _QA[None] * t1[:, None, None, None]
        - (np.einsum("nkp,nq->nkpq", da, dt) + np.einsum("np,nkq->nkpq", dt, da)) * t2[:, None, None, None]
        + a[:, :, None, None] * (2.0 * dtdt * t3[:, None, None] - ddt * t2[:, None, None])[:, None]
    )
    return u, du, ddu


class SurrogateProvider:
    """Stress and tangent from the analytical derivatives of a trained model.

    With ``objective=True`` the model is evaluated at the right stretch U(F)
    and shifted so that the identity is stress free:
    psi(F) = m(U) - m(I) - dm/dU(I) : (U - I).  This gives an energy that is
    invariant under rotations and has no residual stress at F = I; the plain
    provider feeds F straight into the model.
    """

    name = "surrogate"

    def __init__(self, model, excursion_limit=0.1, objective=False):
        if model.D != 4:
            raise ValueError("the macro FEM needs a surrogate with D = 4 inputs")
        self.model = model
        self.excursion_limit = excursion_limit
        self.objective = objective
        self.extrapolations = []  # (max excursion, qp index) per flagged call
        if objective:
            e = flatten(np.eye(2))[None]
            self._m0 = float(model.evaluate(e, warn=False)[0])
            self._g0 = model.gradient(e, warn=False)[0]

    def _check(self, x):
        exc = self.model.norm.excursion(x)
        worst = int(np.argmax(exc))
        if exc[worst] > self.excursion_limit:
            self.extrapolations.append((float(exc[worst]), worst))
            warnings.warn(
                f"surrogate extrapolation: {int((exc > self.excursion_limit).sum())} quadrature point(s) "
                f"beyond {self.excursion_limit:.0%} of the training box; worst element {worst // 4} "
                f"qp {worst % 4} at {exc[worst]:.1%}",
                ExtrapolationWarning,
                stacklevel=3,
            )

    def response(self, F):
        if not self.objective:
            x = flatten(F)
            self._check(x)
            P = unflatten(self.model.gradient(x, warn=False))
            C = matrix_to_tensor4(self.model.hessian(x, warn=False))
            return P, C
        shape = np.shape(F)[:-2]
        u, du, ddu = right_stretch(F)
        self._check(u)
        g = self.model.gradient(u, warn=False) - self._g0
        h = self.model.hessian(u, warn=False)
        p = np.einsum("nk,nkp->np", g, du)
        c = np.einsum("nkp,nkl,nlq->npq", du, h, du) + np.einsum("nk,nkpq->npq", g, ddu)
        return unflatten(p).reshape(shape + (2, 2)), matrix_to_tensor4(c).reshape(shape + (2, 2, 2, 2))

    def energy(self, F):
        if not self.objective:
            return self.model.evaluate(flatten(F), warn=False)
        shape = np.shape(F)[:-2]
        u = right_stretch(F)[0]
        e = flatten(np.eye(2))
        psi = self.model.evaluate(u, warn=False) - self._m0 - (u - e) @ self._g0
        return psi.reshape(shape)


class NestedProvider:
    """FE-FFT: one micro-solve (with tangent) per quadrature point.

    The last converged micro field at every point is kept as a warm start.
    Points are independent, so ``threads > 1`` solves them concurrently
    with identical results.
    """

    name = "nested"

    def __init__(self, problem, opts=None, threads=1):
        self.problem = problem
        self.opts = opts or micro.SolverOptions()
        self.threads = threads
        self.n_solves = 0
        self._state = {}

    def _solve(self, q, Fq):
        try:
            sol, C = micro.homogenize(self.problem, Fq, self.opts, initial=self._state.get(q))
        except HomogError as exc:
            err = type(exc).__new__(type(exc))
            HomogError.__init__(err, f"element {q // 4} qp {q % 4}: {exc}")
            err.__dict__.update(exc.__dict__)
            raise err from exc
        return sol, C

    def response(self, F):
        n = F.shape[0]
        if self.threads > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                results = list(pool.map(self._solve, range(n), F))
        else:
            results = [self._solve(q, F[q]) for q in range(n)]
        P = np.empty((n, 2, 2))
        C = np.empty((n, 2, 2, 2, 2))
        for q, (sol, Cq) in enumerate(results):
            self._state[q] = sol.F
            P[q] = sol.Pbar
            C[q] = Cq
        self.n_solves += n
        return P, C

    def energy(self, F):
        return np.array([micro.solve_micro(self.problem, Fq, self.opts).psi_bar for Fq in F])


# --------------------------------------------------------------------------
# element kernels


@njit
def _element_arrays_numba(dNdX, w, P, C, want_tangent):
    ne = dNdX.shape[0]
    fe = np.zeros((ne, 8))
    Ke = np.zeros((ne, 8, 8)) if want_tangent else np.zeros((0, 8, 8))
    for e in range(ne):
        for q in range(4):
            g = e * 4 + q
            wq = w[e, q]
            for a in range(4):
                for i in range(2):
                    s = 0.0
                    for J in range(2):
                        s += P[g, i, J] * dNdX[e, q, a, J]
                    fe[e, 2 * a + i] += wq * s
            if want_tangent:
                for a in range(4):
                    for i in range(2):
                        for b in range(4):
                            for k in range(2):
                                s = 0.0
                                for J in range(2):
                                    for L in range(2):
                                        s += dNdX[e, q, a, J] * C[g, i, J, k, L] * dNdX[e, q, b, L]
                                Ke[e, 2 * a + i, 2 * b + k] += wq * s
    return fe, Ke


def _element_arrays_numpy(dNdX, w, P, C, want_tangent):
    ne = dNdX.shape[0]
    Pq = P.reshape(ne, 4, 2, 2)
    fe = np.einsum("eq,eqiJ,eqaJ->eai", w, Pq, dNdX).reshape(ne, 8)
    if not want_tangent:
        return fe, np.zeros((0, 8, 8))
    Cq = C.reshape(ne, 4, 2, 2, 2, 2)
    Ke = np.einsum("eq,eqaJ,eqiJkL,eqbL->eaibk", w, dNdX, Cq, dNdX, optimize=True).reshape(ne, 8, 8)
    return fe, Ke


element_kernel = select(_element_arrays_numba, _element_arrays_numpy)


@dataclass
class MacroProblem:
    mesh: MacroMesh
    bc: BoundaryConditions
    tip: tuple | None = None  # reference point for displacement summaries
    name: str = ""


def assemble(mesh, bc, provider, u, want_tangent=True):
    """Residual (internal minus external force) and sparse tangent.

    Returns ``(residual, K, internal_force, P, F)`` with ``K`` a CSR matrix
    over all dofs (``None`` when ``want_tangent`` is false).
    """
    F = mesh.deformation_gradients(u)
    J = F[:, 0, 0] * F[:, 1, 1] - F[:, 0, 1] * F[:, 1, 0]
    if np.any(J <= 0.0):
        g = int(np.flatnonzero(J <= 0.0)[0])
        raise NonPositiveJacobian(f"element {g // 4} qp {g % 4} inverted (det F = {J[g]:.3e})", location=(g // 4, g % 4))
    P, C = provider.response(F)
    fe, Ke = element_kernel(mesh.dNdX, mesh.weights, np.ascontiguousarray(P),
                            np.ascontiguousarray(C), want_tangent)
    dofs = mesh.element_dofs()
    fint = np.bincount(dofs.ravel(), weights=fe.ravel(), minlength=mesh.n_dofs)
    K = None
    if want_tangent:
        rows = np.repeat(dofs, 8, axis=1).ravel()
        cols = np.tile(dofs, (1, 8)).ravel()
        K = sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(mesh.n_dofs,) * 2).tocsr()
    return fint - bc.load_vector(mesh), K, fint, P, F


@dataclass
class MacroSolution:
    u: np.ndarray  # (nn, 2)
    F: np.ndarray  # (ne * 4, 2, 2)
    P: np.ndarray
    S: np.ndarray
    qp_coords: np.ndarray  # (ne * 4, 2)
    reactions: np.ndarray  # full dof vector, nonzero on prescribed dofs
    residual_norm: float
    history: list  # per load step: list of relative residual norms

    @property
    def newton_iterations(self):
        return [len(h) - 1 for h in self.history]


@dataclass(frozen=True)
class MacroOptions:
    load_steps: int = 10
    tol: float = 1e-8
    max_iter: int = 25
    line_search: bool = False


def solve_macro(mesh, bc, provider, load_steps=None, opts=None):
    """Incremental Newton solve; loads and Dirichlet data scale linearly."""
    opts = opts or MacroOptions()
    load_steps = load_steps or opts.load_steps
    fixed, values = bc.prescribed()
    free = np.setdiff1d(np.arange(mesh.n_dofs), fixed)
    u = np.zeros(mesh.n_dofs)
    f_ext_full = bc.load_vector(mesh)
    history = []
    for step in range(1, load_steps + 1):
        lam = step / load_steps
        scaled = BoundaryConditions([(n, c, 0.0) for n, c, _ in bc.dirichlet],
                                    [(a, b, lam * tx, lam * ty) for a, b, tx, ty in bc.tractions])
        du_fixed = lam * values - u[fixed]
        R, K, fint, _, _ = assemble(mesh, scaled, provider, u)
        # first correction carries the prescribed increment through K_fd
        rhs = -R[free] - K[free][:, fixed] @ du_fixed
        u[fixed] += du_fixed
        steps = []
        for it in range(opts.max_iter + 1):
            if it > 0:
                R, K, fint, _, _ = assemble(mesh, scaled, provider, u)
                rhs = -R[free]
            ref = max(np.linalg.norm(lam * f_ext_full), np.linalg.norm(fint), 1e-300)
            rel = float(np.linalg.norm(R[free]) / ref) if it > 0 else np.inf
            if it > 0:
                steps.append(rel)
                log.debug("step %d it %d: relative residual %.3e", step, it, rel)
                if rel <= opts.tol or not np.any(R[free]):
                    break
            if it == opts.max_iter:
                raise NewtonDiverged(
                    f"macro Newton failed in load step {step}/{load_steps} after {it} iterations "
                    f"(relative residual {rel:.3e})",
                    iterations=it,
                    residual=rel,
                )
            du = spsolve(K[free][:, free].tocsc(), rhs)
            u = _damped_update(mesh, scaled, provider, u, free, du, np.linalg.norm(R[free]) if it > 0 else None,
                               opts.line_search, step)
        history.append([np.inf] + steps)
    R, _, fint, P, F = assemble(mesh, bc, provider, u, want_tangent=False)
    reactions = np.zeros(mesh.n_dofs)
    reactions[fixed] = R[fixed]
    S = np.einsum("qij,qjk->qik", inv2(F), P)
    return MacroSolution(
        u=u.reshape(-1, 2),
        F=F,
        P=P,
        S=S,
        qp_coords=mesh.qp_coords.reshape(-1, 2),
        reactions=reactions,
        residual_norm=float(np.linalg.norm(R[free])),
        history=history,
    )


def _damped_update(mesh, bc, provider, u, free, du, rnorm, line_search, step):
    """Apply a Newton correction, halving it while it inverts an element
    or (with ``line_search``) fails to reduce the free residual."""
    alpha = 1.0
    while alpha >= 1.0 / 64:
        u_try = u.copy()
        u_try[free] += alpha * du
        if np.all(_detF(mesh, u_try) > 0.0):
            if not line_search or rnorm is None:
                return u_try
            R = assemble(mesh, bc, provider, u_try, want_tangent=False)[0]
            if np.linalg.norm(R[free]) < rnorm:
                return u_try
        alpha *= 0.5
    if not line_search:
        raise NewtonDiverged(f"load step {step}: every Newton correction inverts an element")
    return u_try


def _detF(mesh, u):
    F = mesh.deformation_gradients(u)
    return F[:, 0, 0] * F[:, 1, 1] - F[:, 0, 1] * F[:, 1, 0]


def total_energy(mesh, provider, u):
    """Stored energy sum_q w_q psi(F_q)."""
    F = mesh.deformation_gradients(u)
    return float(np.dot(mesh.weights.ravel(), provider.energy(F)))


# --------------------------------------------------------------------------
# export


def export_solution(sol, path):
    """Two CSV blocks: nodal displacements, then per-quadrature F, P, S.

    Quadrature rows are element-major (element e, points 0..3).
    """
    nn = sol.u.shape[0]
    nq = sol.F.shape[0]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# nodes {nn}\nnode,u1,u2\n")
        for i, (a, b) in enumerate(sol.u):
            fh.write(f"{i},{a:.17g},{b:.17g}\n")
        fh.write(f"# quadrature {nq}\n")
        cols = ["element", "qp", "X1", "X2"] + [f"{t}{i}{j}" for t in "FPS" for i in (1, 2) for j in (1, 2)]
        fh.write(",".join(cols) + "\n")
        data = np.column_stack([sol.qp_coords, sol.F.reshape(nq, 4), sol.P.reshape(nq, 4), sol.S.reshape(nq, 4)])
        for g, row in enumerate(data):
            fh.write(f"{g // 4},{g % 4}," + ",".join(f"{v:.17g}" for v in row) + "\n")


def read_solution(path):
    """Inverse of :func:`export_solution`: dict with u, X, F, P, S arrays."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    nn = int(lines[0].split()[2])
    u = np.array([[float(v) for v in ln.split(",")[1:]] for ln in lines[2:2 + nn]])
    nq = int(lines[2 + nn].split()[2])
    rows = np.array([[float(v) for v in ln.split(",")[2:]] for ln in lines[4 + nn:4 + nn + nq]])
    return {
        "u": u.reshape(nn, 2),
        "X": rows[:, 0:2],
        "F": rows[:, 2:6].reshape(nq, 2, 2),
        "P": rows[:, 6:10].reshape(nq, 2, 2),
        "S": rows[:, 10:14].reshape(nq, 2, 2),
    }


# --------------------------------------------------------------------------
# mesh files and standard geometries


def read_mesh(path):
    """Parse the text mesh format; returns :class:`MacroProblem`."""
    with open(path, encoding="utf-8") as fh:
        raw = fh.read().splitlines()
    lines = []
    for no, ln in enumerate(raw, start=1):
        ln = ln.split("#", 1)[0].strip()
        if ln:
            lines.append((no, ln.split()))
    pos = 0
    sections = {}

    def block(count, width, conv, no):
        nonlocal pos
        out = []
        for _ in range(count):
            if pos >= len(lines):
                raise FormatError(f"{path}: unexpected end of file", line=no)
            lno, toks = lines[pos]
            if len(toks) not in width:
                raise FormatError(f"{path}: expected {width[0]} fields", line=lno)
            try:
                out.append([c(t) for c, t in zip(conv, toks)] + [lno])
            except ValueError as exc:
                raise FormatError(f"{path}: {exc}", line=lno) from exc
            pos += 1
        return out

    while pos < len(lines):
        no, toks = lines[pos]
        if len(toks) != 2 or toks[0].upper() not in ("NODES", "ELEMS", "DIRICHLET", "TRACTION"):
            raise FormatError(f"{path}: expected a section header, got {' '.join(toks)!r}", line=no)
        key = toks[0].upper()
        try:
            count = int(toks[1])
        except ValueError as exc:
            raise FormatError(f"{path}: bad count", line=no) from exc
        pos += 1
        if key == "NODES":
            sections[key] = block(count, (3,), (int, float, float), no)
        elif key == "ELEMS":
            sections[key] = block(count, (5, 6), (int, int, int, int, int, int), no)
        elif key == "DIRICHLET":
            sections[key] = block(count, (3,), (int, int, float), no)
        else:
            sections[key] = block(count, (4,), (int, int, float, float), no)
    if "NODES" not in sections or "ELEMS" not in sections:
        raise FormatError(f"{path}: NODES and ELEMS sections are required")
    # every parsed row ends with its source line number
    ids = {row[0]: i for i, row in enumerate(sections["NODES"])}
    if len(ids) != len(sections["NODES"]):
        raise FormatError(f"{path}: duplicate node ids")
    nodes = np.array([row[1:3] for row in sections["NODES"]])

    def node(n, lno):
        if n not in ids:
            raise FormatError(f"{path}: unknown node id {n}", line=lno)
        return ids[n]

    elems = np.array([[node(n, row[-1]) for n in row[1:5]] for row in sections["ELEMS"]])
    tags = [row[5] for row in sections["ELEMS"] if len(row) == 7]
    dirichlet = []
    for n, c, v, lno in sections.get("DIRICHLET", []):
        if c not in (1, 2):
            raise FormatError(f"{path}: Dirichlet component must be 1 or 2", line=lno)
        dirichlet.append((node(n, lno), c - 1, v))
    tractions = [(node(a, lno), node(b, lno), tx, ty) for a, b, tx, ty, lno in sections.get("TRACTION", [])]
    if tags and len(tags) != len(elems):
        raise FormatError(f"{path}: material tags given for some elements only")
    mesh = MacroMesh(nodes, elems, np.array(tags) if tags else None)
    return MacroProblem(mesh, BoundaryConditions(dirichlet, tractions))


def write_mesh(problem, path):
    mesh, bc = problem.mesh, problem.bc
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"NODES {mesh.n_nodes}\n")
        for i, (x, y) in enumerate(mesh.nodes):
            fh.write(f"{i + 1} {x:.17g} {y:.17g}\n")
        fh.write(f"ELEMS {mesh.n_elements}\n")
        for e, conn in enumerate(mesh.elements):
            tag = f" {mesh.material[e]}" if mesh.material is not None else ""
            fh.write(f"{e + 1} " + " ".join(str(n + 1) for n in conn) + tag + "\n")
        fh.write(f"DIRICHLET {len(bc.dirichlet)}\n")
        for n, c, v in bc.dirichlet:
            fh.write(f"{n + 1} {c + 1} {v:.17g}\n")
        fh.write(f"TRACTION {len(bc.tractions)}\n")
        for a, b, tx, ty in bc.tractions:
            fh.write(f"{a + 1} {b + 1} {tx:.17g} {ty:.17g}\n")


def structured_mesh(corners, nx, ny):
    """Bilinear map of an (nx x ny) grid onto a quadrilateral.

    ``corners`` are counter-clockwise starting at the lower-left one.
    Node (i, j) has index ``i * (ny + 1) + j``.
    """
    c = np.asarray(corners, dtype=float)
    s = np.linspace(0.0, 1.0, nx + 1)
    t = np.linspace(0.0, 1.0, ny + 1)
    S, T = np.meshgrid(s, t, indexing="ij")
    S, T = S.ravel(), T.ravel()
    nodes = (((1 - S) * (1 - T))[:, None] * c[0] + (S * (1 - T))[:, None] * c[1]
             + (S * T)[:, None] * c[2] + ((1 - S) * T)[:, None] * c[3])
    idx = np.arange((nx + 1) * (ny + 1)).reshape(nx + 1, ny + 1)
    elems = np.stack([idx[:-1, :-1], idx[1:, :-1], idx[1:, 1:], idx[:-1, 1:]], axis=-1).reshape(-1, 4)
    return nodes, elems, idx


def _clamp_and_load(idx, nodes, q0):
    left = idx[0, :]
    right = idx[-1, :]
    dirichlet = [(int(n), c, 0.0) for n in left for c in (0, 1)]
    tractions = [(int(a), int(b), 0.0, q0) for a, b in zip(right[:-1], right[1:])]
    return BoundaryConditions(dirichlet, tractions)


def cook_membrane(nx=8, ny=8, q0=4.0):
    """Trapezoid (0,0)-(48,44)-(48,60)-(0,44), left edge clamped, vertical
    dead traction ``q0`` on the right edge; tip reference at (48, 60)."""
    nodes, elems, idx = structured_mesh([(0, 0), (48, 44), (48, 60), (0, 44)], nx, ny)
    mesh = MacroMesh(nodes, elems)
    return MacroProblem(mesh, _clamp_and_load(idx, nodes, q0), tip=(48.0, 60.0), name="cook")


def cantilever(length=20.0, height=5.0, cells=(20, 5), elements_per_cell=(1, 1), q0=-0.25,
               inclusion_fraction=None):
    """Rectangular beam clamped on the left with a vertical dead traction
    ``q0`` on the right edge; tip reference at the upper right corner.

    The beam is tiled by ``cells[0] x cells[1]`` square unit cells, each
    meshed with ``elements_per_cell`` elements.  With
    ``inclusion_fraction`` set, elements whose centre lies inside the
    centred circle of their cell get material tag 1 (full-field model).
    """
    n1, n2 = cells
    m1, m2 = elements_per_cell
    size = length / n1
    if not np.isclose(size, height / n2):
        raise ValueError("cells must be square: length / cells[0] != height / cells[1]")
    nodes, elems, idx = structured_mesh([(0, 0), (length, 0), (length, height), (0, height)], n1 * m1, n2 * m2)
    tags = None
    if inclusion_fraction is not None:
        centre = nodes[elems].mean(axis=1)
        local = centre - size * (np.floor(centre / size) + 0.5)
        radius = np.sqrt(inclusion_fraction / np.pi) * size
        tags = (np.sum(local**2, axis=1) <= radius**2).astype(np.int64)
    mesh = MacroMesh(nodes, elems, tags)
    return MacroProblem(mesh, _clamp_and_load(idx, nodes, q0), tip=(length, height), name="cantilever")
