"""HDMR-structured neural network for the macroscopic energy density.

The model is a sum of ``L`` one-hidden-layer tanh networks, each fed with
its own linear reduction ``y = A xi + b`` of the normalized input:

    g(xi) = sum_i [ sum_n c_n tanh(w_n . (A xi + b) + v_n) + v0 ]
    f(x)  = df/2 (g(xi(x)) + 1) + f_min,   xi_r = 2 (x_r - x_min_r) / dx_r - 1

Gradient and Hessian are exact; in physical units they carry the factors
``df/dx_r`` and ``2 df/(dx_r dx_s)``.
"""
from dataclasses import dataclass, field
import json
import logging
import warnings

import numpy as np

from .errors import FormatError, InsufficientData, TrainingDiverged

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


class ExtrapolationWarning(UserWarning):
    """Evaluation point outside the training box."""


@dataclass
class ComponentNet:
    A: np.ndarray  # (d, D)
    b: np.ndarray  # (d,)
    W: np.ndarray  # (N, d)
    v: np.ndarray  # (N,)
    c: np.ndarray  # (N,)
    v0: float

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        self.W = np.atleast_2d(np.asarray(self.W, dtype=float))
        self.v = np.asarray(self.v, dtype=float).reshape(-1)
        self.c = np.asarray(self.c, dtype=float).reshape(-1)
        self.v0 = float(self.v0)
        d, D = self.A.shape
        N = self.W.shape[0]
        if not (1 <= d <= D and N >= 1):
            raise ValueError(f"bad component shape: d={d}, D={D}, N={N}")
        if self.b.shape != (d,) or self.W.shape != (N, d) or self.v.shape != (N,) or self.c.shape != (N,):
            raise ValueError("component arrays have inconsistent shapes")
        for a in (self.A, self.b, self.W, self.v, self.c, np.array([self.v0])):
            if not np.all(np.isfinite(a)):
                raise ValueError("component weights must be finite")

    @property
    def n_params(self):
        return self.A.size + self.b.size + self.W.size + self.v.size + self.c.size + 1

    def pack(self):
        return np.concatenate([self.A.ravel(), self.b, self.W.ravel(), self.v, self.c, [self.v0]])

    @classmethod
    def unpack(cls, theta, d, D, N):
        i = 0
        parts = []
        for size, shape in ((d * D, (d, D)), (d, (d,)), (N * d, (N, d)), (N, (N,)), (N, (N,))):
            parts.append(theta[i:i + size].reshape(shape))
            i += size
        return cls(*parts, v0=theta[i])

    def hidden(self, xi):
        """Pre-activations q (n, N) and the reduced coordinates y (n, d)."""
        y = xi @ self.A.T + self.b
        return y @ self.W.T + self.v, y

    def value(self, xi):
        q, _ = self.hidden(xi)
        return np.tanh(q) @ self.c + self.v0

    def grad(self, xi):
        q, _ = self.hidden(xi)
        t = np.tanh(q)
        return (self.c * (1.0 - t * t)) @ (self.W @ self.A)

    def hess(self, xi):
        q, _ = self.hidden(xi)
        t = np.tanh(q)
        WA = self.W @ self.A
        return np.einsum("pn,nr,ns->prs", self.c * 2.0 * t * (t * t - 1.0), WA, WA)

    def jacobian(self, xi):
        """d value / d theta for every row of ``xi``, in :meth:`pack` order."""
        q, y = self.hidden(xi)
        t = np.tanh(q)
        s = self.c * (1.0 - t * t)  # (n, N)
        dy = s @ self.W  # d value / d y, (n, d)
        n = xi.shape[0]
        return np.concatenate(
            [
                (dy[:, :, None] * xi[:, None, :]).reshape(n, -1),  # A
                dy,  # b
                (s[:, :, None] * y[:, None, :]).reshape(n, -1),  # W
                s,  # v
                t,  # c
                np.ones((n, 1)),  # v0
            ],
            axis=1,
        )


@dataclass
class Normalization:
    x_min: np.ndarray
    x_max: np.ndarray
    f_min: float
    f_max: float

    def __post_init__(self):
        self.x_min = np.asarray(self.x_min, dtype=float).reshape(-1)
        self.x_max = np.asarray(self.x_max, dtype=float).reshape(-1)
        self.f_min = float(self.f_min)
        self.f_max = float(self.f_max)
        if self.x_min.shape != self.x_max.shape or not np.all(self.x_max > self.x_min):
            raise ValueError("normalization needs x_max > x_min componentwise")
        if not self.f_max > self.f_min:
            raise ValueError("normalization needs f_max > f_min")

    @classmethod
    def from_data(cls, X, f):
        X = np.asarray(X, dtype=float)
        f = np.asarray(f, dtype=float)
        lo, hi = X.min(axis=0), X.max(axis=0)
        flat = hi <= lo
        lo = np.where(flat, lo - 0.5, lo)
        hi = np.where(flat, hi + 0.5, hi)
        f_lo, f_hi = float(f.min()), float(f.max())
        if not f_hi > f_lo:
            f_lo, f_hi = f_lo - 1.0, f_hi + 1.0
        return cls(lo, hi, f_lo, f_hi)

    @property
    def dx(self):
        return self.x_max - self.x_min

    @property
    def df(self):
        return self.f_max - self.f_min

    def scale_inputs(self, x):
        return 2.0 * (x - self.x_min) / self.dx - 1.0

    def scale_outputs(self, f):
        return 2.0 * (f - self.f_min) / self.df - 1.0

    def unscale_outputs(self, g):
        return 0.5 * self.df * (g + 1.0) + self.f_min

    def excursion(self, x):
        """Largest distance outside the box, as a fraction of the box width."""
        x = np.atleast_2d(x)
        out = np.maximum(self.x_min - x, x - self.x_max) / self.dx
        return np.maximum(out.max(axis=-1), 0.0)


@dataclass
class HdmrModel:
    components: list
    norm: Normalization
    metrics: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.components:
            raise ValueError("model needs at least one component")
        D = self.components[0].A.shape[1]
        if any(c.A.shape[1] != D for c in self.components) or self.norm.x_min.size != D:
            raise ValueError("components and normalization disagree on the input dimension")

    @property
    def D(self):
        return self.components[0].A.shape[1]

    @property
    def d(self):
        return self.components[0].A.shape[0]

    @property
    def L(self):
        return len(self.components)

    @property
    def N(self):
        return self.components[0].W.shape[0]

    @property
    def n_params(self):
        return sum(c.n_params for c in self.components)

    def _prepare(self, x, warn):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = np.atleast_2d(x).reshape(-1, self.D)
        if warn:
            exc = self.norm.excursion(X)
            if np.any(exc > 0.0):
                warnings.warn(
                    f"{int((exc > 0).sum())} point(s) outside the training box "
                    f"(max excursion {exc.max():.1%} of the box width)",
                    ExtrapolationWarning,
                    stacklevel=3,
                )
        return self.norm.scale_inputs(X), single

    def g(self, xi):
        return sum(c.value(xi) for c in self.components)

    def evaluate(self, x, warn=True):
        xi, single = self._prepare(x, warn)
        f = self.norm.unscale_outputs(self.g(xi))
        return float(f[0]) if single else f

    def gradient(self, x, warn=True):
        xi, single = self._prepare(x, warn)
        gx = sum(c.grad(xi) for c in self.components) * (self.norm.df / self.norm.dx)
        return gx[0] if single else gx

    def hessian(self, x, warn=True):
        """Matrix (D, D) per point; reshape to (2, 2, 2, 2) for D = 4."""
        xi, single = self._prepare(x, warn)
        dx = self.norm.dx
        h = sum(c.hess(xi) for c in self.components) * (2.0 * self.norm.df / np.outer(dx, dx))
        # summation order makes h_rs and h_sr differ by round-off; averaging is exact
        h = 0.5 * (h + np.swapaxes(h, -1, -2))
        return h[0] if single else h

    # ------------------------------------------------------------------ io

    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION,
            "D": self.D,
            "d": self.d,
            "L": self.L,
            "components": [
                {
                    "A": c.A.ravel().tolist(),
                    "d": int(c.A.shape[0]),
                    "b": c.b.tolist(),
                    "W": c.W.ravel().tolist(),
                    "N": int(c.W.shape[0]),
                    "v": c.v.tolist(),
                    "c": c.c.tolist(),
                    "v0": c.v0,
                }
                for c in self.components
            ],
            "normalization": {
                "x_min": self.norm.x_min.tolist(),
                "x_max": self.norm.x_max.tolist(),
                "f_min": self.norm.f_min,
                "f_max": self.norm.f_max,
            },
            "metrics": dict(self.metrics),
        }

    @classmethod
    def from_dict(cls, data):
        try:
            if data["format_version"] != FORMAT_VERSION:
                raise FormatError(f"unsupported model format version {data['format_version']}")
            D = int(data["D"])
            comps = []
            for cd in data["components"]:
                d, N = int(cd["d"]), int(cd["N"])
                comps.append(
                    ComponentNet(
                        A=np.array(cd["A"], dtype=float).reshape(d, D),
                        b=cd["b"],
                        W=np.array(cd["W"], dtype=float).reshape(N, d),
                        v=cd["v"],
                        c=cd["c"],
                        v0=cd["v0"],
                    )
                )
            nd = data["normalization"]
            norm = Normalization(nd["x_min"], nd["x_max"], nd["f_min"], nd["f_max"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed model file: {exc}") from exc
        if len(comps) != int(data["L"]):
            raise FormatError("component count does not match L")
        return cls(comps, norm, dict(data.get("metrics", {})))

    def save(self, path):
        # float repr is the shortest string that round-trips exactly
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}: {exc.msg}", line=exc.lineno) from exc
        return cls.from_dict(data)


# --------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainOptions:
    max_epochs: int = 200  # LM iterations per greedy component fit
    finetune_epochs: int = 400  # LM iterations of the global pass
    tol: float = 1e-12  # stop once the validation RMSE (normalized) drops below
    validation_fraction: float = 0.1
    seed: int = 0
    lm_damping: float = 1e-3
    max_lm_params: int = 4000  # above this the global pass uses Adam
    adam_lr: float = 1e-3
    chunk: int = 8192
    sweeps: int = 2  # greedy passes over the components (backfitting)
    restarts: int = 1  # independent initializations, best validation RMSE wins
    weight_decay: float = 1e-7  # ridge on all weights, per training record

    def __post_init__(self):
        if not (self.max_epochs > 0 and self.finetune_epochs >= 0 and self.tol > 0 and self.weight_decay >= 0):
            raise ValueError("training options must be positive")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in [0, 1)")


def random_component(rng, D, d, N):
    """Orthonormal reduction rows, tanh weights kept in the active range."""
    Q, _ = np.linalg.qr(rng.standard_normal((D, d)))
    return ComponentNet(
        A=Q.T.copy(),
        b=np.zeros(d),
        W=rng.uniform(-1.0, 1.0, (N, d)) / np.sqrt(d),
        v=rng.uniform(-1.0, 1.0, N),
        c=rng.uniform(-1.0, 1.0, N) / N,
        v0=0.0,
    )


def _rmse(r):
    return float(np.sqrt(np.mean(r * r))) if r.size else 0.0


class _Stack:
    """Several components viewed as one flat parameter vector."""

    def __init__(self, comps):
        self.shapes = [(c.A.shape[0], c.A.shape[1], c.W.shape[0]) for c in comps]
        self.sizes = [c.n_params for c in comps]

    def pack(self, comps):
        return np.concatenate([c.pack() for c in comps])

    def unpack(self, theta):
        out, i = [], 0
        for (d, D, N), n in zip(self.shapes, self.sizes):
            out.append(ComponentNet.unpack(theta[i:i + n], d, D, N))
            i += n
        return out


def _value(comps, xi):
    return sum(c.value(xi) for c in comps)


def _normal_equations(comps, xi, r, chunk):
    JtJ = None
    Jtr = None
    for s in range(0, xi.shape[0], chunk):
        J = np.concatenate([c.jacobian(xi[s:s + chunk]) for c in comps], axis=1)
        if JtJ is None:
            JtJ = J.T @ J
            Jtr = J.T @ r[s:s + chunk]
        else:
            JtJ += J.T @ J
            Jtr += J.T @ r[s:s + chunk]
    return JtJ, Jtr


def _levenberg_marquardt(comps, xi, target, epochs, opts, val=None, label=""):
    """Minimize ||sum(comps)(xi) - target|| over the weights of ``comps``.

    Returns the best components by validation RMSE (training RMSE when
    no validation data is given).
    """
    stack = _Stack(comps)
    theta = stack.pack(comps)
    r = _value(comps, xi) - target
    # ridge term keeps neurons from collapsing into near-step functions
    ridge = opts.weight_decay * xi.shape[0]
    loss = float(r @ r) + ridge * float(theta @ theta)
    if not np.isfinite(loss):
        raise TrainingDiverged(f"non-finite initial loss in {label} LM pass")
    lam = opts.lm_damping

    def score(cs):
        if val is None:
            return None
        return _rmse(_value(cs, val[0]) - val[1])

    best = (score(comps), theta.copy())
    stall = 0
    for epoch in range(epochs):
        JtJ, Jtr = _normal_equations(comps, xi, r, opts.chunk)
        JtJ[np.diag_indices_from(JtJ)] += ridge
        Jtr += ridge * theta
        diag = np.diag(JtJ).copy()
        accepted = False
        for _ in range(30):
            M = JtJ + lam * np.diag(diag + 1e-12 * (diag.max() + 1.0))
            try:
                step = np.linalg.solve(M, -Jtr)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            trial = stack.unpack(theta + step)
            r_new = _value(trial, xi) - target
            loss_new = float(r_new @ r_new) + ridge * float((theta + step) @ (theta + step))
            if not np.isfinite(loss_new):
                raise TrainingDiverged(f"non-finite loss in {label} LM step")
            if loss_new < loss:
                accepted = True
                break
            lam *= 4.0
            if lam > 1e12:
                break
        if not accepted:
            break
        rel_gain = (loss - loss_new) / max(loss, 1e-300)
        theta = theta + step
        comps, r, loss = trial, r_new, loss_new
        lam = max(lam / 3.0, 1e-12)
        if val is not None:
            s = score(comps)
            if s < best[0]:
                best = (s, theta.copy())
            if s <= opts.tol:
                break
        elif _rmse(r) <= opts.tol:
            best = (None, theta.copy())
            break
        stall = stall + 1 if rel_gain < 1e-9 else 0
        if stall >= 10:
            break
    if val is None:
        return stack.unpack(theta)
    return stack.unpack(best[1])


def _adam(comps, xi, target, epochs, opts, val=None):
    stack = _Stack(comps)
    theta = stack.pack(comps)
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    b1, b2 = 0.9, 0.999
    best = (np.inf, theta.copy())
    n = xi.shape[0]
    for epoch in range(1, epochs + 1):
        r = _value(comps, xi) - target
        _, Jtr = _normal_equations(comps, xi, r, opts.chunk)
        grad = 2.0 * Jtr / n + 2.0 * opts.weight_decay * theta
        if not np.all(np.isfinite(grad)):
            raise TrainingDiverged("non-finite gradient in Adam pass")
        m = b1 * m + (1 - b1) * grad
        v = b2 * v + (1 - b2) * grad * grad
        theta = theta - opts.adam_lr * (m / (1 - b1**epoch)) / (np.sqrt(v / (1 - b2**epoch)) + 1e-12)
        comps = stack.unpack(theta)
        s = _rmse(_value(comps, val[0]) - val[1]) if val is not None else _rmse(r)
        if s < best[0]:
            best = (s, theta.copy())
    return stack.unpack(best[1])


def train(X, f, arch, opts=None):
    """Fit an :class:`HdmrModel` to samples ``(X, f)``.

    ``arch = (L, d, N)``.  Components are fitted greedily, each to the
    residual left by the previous ones, then all weights are fine-tuned
    together.  ``model.metrics`` holds the normalized train/validation RMSE.
    """
    opts = opts or TrainOptions()
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    f = np.asarray(f, dtype=float).reshape(-1)
    if X.shape[0] != f.size or f.size == 0:
        raise InsufficientData("need a non-empty set of (input, energy) records")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(f))):
        raise ValueError("training records must be finite")
    L, d, N = (int(a) for a in arch)
    D = X.shape[1]
    if not (L >= 1 and N >= 1 and 1 <= d <= D):
        raise ValueError(f"invalid architecture L={L}, d={d}, N={N} for D={D}")

    rng = np.random.default_rng(opts.seed)
    n_val = int(round(opts.validation_fraction * f.size))
    order = rng.permutation(f.size)
    val_idx, tr_idx = np.sort(order[:n_val]), np.sort(order[n_val:])
    n_weights = L * (d * D + d + N * d + 2 * N + 1)
    if tr_idx.size < n_weights / 2:
        raise InsufficientData(f"{tr_idx.size} training records for {n_weights} weights")

    norm = Normalization.from_data(X[tr_idx], f[tr_idx])
    xi_all = norm.scale_inputs(X)
    g_all = norm.scale_outputs(f)
    xi, g = xi_all[tr_idx], g_all[tr_idx]
    val = (xi_all[val_idx], g_all[val_idx]) if n_val else None

    if n_val:
        score = lambda cs: _rmse(_value(cs, val[0]) - val[1])  # noqa: E731
    else:
        score = lambda cs: _rmse(_value(cs, xi) - g)  # noqa: E731
    best = None
    for trial_rng in (np.random.default_rng(s) for s in np.random.SeedSequence(opts.seed).spawn(opts.restarts)):
        comps = _fit(xi, g, val, (L, d, N), opts, trial_rng if opts.restarts > 1 else rng)
        sc = score(comps)
        log.info("restart: validation RMSE %.3e", sc)
        if best is None or sc < best[0]:
            best = (sc, comps)
    comps = best[1]

    model = HdmrModel(comps, norm)
    model.metrics = {
        "train_rmse": _rmse(model.g(xi) - g),
        "validation_rmse": _rmse(model.g(val[0]) - val[1]) if val is not None else None,
        "n_train": int(tr_idx.size),
        "n_validation": int(n_val),
        "n_weights": n_weights,
    }
    return model


def _fit(xi, g, val, arch, opts, rng):
    L, d, N = arch
    D = xi.shape[1]
    comps = [random_component(rng, D, d, N) for _ in range(L)]
    if np.ptp(g) == 0.0:
        # constant data: bias-only model
        for c in comps:
            c.c[:] = 0.0
            c.v0 = float(g[0]) / L
        return comps
    for sweep in range(opts.sweeps):
        for i in range(L):
            others = comps[:i] + comps[i + 1:] if sweep else comps[:i]
            resid = g - _value(others, xi) if others else g
            vres = (val[0], val[1] - _value(others, val[0])) if (val is not None and others) else val
            (comps[i],) = _levenberg_marquardt([comps[i]], xi, resid, opts.max_epochs, opts, vres, f"component {i}")
            log.debug("sweep %d component %d: train RMSE %.3e", sweep, i, _rmse(_value(comps[: i + 1] if not sweep else comps, xi) - g))
    if opts.finetune_epochs:
        if sum(c.n_params for c in comps) <= opts.max_lm_params:
            comps = _levenberg_marquardt(comps, xi, g, opts.finetune_epochs, opts, val, "global")
        else:
            comps = _adam(comps, xi, g, opts.finetune_epochs, opts, val)
    return comps
