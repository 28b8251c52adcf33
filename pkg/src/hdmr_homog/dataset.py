"""Offline stage: sample macroscopic deformations, solve the cell problem,
store ``(Fbar, psi_bar)`` records.

File format (UTF-8)::

    {"format_version": 1, "seed": ..., "lower": [...], "upper": [...], ...}
    1.0234,0.1021,-0.0312,0.98,1.234     <- one record per line, 17 significant digits

The first line is a JSON header; ``columns`` in the header names the CSV
fields of the remaining lines.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import json
import logging

import numpy as np

from . import micro
from . import oracles
from .errors import FormatError, HomogError, RejectionOverflow
from .tensor import det2, unflatten

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
DET_THRESHOLD = 0.05
FLAT_COLUMNS = ("F11", "F12", "F21", "F22")

# sampling boxes used for the laminate and the circular-inclusion cells;
# the cantilever box is a tighter inclusion box for bending-dominated runs
LAMINATE_BOX = ((0.7, -0.3, -0.3, 0.7), (1.3, 0.3, 0.3, 1.3))
INCLUSION_BOX = ((0.8, -0.5, -0.5, 0.8), (1.2, 0.5, 0.5, 1.2))
CANTILEVER_BOX = ((0.9, -0.25, -0.25, 0.9), (1.1, 0.25, 0.25, 1.1))
TOY1D_BOX = ((0.0,), (2.0,))


@dataclass(frozen=True)
class SamplingBox:
    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).reshape(-1)
        hi = np.asarray(self.upper, dtype=float).reshape(-1)
        if lo.shape != hi.shape or not np.all(lo < hi):
            raise ValueError("sampling box needs lower < upper componentwise")
        object.__setattr__(self, "lower", tuple(lo.tolist()))
        object.__setattr__(self, "upper", tuple(hi.tolist()))

    @property
    def dim(self):
        return len(self.lower)

    def contains(self, X):
        X = np.atleast_2d(X)
        return np.all((X >= np.array(self.lower)) & (X <= np.array(self.upper)), axis=-1)


def _admissible(X):
    if X.shape[1] != 4:
        return np.ones(X.shape[0], dtype=bool)
    return det2(unflatten(X)) > DET_THRESHOLD


def sample_box(box, n, seed):
    """``n`` i.i.d. uniform points; 2D deformations with det <= 0.05 are redrawn."""
    if n < 1:
        raise ValueError("need n >= 1 sample points")
    rng = np.random.default_rng(seed)
    lo, hi = np.array(box.lower), np.array(box.upper)
    kept, drawn, rejected = [], 0, 0
    while sum(len(k) for k in kept) < n:
        need = n - sum(len(k) for k in kept)
        X = rng.uniform(lo, hi, size=(need, box.dim))
        ok = _admissible(X)
        drawn += need
        rejected += int((~ok).sum())
        if rejected > 0.5 * max(drawn, n) and drawn >= n:
            raise RejectionOverflow(f"{rejected} of {drawn} draws rejected (det <= {DET_THRESHOLD})")
        kept.append(X[ok])
    return np.concatenate(kept)[:n]


def default_columns(D):
    return (FLAT_COLUMNS if D == 4 else tuple(f"x{r + 1}" for r in range(D))) + ("psi",)


@dataclass
class Dataset:
    inputs: np.ndarray  # (n, D)
    energies: np.ndarray  # (n,)
    box: SamplingBox
    seed: int
    rve: dict = field(default_factory=dict)
    columns: tuple | None = None  # defaults from the input dimension
    rejects: list = field(default_factory=list)  # (index, flat Fbar, error tag)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float).reshape(len(self.energies), -1)
        self.energies = np.asarray(self.energies, dtype=float).reshape(-1)
        if not np.all(np.isfinite(self.energies)):
            raise ValueError("energies must be finite")
        if self.columns is None:
            self.columns = default_columns(self.inputs.shape[1])
        self.columns = tuple(self.columns)
        if len(self.columns) != self.inputs.shape[1] + 1:
            raise ValueError("one column name per input plus 'psi' required")

    def __len__(self):
        return self.energies.size

    @property
    def records(self):
        return list(zip(map(tuple, self.inputs.tolist()), self.energies.tolist()))

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.inputs[idx], self.energies[idx], self.box, self.seed, dict(self.rve), self.columns)

    # ------------------------------------------------------------------ io

    def header(self):
        return {
            "format_version": FORMAT_VERSION,
            "seed": int(self.seed),
            "lower": list(self.box.lower),
            "upper": list(self.box.upper),
            "rve": self.rve,
            "columns": list(self.columns),
            "count": len(self),
        }

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(self.header(), sort_keys=True) + "\n")
            for x, e in zip(self.inputs, self.energies):
                fh.write(",".join(f"{v:.17g}" for v in (*x, e)) + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        if not lines:
            raise FormatError(f"{path}: empty dataset file", line=1)
        try:
            head = json.loads(lines[0])
            columns = tuple(head["columns"])
            box = SamplingBox(head["lower"], head["upper"])
            seed = int(head["seed"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: bad header ({exc})", line=1) from exc
        if head.get("format_version") != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported format version {head.get('format_version')}", line=1)
        rows = []
        for no, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            parts = line.split(",")
            if len(parts) != len(columns):
                raise FormatError(f"{path}: expected {len(columns)} fields, got {len(parts)}", line=no)
            try:
                vals = [float(p) for p in parts]
            except ValueError as exc:
                raise FormatError(f"{path}: {exc}", line=no) from exc
            if not all(np.isfinite(vals)):
                raise FormatError(f"{path}: non-finite value", line=no)
            rows.append(vals)
        if "count" in head and head["count"] != len(rows):
            raise FormatError(f"{path}: header announces {head['count']} records, found {len(rows)}")
        arr = np.array(rows, dtype=float).reshape(len(rows), len(columns))
        return cls(arr[:, :-1], arr[:, -1], box, seed, head.get("rve", {}), columns)

    def save_rejects(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("index," + ",".join(self.columns[:-1]) + ",error\n")
            for idx, x, tag in self.rejects:
                fh.write(f"{idx}," + ",".join(f"{v:.17g}" for v in x) + f",{tag}\n")


def _energy_function(problem, opts):
    if isinstance(problem, micro.RveProblem):
        def solve(x):
            return micro.solve_micro(problem, unflatten(x), opts).psi_bar

        return solve
    if isinstance(problem, oracles.Toy1dProblem):
        return lambda x: oracles.toy1d_micro_energy(problem, float(x[0]))
    if callable(problem):
        return problem
    raise TypeError(f"cannot build a dataset from {type(problem).__name__}")


def describe(problem):
    if isinstance(problem, micro.RveProblem):
        return problem.to_dict()
    if isinstance(problem, oracles.Toy1dProblem):
        return {"description": "toy1d", "L": problem.L}
    return {"description": getattr(problem, "__name__", "custom")}


def build_dataset(problem, box, n, seed, opts=None, threads=1, progress=None):
    """Solve the cell problem at ``n`` sampled points.

    Failed solves go to ``dataset.rejects`` and are skipped; records keep
    sampling order regardless of ``threads``.
    """
    X = sample_box(box, n, seed)
    solve = _energy_function(problem, opts or micro.SolverOptions())

    def work(i):
        try:
            return solve(X[i]), None
        except HomogError as exc:
            return None, type(exc).__name__

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, range(n)))
    else:
        results = []
        step = max(1, n // 100)
        for i in range(n):
            results.append(work(i))
            if progress is not None and ((i + 1) % step == 0 or i + 1 == n):
                progress(i + 1, n)
    keep = [i for i, (e, _) in enumerate(results) if e is not None]
    rejects = [(i, X[i].tolist(), tag) for i, (e, tag) in enumerate(results) if e is None]
    columns = default_columns(box.dim)
    ds = Dataset(
        X[keep],
        np.array([results[i][0] for i in keep], dtype=float),
        box,
        seed,
        describe(problem),
        columns,
        rejects,
    )
    if rejects:
        log.warning("%d of %d micro-solves failed", len(rejects), n)
    return ds


def split(dataset, train_fraction, seed):
    """Seeded random partition into (train, validation)."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    n = len(dataset)
    n_train = int(round(train_fraction * n))
    perm = np.random.default_rng(seed).permutation(n)
    return dataset.subset(np.sort(perm[:n_train])), dataset.subset(np.sort(perm[n_train:]))
