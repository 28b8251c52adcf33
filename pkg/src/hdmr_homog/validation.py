"""Oracle suites behind ``hdmr-homog validate``.

Each suite returns a list of :class:`Check` records plus optional table
lines; the CLI prints them and exits non-zero on any failure.
"""
from dataclasses import dataclass, field

import numpy as np

from . import dataset as ds
from . import micro, oracles, surrogate
from .materials import NeoHookeanA
from .tensor import unflatten


@dataclass
class Check:
    name: str
    value: float
    limit: float
    passed: bool = field(init=False)

    def __post_init__(self):
        self.value = float(self.value)
        self.passed = bool(self.value < self.limit)


@dataclass
class SuiteResult:
    checks: list
    table: list = field(default_factory=list)


def curl_norm(W, grid):
    """Relative norm of the Fourier curl xi_1 W^_i2 - xi_2 W^_i1."""
    xi1, xi2 = micro.wavenumbers(grid)
    What = np.fft.fftn(W, axes=(0, 1))
    curl = xi1[..., None] * What[..., :, 1] - xi2[..., None] * What[..., :, 0]
    scale = np.sqrt(xi1**2 + xi2**2).max() * np.linalg.norm(What)
    return float(np.linalg.norm(curl) / max(scale, 1e-300))


def suite_projection(seed=0, grid=31, n_fields=20):
    g = micro.RveGrid(grid, grid)
    rng = np.random.default_rng(seed)
    idem = mean = curl = full = 0.0
    for _ in range(n_fields):
        W = rng.standard_normal(g.shape + (2, 2))
        GW = micro.project(W, g)
        nGW = np.linalg.norm(GW)
        idem = max(idem, np.linalg.norm(micro.project(GW, g) - GW) / nGW)
        mean = max(mean, np.abs(GW.mean(axis=(0, 1))).max())
        curl = max(curl, curl_norm(GW, g))
        full = max(full, np.linalg.norm(micro.project_full(W, g) - GW) / nGW)
    return SuiteResult([
        Check(f"idempotency |G(GW) - GW| / |GW| ({grid}x{grid}, {n_fields} fields)", idem, 1e-10),
        Check("zero mean |<GW>|", mean, 1e-12),
        Check("Fourier curl of GW (relative)", curl, 1e-10),
        Check("real-FFT vs complex-FFT projection", full, 1e-12),
    ])


def suite_laminate(seed=0, grid=31, count=10):
    g = micro.RveGrid(grid, grid)
    m1, m2 = NeoHookeanA(100.0, 1.0), NeoHookeanA(1000.0, 1.0)
    cell = micro.laminate_rve(g, m1, m2)
    lam = oracles.LaminateProblem(m1, m2, cell.volume_fractions()[0])
    X = ds.sample_box(ds.SamplingBox(*ds.LAMINATE_BOX), count, seed)
    table = [f"{'F11':>8} {'F12':>8} {'F21':>8} {'F22':>8} {'psi FFT':>14} {'psi exact':>14} "
             f"{'rel psi':>9} {'rel P':>9} {'rel C':>9}"]
    e_psi = e_P = e_C = 0.0
    for x in X:
        F = unflatten(x)
        sol, C = micro.homogenize(cell, F)
        psi_a, P_a = oracles.laminate_energy_stress(lam, F)
        C_a = oracles.central_diff_tangent(lambda G: oracles.laminate_energy_stress(lam, G)[1], F)
        r_psi = abs(sol.psi_bar - psi_a) / abs(psi_a)
        r_P = np.linalg.norm(sol.Pbar - P_a) / np.linalg.norm(P_a)
        r_C = np.linalg.norm(C - C_a) / np.linalg.norm(C_a)
        e_psi, e_P, e_C = max(e_psi, r_psi), max(e_P, r_P), max(e_C, r_C)
        table.append(f"{x[0]:8.4f} {x[1]:8.4f} {x[2]:8.4f} {x[3]:8.4f} {sol.psi_bar:14.8e} {psi_a:14.8e} "
                     f"{r_psi:9.2e} {r_P:9.2e} {r_C:9.2e}")
    return SuiteResult([
        Check("max relative error psi_bar", e_psi, 1e-5),
        Check("max relative error P_bar", e_P, 1e-4),
        Check("max relative error C_bar vs central differences", e_C, 1e-3),
    ], table)


def bar_gap(k, t0, n_per_period=40):
    """Max nodal |u_fullfield - u_hom| and tip difference for wavenumber k,
    with the exact homogenized strain."""
    p = oracles.Toy1dProblem(L=1.0, k=k, t0=t0)
    n = n_per_period * k
    u = oracles.toy1d_fullfield(p, n)
    X = np.linspace(0.0, p.L, n + 1)
    u_hom = oracles.toy1d_homogenized_strain(t0) * X
    return float(np.abs(u - u_hom).max()), float(abs(u[-1] - u_hom[-1]) / abs(u_hom[-1]))


def suite_toy1d(seed=0, grid=None):
    rng = np.random.default_rng(seed)
    p = oracles.Toy1dProblem()
    # stress from the root-find equals the derivative of the cell energy
    err = 0.0
    for e in rng.uniform(0.05, 2.0, 5):
        h = 1e-5
        fd = (oracles.toy1d_micro_energy(p, e + h) - oracles.toy1d_micro_energy(p, e - h)) / (2 * h)
        err = max(err, abs(fd - oracles.toy1d_micro_stress(e)) / abs(fd))
    t0 = oracles.toy1d_micro_stress(1.0)
    gaps = [bar_gap(k, t0) for k in (10, 30, 100)]
    mono = max(gaps[1][0] / gaps[0][0], gaps[2][0] / gaps[1][0])
    table = [f"k = {k:3d}: max |u_ff - u_hom| = {g:.3e}, tip relative difference = {t:.3e}"
             for k, (g, t) in zip((10, 30, 100), gaps)]
    return SuiteResult([
        Check("cell stress vs d(psi_bar)/d(eps_bar)", err, 1e-6),
        Check("full-field gap ratio over k = 10, 30, 100 (< 1 means decreasing)", mono, 1.0),
        Check("tip difference at k = 100", gaps[2][1], 1e-2),
    ], table)


def row_oscillation(values, nx, ny):
    """Largest deviation of an element value from the mean of its two row
    neighbours, relative to the field range.

    ``values`` are per quadrature point of an ``nx x ny`` structured mesh
    (element ``i * ny + j``); the bottom and top element rows are skipped.
    """
    s = np.asarray(values, dtype=float).reshape(-1, 4).mean(axis=1).reshape(nx, ny)[:, 1:-1]
    dev = np.abs(s[1:-1] - 0.5 * (s[:-2] + s[2:]))
    return float(dev.max() / (s.max() - s.min()))


def random_model(rng, D=4, d=4, L=3, N=6):
    comps = [
        surrogate.ComponentNet(
            A=rng.normal(size=(d, D)) / np.sqrt(D),
            b=rng.normal(size=d) * 0.2,
            W=rng.normal(size=(N, d)) / np.sqrt(d),
            v=rng.normal(size=N) * 0.5,
            c=rng.normal(size=N) / N,
            v0=float(rng.normal()),
        )
        for _ in range(L)
    ]
    lo = rng.uniform(-1.0, 0.5, D)
    norm = surrogate.Normalization(lo, lo + rng.uniform(0.5, 2.0, D), -1.0, float(rng.uniform(1.0, 10.0)))
    return surrogate.HdmrModel(comps, norm)


def derivative_errors(model, x, h):
    """Relative central-difference errors of gradient and Hessian, step ``h``
    in normalized coordinates."""
    dx = model.norm.dx
    g = model.gradient(x, warn=False)
    H = model.hessian(x, warn=False)
    g_fd = np.empty_like(g)
    H_fd = np.empty_like(H)
    for r in range(x.size):
        e = np.zeros_like(x)
        e[r] = h * dx[r] / 2.0  # step h in xi = 2 (x - x_min) / dx - 1
        g_fd[r] = (model.evaluate(x + e, warn=False) - model.evaluate(x - e, warn=False)) / (2 * e[r])
        H_fd[:, r] = (model.gradient(x + e, warn=False) - model.gradient(x - e, warn=False)) / (2 * e[r])
    return (float(np.linalg.norm(g - g_fd) / np.linalg.norm(g)),
            float(np.linalg.norm(H - H_fd) / np.linalg.norm(H)))


def suite_derivatives(seed=0, grid=None, n_models=100):
    rng = np.random.default_rng(seed)
    worst_g = worst_H = 0.0
    ratios = []
    for _ in range(n_models):
        m = random_model(rng)
        x = m.norm.x_min + rng.uniform(0.0, 1.0, m.D) * m.norm.dx
        eg1, eH1 = derivative_errors(m, x, 2e-3)
        eg2, eH2 = derivative_errors(m, x, 1e-3)
        ratios += [eg1 / eg2, eH1 / eH2]
        eg, eH = derivative_errors(m, x, 1e-5)
        worst_g, worst_H = max(worst_g, eg), max(worst_H, eH)
    ratios = np.array(ratios)
    return SuiteResult([
        Check(f"gradient vs central differences ({n_models} models)", worst_g, 1e-6),
        Check("Hessian vs central differences", worst_H, 1e-5),
        Check("|error ratio under step halving - 4|", np.abs(ratios - 4.0).max(), 0.5),
    ])
