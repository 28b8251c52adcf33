"""Dense 2x2 / 2x2x2x2 tensor algebra.

Tensors are plain ``numpy`` arrays of shape ``(2, 2)`` and ``(2, 2, 2, 2)``.
Flat vectors use the row-major order ``(F11, F12, F21, F22)`` everywhere:
dataset files, surrogate inputs and FEM quadrature data.
"""
import numpy as np

from .errors import SingularTensor

DIM = 2
SINGULAR_TOL = 1e-12

I2 = np.eye(DIM)
# I4[i,j,k,l] = delta_ik delta_jl, so ddot42(I4, t) == t
I4 = np.einsum("ik,jl->ijkl", I2, I2)


def as_tensor2(t):
    a = np.array(t, dtype=float).reshape(DIM, DIM)
    if not np.all(np.isfinite(a)):
        raise ValueError("tensor has non-finite entries")
    return a


def as_tensor4(c):
    a = np.array(c, dtype=float).reshape(DIM, DIM, DIM, DIM)
    if not np.all(np.isfinite(a)):
        raise ValueError("tensor has non-finite entries")
    return a


def det2(t):
    return t[..., 0, 0] * t[..., 1, 1] - t[..., 0, 1] * t[..., 1, 0]


def inv2(t):
    """Closed-form inverse; works on stacks of shape (..., 2, 2)."""
    t = np.asarray(t, dtype=float)
    d = det2(t)
    if np.any(np.abs(d) <= SINGULAR_TOL):
        raise SingularTensor(f"|det| <= {SINGULAR_TOL:g}")
    out = np.empty_like(t)
    out[..., 0, 0] = t[..., 1, 1]
    out[..., 0, 1] = -t[..., 0, 1]
    out[..., 1, 0] = -t[..., 1, 0]
    out[..., 1, 1] = t[..., 0, 0]
    return out / np.asarray(d)[..., None, None]


def ddot42(c, t):
    """(C : t)_ij = C_ijkl t_kl, broadcasting over leading axes."""
    return np.einsum("...ijkl,...kl->...ij", c, t)


def ddot22(a, b):
    return np.einsum("...ij,...ij->...", a, b)


def dot22(a, b):
    return np.einsum("...ij,...jk->...ik", a, b)


def flatten(t):
    """Tensor2 -> FlatVec4 (F11, F12, F21, F22); works on stacks."""
    t = np.asarray(t, dtype=float)
    return t.reshape(t.shape[:-2] + (DIM * DIM,))


def unflatten(v):
    v = np.asarray(v, dtype=float)
    return v.reshape(v.shape[:-1] + (DIM, DIM))


def tensor4_to_matrix(c):
    """Tensor4 -> 4x4 matrix with rows (ij) and columns (kl) in flat order."""
    c = np.asarray(c, dtype=float)
    return c.reshape(c.shape[:-4] + (DIM * DIM, DIM * DIM))


def matrix_to_tensor4(m):
    m = np.asarray(m, dtype=float)
    return m.reshape(m.shape[:-2] + (DIM, DIM, DIM, DIM))


def unit2(k, l):
    """Unit tensor E_kl."""
    e = np.zeros((DIM, DIM))
    e[k, l] = 1.0
    return e


def major_asymmetry(c):
    """max |C_ijkl - C_klij| / max |C| (0 for the zero tensor)."""
    m = tensor4_to_matrix(c)
    scale = np.max(np.abs(m))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(m - np.swapaxes(m, -1, -2))) / scale)
