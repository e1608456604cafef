"""Element gather/scatter kernels behind the matrix-free stiffness action.

Two interchangeable paths: a numba ``@njit`` element loop and a vectorized
numpy gather/matmul/bincount path.  ``UNOCG_NUMBA=0`` in the environment
selects numpy; numba is also skipped when it cannot be imported.  Both paths
accumulate in element order, so results are deterministic.
"""

from __future__ import annotations

import os
import warnings

import numpy as np

try:
    from numba import njit
    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

    def njit(*args, **kw):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


def _env_wants_numba() -> bool:
    return os.environ.get("UNOCG_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")


_backend = "numba" if (_HAVE_NUMBA and _env_wants_numba()) else "numpy"
if _env_wants_numba() and not _HAVE_NUMBA:  # pragma: no cover
    warnings.warn("numba unavailable, falling back to numpy kernels")


def backend() -> str:
    return _backend


def set_backend(name: str) -> None:
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not _HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    _backend = name


@njit(cache=True)
def _matvec_nb(u, conn, phase, ke, c, out):
    nel, nloc = conn.shape
    nd = nloc * c
    ue = np.empty(nd)
    for e in range(nel):
        for a in range(nloc):
            g = conn[e, a]
            for j in range(c):
                ue[a * c + j] = u[g * c + j] if g >= 0 else 0.0
        k = ke[phase[e]]
        for a in range(nloc):
            g = conn[e, a]
            if g < 0:
                continue
            for i in range(c):
                row = a * c + i
                s = 0.0
                for b in range(nd):
                    s += k[row, b] * ue[b]
                out[g * c + i] += s


@njit(cache=True)
def _scatter_nb(conn, phase, fe, c, out):
    nel, nloc = conn.shape
    for e in range(nel):
        f = fe[phase[e]]
        for a in range(nloc):
            g = conn[e, a]
            if g < 0:
                continue
            for i in range(c):
                out[g * c + i] += f[a * c + i]


def _dof_index(conn: np.ndarray, n: int, c: int) -> np.ndarray:
    padded = np.where(conn < 0, n, conn)
    return (padded[:, :, None] * c + np.arange(c)).reshape(conn.shape[0], -1)


def _matvec_np(u, conn, phase, ke, c, n):
    up = np.concatenate([u.reshape(n, c), np.zeros((1, c))])
    ue = up[np.where(conn < 0, n, conn)].reshape(conn.shape[0], -1)
    fe = np.empty_like(ue)
    for p in range(ke.shape[0]):
        mask = phase == p
        if mask.any():
            fe[mask] = ue[mask] @ ke[p].T
    idx = _dof_index(conn, n, c)
    return np.bincount(idx.ravel(), weights=fe.ravel(), minlength=(n + 1) * c)[: n * c]


def element_matvec(u: np.ndarray, conn: np.ndarray, phase: np.ndarray,
                   ke: np.ndarray, c: int, n: int) -> np.ndarray:
    """Return ``sum_e K_{phase(e)} u_e`` scattered to free dofs.

    ``ke`` has shape ``(n_phase, nloc*c, nloc*c)``; ``conn`` is the
    ``(n_elem, nloc)`` free-node table with -1 for fixed nodes.
    """
    u = np.ascontiguousarray(u, dtype=np.float64)
    if _backend == "numba":
        out = np.zeros(n * c)
        _matvec_nb(u, conn, phase, ke, c, out)
        return out
    return _matvec_np(u, conn, phase, ke, c, n)


def element_scatter(conn: np.ndarray, phase: np.ndarray, fe: np.ndarray,
                    c: int, n: int) -> np.ndarray:
    """Scatter a per-phase element vector ``fe[phase(e)]`` onto free dofs."""
    if _backend == "numba":
        out = np.zeros(n * c)
        _scatter_nb(conn, phase, np.ascontiguousarray(fe), c, out)
        return out
    idx = _dof_index(conn, n, c)
    w = fe[phase]
    return np.bincount(idx.ravel(), weights=w.ravel(), minlength=(n + 1) * c)[: n * c]
