"""Cholesky-like SPD parametrization of symbol blocks.

A weight block ``theta in R^C`` (``C = c(c+1)/2``) fills a lower-triangular
``L`` and ``psi(theta) = L L^T``.  The ``C`` unique entries of a symmetric
``c x c`` block are stored in the order

    c=1: (0,0)
    c=2: (0,0) (1,1) (0,1)
    c=3: (0,0) (1,1) (0,1) (2,2) (1,2) (0,2)

and the same order indexes the entries of ``L`` (``L[1,0] = theta_3`` etc.).
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .transform import ModeSet

_PAIRS = {
    1: ((0, 0),),
    2: ((0, 0), (1, 1), (0, 1)),
    3: ((0, 0), (1, 1), (0, 1), (2, 2), (1, 2), (0, 2)),
}


def n_unique(c: int) -> int:
    return c * (c + 1) // 2


def entry_pairs(c: int) -> tuple[tuple[int, int], ...]:
    try:
        return _PAIRS[c]
    except KeyError:
        raise ValueError(f"unsupported number of nodal components c={c}") from None


def planes_to_blocks(planes: np.ndarray, c: int) -> np.ndarray:
    """``(C, *shape)`` unique entries -> ``(*shape, c, c)`` symmetric blocks."""
    planes = np.asarray(planes)
    out = np.empty(planes.shape[1:] + (c, c), dtype=planes.dtype)
    for m, (i, j) in enumerate(entry_pairs(c)):
        out[..., i, j] = planes[m]
        out[..., j, i] = planes[m]
    return out


def blocks_to_planes(blocks: np.ndarray) -> np.ndarray:
    c = blocks.shape[-1]
    return np.stack([blocks[..., i, j] for i, j in entry_pairs(c)])


def lower_factor(theta: np.ndarray, c: int) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    L = np.zeros(theta.shape[:-1] + (c, c))
    for m, (i, j) in enumerate(entry_pairs(c)):
        L[..., j, i] = theta[..., m]
    return L


def factor_to_theta(L: np.ndarray) -> np.ndarray:
    c = L.shape[-1]
    return np.stack([L[..., j, i] for i, j in entry_pairs(c)], axis=-1)


@lru_cache(maxsize=None)
def _psi_tensors(c: int) -> tuple[np.ndarray, np.ndarray]:
    """Constant tensors ``G`` with ``psi_m(theta) = theta^T G_m theta``.

    Returns ``(G, dG)`` where ``G`` has shape ``(C, C, C)``; the Hessian of
    entry ``m`` is ``2 G_m`` (symmetrized).
    """
    C = n_unique(c)
    pairs = entry_pairs(c)
    pos = {}
    for a, (i, j) in enumerate(pairs):
        pos[(j, i)] = a  # L[j, i] = theta_a for i <= j
    G = np.zeros((C, C, C))
    for m, (r, s) in enumerate(pairs):
        # (L L^T)_{rs} = sum_k L[r,k] L[s,k]
        for k in range(c):
            if (r, k) in pos and (s, k) in pos:
                G[m, pos[(r, k)], pos[(s, k)]] += 1.0
    G = 0.5 * (G + G.transpose(0, 2, 1))
    return G, 2.0 * G


def psi(theta: np.ndarray, c: int) -> np.ndarray:
    """Unique entries of ``L L^T``; ``theta`` has shape ``(..., C)``."""
    G, _ = _psi_tensors(c)
    theta = np.asarray(theta, dtype=float)
    return np.einsum("...a,mab,...b->...m", theta, G, theta)


def psi_matrix(theta: np.ndarray, c: int) -> np.ndarray:
    L = lower_factor(theta, c)
    return L @ np.swapaxes(L, -1, -2)


def psi_jacobian(theta: np.ndarray, c: int) -> np.ndarray:
    """``d psi_m / d theta_a``, shape ``(..., C, C)``."""
    G, _ = _psi_tensors(c)
    return 2.0 * np.einsum("mab,...b->...ma", G, np.asarray(theta, dtype=float))


def psi_hessian(c: int) -> np.ndarray:
    """Constant second derivatives ``d^2 psi_m / d theta_a d theta_b``, ``(C, C, C)``."""
    return _psi_tensors(c)[1]


def identity_theta(c: int, scale: float = 1.0) -> np.ndarray:
    """Weights with ``psi(theta) = scale * I``."""
    return factor_to_theta(np.sqrt(scale) * np.eye(c))


def theta_from_spd(mat: np.ndarray, floor: float = 0.0) -> np.ndarray:
    """Weights reproducing symmetric ``mat`` after flooring eigenvalues at ``floor``."""
    mat = 0.5 * (mat + np.swapaxes(mat, -1, -2))
    w, V = np.linalg.eigh(mat)
    w = np.maximum(w, floor)
    L = np.linalg.cholesky((V * w[..., None, :]) @ np.swapaxes(V, -1, -2)
                           + 1e-300 * np.eye(mat.shape[-1]))
    return factor_to_theta(L)


def n_weights(modes: ModeSet, c: int) -> int:
    return n_unique(c) * (modes.k_max + 1)


def split_theta(theta: np.ndarray, modes: ModeSet, c: int) -> tuple[np.ndarray, np.ndarray]:
    theta = np.asarray(theta, dtype=float)
    C = n_unique(c)
    if theta.shape != (C * (modes.k_max + 1),):
        raise ValueError(f"expected {C * (modes.k_max + 1)} weights, got {theta.shape}")
    blocks = theta.reshape(modes.k_max + 1, C)
    return blocks[0], blocks[1:]


def global_psi(theta: np.ndarray, modes: ModeSet, c: int) -> np.ndarray:
    """Symbol planes ``v`` of shape ``(C, *plan.lengths)`` from all weights."""
    bypass, learned = split_theta(theta, modes, c)
    C = n_unique(c)
    n = modes.plan.n
    v = np.repeat(psi(bypass, c)[:, None], n, axis=1)
    freqs, owners, w = modes.incidence
    contrib = psi(learned, c)[owners] * w[:, None]
    for m in range(C):
        v[m] += np.bincount(freqs, weights=contrib[:, m], minlength=n)
    return v.reshape((C,) + modes.plan.lengths)
