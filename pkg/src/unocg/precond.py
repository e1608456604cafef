"""Preconditioners for CG: identity, Jacobi and symbol-based (FANS / UNO).

A symbol-based preconditioner applies ``T^{-1} (Phi . T r)`` with one
symmetric ``c x c`` block ``Phi(q)`` per grid frequency ``q``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import transform as _tf
from .grid import DofMap
from .parametrization import (blocks_to_planes, entry_pairs, global_psi, n_unique,
                              planes_to_blocks)
from .physics import PhaseParams, ProblemSpec, jacobi_diagonal, matvec
from .transform import ModeSet, TransformPlan


@dataclass(frozen=True, eq=False)
class Symbol:
    """Unique block entries ``planes[m]`` (shape ``(C, *plan.lengths)``)."""

    planes: np.ndarray
    c: int
    plan: TransformPlan
    zero_block_null: bool = False

    def __post_init__(self):
        planes = np.ascontiguousarray(self.planes, dtype=float)
        want = (n_unique(self.c),) + self.plan.lengths
        if planes.shape != want:
            raise ValueError(f"symbol planes have shape {planes.shape}, expected {want}")
        planes.setflags(write=False)
        object.__setattr__(self, "planes", planes)

    @classmethod
    def from_blocks(cls, blocks: np.ndarray, plan: TransformPlan, **kw) -> "Symbol":
        blocks = np.asarray(blocks, dtype=float)
        if not np.allclose(blocks, np.swapaxes(blocks, -1, -2), rtol=0, atol=1e-12 * max(1.0, np.abs(blocks).max())):
            raise ValueError("symbol blocks must be symmetric")
        return cls(blocks_to_planes(blocks), blocks.shape[-1], plan, **kw)

    @classmethod
    def constant(cls, mat, plan: TransformPlan) -> "Symbol":
        mat = np.atleast_2d(np.asarray(mat, dtype=float))
        return cls.from_blocks(np.broadcast_to(mat, plan.lengths + mat.shape), plan)

    @property
    def blocks(self) -> np.ndarray:
        """``(*plan.lengths, c, c)`` symmetric blocks."""
        return planes_to_blocks(self.planes, self.c)

    def scaled(self, factor: float) -> "Symbol":
        return Symbol(self.planes * factor, self.c, self.plan, self.zero_block_null)


# --------------------------------------------------------------------------
# preconditioners
# --------------------------------------------------------------------------

class Preconditioner:
    """Linear SPD operator ``r -> s``; counts its applications."""

    name = "abstract"

    def __init__(self, ndof: int):
        self.ndof = int(ndof)
        self.calls = 0

    def _check(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if r.shape != (self.ndof,):
            raise ValueError(f"expected residual of length {self.ndof}, got {r.shape}")
        return r

    def apply(self, r: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, r: np.ndarray) -> np.ndarray:
        return self.apply(r)


class IdentityPreconditioner(Preconditioner):
    name = "none"

    def apply(self, r):
        r = self._check(r)
        self.calls += 1
        return r.copy()


class JacobiPreconditioner(Preconditioner):
    name = "jacobi"

    def __init__(self, inv_diag: np.ndarray):
        inv_diag = np.asarray(inv_diag, dtype=float)
        super().__init__(inv_diag.size)
        self.inv_diag = inv_diag

    @classmethod
    def from_spec(cls, spec: ProblemSpec) -> "JacobiPreconditioner":
        return cls(jacobi_diagonal(spec))

    def apply(self, r):
        r = self._check(r)
        self.calls += 1
        return self.inv_diag * r


class SymbolPreconditioner(Preconditioner):
    """``s = T^{-1} (Phi . T r)`` with one block product per frequency."""

    def __init__(self, symbol: Symbol, name: str = "uno"):
        super().__init__(symbol.c * symbol.plan.n)
        self.symbol = symbol
        self.name = name
        self._blocks = np.ascontiguousarray(symbol.blocks)

    def apply(self, r):
        r = self._check(r)
        self.calls += 1
        plan, c = self.symbol.plan, self.symbol.c
        rh = _tf.forward(plan, r.reshape(plan.lengths + (c,)))
        if c == 1:
            sh = self._blocks[..., 0] * rh
        else:
            sh = np.einsum("...ij,...j->...i", self._blocks, rh)
        return _tf.inverse(plan, sh).reshape(-1)


def identity(ndof: int) -> IdentityPreconditioner:
    return IdentityPreconditioner(ndof)


def apply(p: Preconditioner, r: np.ndarray) -> np.ndarray:
    return p.apply(r)


# --------------------------------------------------------------------------
# symbols
# --------------------------------------------------------------------------

def reference_spec(params: PhaseParams, dmap: DofMap) -> ProblemSpec:
    """Homogeneous problem with the phase-averaged material of ``params``."""
    single = params.reference()
    d = dmap.grid.d
    nload = d if params.kind == "thermal" else d * (d + 1) // 2
    return ProblemSpec(params.kind, dmap, np.zeros(dmap.grid.dims, dtype=np.int8),
                       single, np.zeros(nload))


def stiffness_symbol(spec: ProblemSpec) -> np.ndarray:
    """Fourier symbol ``A(k)`` of a homogeneous periodic stiffness, ``(*dims, c, c)``.

    The stiffness is block-circulant, so its response to a unit impulse in
    component ``j`` is a convolution stencil whose unnormalized DFT is the
    column ``A(:, j)(k)`` at every frequency at once.
    """
    dmap = spec.dmap
    if not dmap.bc.all_periodic:
        raise ValueError("the Fourier symbol exists only for fully periodic boundary conditions")
    if np.any(spec.indicator != spec.indicator.flat[0]):
        raise ValueError("stiffness symbol requires a homogeneous material")
    c, dims = dmap.c, dmap.free_dims
    axes = tuple(range(len(dims)))
    out = np.empty(dims + (c, c), dtype=complex)
    for j in range(c):
        probe = np.zeros(dmap.ndof)
        probe[j] = 1.0
        resp = matvec(spec, probe).reshape(dims + (c,))
        out[..., :, j] = np.fft.fftn(resp, axes=axes)
    scale = np.abs(out).max()
    if np.abs(out.imag).max() > 1e-10 * scale:
        raise ValueError("reference stiffness symbol is not real")
    sym = out.real
    return 0.5 * (sym + np.swapaxes(sym, -1, -2))


def fans_symbol(params: PhaseParams, dmap: DofMap, rcond: float = 1e-10) -> Symbol:
    """Pseudo-inverse of the homogeneous reference stiffness symbol.

    ``params`` with two different phases is reduced to their arithmetic
    mean; the zero-frequency block is set to zero (shared null space).
    """
    spec = reference_spec(params, dmap)
    A = stiffness_symbol(spec)
    c = dmap.c
    flat = A.reshape(-1, c, c)
    w = np.linalg.eigvalsh(flat)
    top = np.abs(w).max()
    bad = w[1:, 0] <= rcond * top
    if bad.any():
        raise ValueError("reference stiffness symbol is singular at a nonzero frequency")
    inv = np.empty_like(flat)
    inv[1:] = np.linalg.inv(flat[1:])
    inv[0] = 0.0
    inv = 0.5 * (inv + np.swapaxes(inv, -1, -2))
    plan = TransformPlan.for_dofmap(dmap)
    return Symbol.from_blocks(inv.reshape(A.shape), plan, zero_block_null=True)


def fans_apply(symbol: Symbol, r: np.ndarray) -> np.ndarray:
    """FANS application written directly with ``numpy.fft`` on a periodic grid."""
    plan, c = symbol.plan, symbol.c
    if plan.sine_axes:
        raise ValueError("FANS requires a fully periodic plan")
    axes = tuple(range(plan.d))
    rh = np.fft.fftn(np.asarray(r, dtype=float).reshape(plan.lengths + (c,)), axes=axes)
    blocks = symbol.blocks
    sh = np.zeros_like(rh)
    for i in range(c):
        for j in range(c):
            sh[..., i] += blocks[..., i, j] * rh[..., j]
    return np.fft.ifftn(sh, axes=axes).real.reshape(-1)


def uno_symbol(theta: np.ndarray, modes: ModeSet, c: int) -> Symbol:
    return Symbol(global_psi(theta, modes, c), c, modes.plan)


# --------------------------------------------------------------------------
# spectrum utilities
# --------------------------------------------------------------------------

@dataclass
class SpectrumResult:
    passed: bool
    lam_min: float
    lam_max: float
    n_below: int
    eps: float
    eigenvalues: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "lambda_min": self.lam_min, "lambda_max": self.lam_max,
                "n_below": self.n_below, "eps": self.eps}


def block_eigenvalues(sym: Symbol) -> np.ndarray:
    """``(n, c)`` eigenvalues of every block in flat frequency order."""
    return np.linalg.eigvalsh(sym.blocks.reshape(-1, sym.c, sym.c))


def spectrum_check(sym: Symbol, eps: float = 1e-14, null_space: bool | None = None) -> SpectrumResult:
    """Every block must have eigenvalues above ``eps``.

    In null-space mode (default for symbols flagged ``zero_block_null``) the
    zero-frequency block is only required to be positive semidefinite.
    """
    null_space = sym.zero_block_null if null_space is None else null_space
    ev = block_eigenvalues(sym)
    if null_space:
        rest = ev[1:]
        passed = bool((rest > eps).all() and (ev[0] >= 0).all())
        below = int((rest <= eps).sum())
        scan = rest if rest.size else ev
    else:
        passed = bool((ev > eps).all())
        below = int((ev <= eps).sum())
        scan = ev
    return SpectrumResult(passed, float(scan.min()), float(scan.max()), below, float(eps), ev)


@dataclass
class Lemma1Result:
    matches: bool
    max_deviation: float
    dense_eigenvalues: np.ndarray = field(repr=False)
    block_eigenvalues: np.ndarray = field(repr=False)


def dense_preconditioner(sym: Symbol) -> np.ndarray:
    """Explicit ``T^H Q T`` (test scale) with frequency-major, component-minor ordering."""
    n, c = sym.plan.n, sym.c
    if n * c > 512:
        raise ValueError(f"dense preconditioner limited to 512 dofs, got {n * c}")
    T = np.kron(_tf.dense_matrix(sym.plan), np.eye(c))
    Q = np.zeros((n * c, n * c))
    blocks = sym.blocks.reshape(n, c, c)
    for q in range(n):
        Q[q * c:(q + 1) * c, q * c:(q + 1) * c] = blocks[q]
    return T.conj().T @ Q @ T


def lemma1_bruteforce(sym: Symbol, tol: float = 1e-9) -> Lemma1Result:
    P = dense_preconditioner(sym)
    dense = np.sort(np.linalg.eigvalsh(0.5 * (P + P.conj().T)))
    blocks = np.sort(block_eigenvalues(sym).ravel())
    dev = float(np.abs(dense - blocks).max())
    scale = max(1.0, float(np.abs(blocks).max()))
    return Lemma1Result(dev <= tol * scale, dev, dense, blocks)


__all__ = [
    "Symbol", "Preconditioner", "IdentityPreconditioner", "JacobiPreconditioner",
    "SymbolPreconditioner", "identity", "apply", "stiffness_symbol", "fans_symbol",
    "fans_apply", "uno_symbol", "spectrum_check", "block_eigenvalues", "SpectrumResult",
    "lemma1_bruteforce", "dense_preconditioner", "Lemma1Result", "reference_spec",
    "entry_pairs",
]
