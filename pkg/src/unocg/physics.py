"""Voxel finite elements for periodic-cell heat conduction and linear elasticity.

Bilinear (2D) / trilinear (3D) elements with 2-point Gauss quadrature per
axis.  Each problem keeps one element matrix per phase; the stiffness
action is a pure gather/scatter over elements (see ``_kernels``).

Mandel notation is used for strains and stresses: shear components carry a
factor ``sqrt(2)`` so that the basis is orthonormal.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from functools import cached_property
from itertools import product
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .grid import AxisBC, DofMap

SQRT2 = np.sqrt(2.0)


# --------------------------------------------------------------------------
# Mandel notation
# --------------------------------------------------------------------------

def mandel_pairs(d: int) -> list[tuple[int, int]]:
    if d == 2:
        return [(0, 0), (1, 1), (0, 1)]
    if d == 3:
        return [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)]
    raise ValueError(f"unsupported dimension {d}")


def mandel_basis(d: int) -> np.ndarray:
    """Orthonormal basis tensors, shape ``(d(d+1)/2, d, d)``."""
    pairs = mandel_pairs(d)
    basis = np.zeros((len(pairs), d, d))
    for m, (i, j) in enumerate(pairs):
        if i == j:
            basis[m, i, i] = 1.0
        else:
            basis[m, i, j] = basis[m, j, i] = 1.0 / SQRT2
    return basis


def to_mandel(tensor: np.ndarray) -> np.ndarray:
    """Symmetric ``(..., d, d)`` tensor to ``(..., D)`` Mandel vector."""
    d = tensor.shape[-1]
    return np.einsum("...ij,mij->...m", tensor, mandel_basis(d))


def from_mandel(vec: np.ndarray, d: int) -> np.ndarray:
    return np.einsum("...m,mij->...ij", vec, mandel_basis(d))


def isotropic_stiffness(lam: float, mu: float, d: int) -> np.ndarray:
    """Mandel matrix of ``lam I(x)I + 2 mu I^s`` (plane strain for d=2)."""
    D = len(mandel_pairs(d))
    mat = 2.0 * mu * np.eye(D)
    mat[:d, :d] += lam
    return mat


def lame_from_young(E: float, nu: float) -> tuple[float, float]:
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    mu = E / (2.0 * (1.0 + nu))
    return lam, mu


# --------------------------------------------------------------------------
# element-level operators
# --------------------------------------------------------------------------

_GAUSS = (0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0))


def _corner_offsets(d: int) -> list[tuple[int, ...]]:
    return list(product((0, 1), repeat=d))


def shape_gradients(xi: Sequence[float], spacing: Sequence[float]) -> np.ndarray:
    """Physical gradients of the ``2**d`` corner shape functions at reference point ``xi``.

    Returns ``(2**d, d)``; corners ordered as in ``DofMap.element_nodes``.
    """
    d = len(spacing)
    out = np.empty((2 ** d, d))
    for a, off in enumerate(_corner_offsets(d)):
        vals = [xi[k] if off[k] else 1.0 - xi[k] for k in range(d)]
        for k in range(d):
            g = 1.0 if off[k] else -1.0
            for m in range(d):
                if m != k:
                    g *= vals[m]
            out[a, k] = g / spacing[k]
    return out


def _thermal_b(xi, spacing) -> np.ndarray:
    return shape_gradients(xi, spacing).T


def _elastic_b(xi, spacing) -> np.ndarray:
    grads = shape_gradients(xi, spacing)
    d = len(spacing)
    pairs = mandel_pairs(d)
    b = np.zeros((len(pairs), grads.shape[0] * d))
    for a in range(grads.shape[0]):
        for m, (i, j) in enumerate(pairs):
            if i == j:
                b[m, a * d + i] = grads[a, i]
            else:
                b[m, a * d + i] = grads[a, j] / SQRT2
                b[m, a * d + j] = grads[a, i] / SQRT2
    return b


def _quadrature(d: int):
    w = 0.5 ** d
    for xi in product(_GAUSS, repeat=d):
        yield xi, w


def element_stiffness_thermal(kappa: float, spacing: Sequence[float]) -> np.ndarray:
    if not kappa > 0:
        raise ValueError(f"conductivity must be positive, got {kappa}")
    spacing = tuple(spacing)
    vol = float(np.prod(spacing))
    ke = np.zeros((2 ** len(spacing),) * 2)
    for xi, w in _quadrature(len(spacing)):
        b = _thermal_b(xi, spacing)
        ke += w * vol * kappa * b.T @ b
    return ke


def element_stiffness_elastic(lam: float, mu: float, spacing: Sequence[float]) -> np.ndarray:
    if not mu > 0 or lam < 0:
        raise ValueError(f"invalid Lame parameters lam={lam}, mu={mu}")
    spacing = tuple(spacing)
    d = len(spacing)
    vol = float(np.prod(spacing))
    dmat = isotropic_stiffness(lam, mu, d)
    nd = 2 ** d * d
    ke = np.zeros((nd, nd))
    for xi, w in _quadrature(d):
        b = _elastic_b(xi, spacing)
        ke += w * vol * b.T @ dmat @ b
    return ke


# --------------------------------------------------------------------------
# problem description
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PhaseParams:
    """Material parameters of the two phases.

    ``kind`` is ``"thermal"`` (``kappa``) or ``"elastic"`` (``lam``/``mu``
    Lame pairs).  ``lam = 0`` is admitted since it corresponds to ``nu = 0``.
    """

    kind: str
    kappa: tuple[float, float] = (1.0, 1.0)
    lam: tuple[float, float] = (0.0, 0.0)
    mu: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        if self.kind == "thermal":
            if any(not k > 0 for k in self.kappa):
                raise ValueError(f"conductivities must be positive, got {self.kappa}")
        elif self.kind == "elastic":
            if any(not m > 0 for m in self.mu):
                raise ValueError(f"shear moduli must be positive, got {self.mu}")
            if any(not l >= 0 for l in self.lam):
                raise ValueError(f"first Lame parameter must be >= 0, got {self.lam}")
        else:
            raise ValueError(f"unknown physics {self.kind!r}")

    @classmethod
    def thermal(cls, kappa0: float, kappa1: float) -> "PhaseParams":
        return cls("thermal", kappa=(float(kappa0), float(kappa1)))

    @classmethod
    def elastic_lame(cls, lam0, mu0, lam1, mu1) -> "PhaseParams":
        return cls("elastic", lam=(float(lam0), float(lam1)), mu=(float(mu0), float(mu1)))

    @classmethod
    def elastic_young(cls, E0, nu0, E1, nu1) -> "PhaseParams":
        l0, m0 = lame_from_young(E0, nu0)
        l1, m1 = lame_from_young(E1, nu1)
        return cls.elastic_lame(l0, m0, l1, m1)

    def reference(self) -> "PhaseParams":
        """Homogeneous material with the arithmetic mean of both phases."""
        if self.kind == "thermal":
            k = 0.5 * sum(self.kappa)
            return PhaseParams.thermal(k, k)
        lam, mu = 0.5 * sum(self.lam), 0.5 * sum(self.mu)
        return PhaseParams.elastic_lame(lam, mu, lam, mu)

    def scaled_contrast(self, ratio: float) -> "PhaseParams":
        """Thermal only: keep phase 0, set ``kappa1 = kappa0 / ratio``."""
        if self.kind != "thermal":
            raise ValueError("contrast scaling is defined for thermal problems")
        return PhaseParams.thermal(self.kappa[0], self.kappa[0] / ratio)

    def material_matrix(self, phase: int, d: int) -> np.ndarray:
        if self.kind == "thermal":
            return self.kappa[phase] * np.eye(d)
        return isotropic_stiffness(self.lam[phase], self.mu[phase], d)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "kappa": list(self.kappa),
                "lam": list(self.lam), "mu": list(self.mu)}

    @classmethod
    def from_dict(cls, data: dict) -> "PhaseParams":
        return cls(data["kind"], tuple(data["kappa"]), tuple(data["lam"]), tuple(data["mu"]))


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    kind: str
    dmap: DofMap
    indicator: np.ndarray
    params: PhaseParams
    load: np.ndarray

    def __post_init__(self):
        d = self.dmap.grid.d
        ind = np.ascontiguousarray(self.indicator, dtype=np.int8)
        if ind.shape != self.dmap.grid.dims:
            raise ValueError(f"microstructure shape {ind.shape} != grid {self.dmap.grid.dims}")
        if not np.isin(ind, (0, 1)).all():
            raise ValueError("indicator must only contain phase labels 0 and 1")
        ind.setflags(write=False)
        object.__setattr__(self, "indicator", ind)
        if self.kind != self.params.kind:
            raise ValueError(f"physics {self.kind!r} does not match parameters {self.params.kind!r}")
        want_c = 1 if self.kind == "thermal" else d
        if self.dmap.c != want_c:
            raise ValueError(f"{self.kind} problems need c={want_c}, got {self.dmap.c}")
        load = np.asarray(self.load, dtype=float).ravel()
        want = d if self.kind == "thermal" else len(mandel_pairs(d))
        if load.size != want or not np.isfinite(load).all():
            raise ValueError(f"macroscopic load must have {want} finite entries")
        object.__setattr__(self, "load", load)

    @property
    def d(self) -> int:
        return self.dmap.grid.d

    @property
    def c(self) -> int:
        return self.dmap.c

    @property
    def n_loads(self) -> int:
        return self.d if self.kind == "thermal" else len(mandel_pairs(self.d))

    def with_load(self, load) -> "ProblemSpec":
        return replace(self, load=np.asarray(load, dtype=float))

    def with_params(self, params: PhaseParams) -> "ProblemSpec":
        return replace(self, params=params)

    @cached_property
    def element_matrices(self) -> np.ndarray:
        sp_ = self.dmap.grid.spacing
        if self.kind == "thermal":
            mats = [element_stiffness_thermal(k, sp_) for k in self.params.kappa]
        else:
            mats = [element_stiffness_elastic(l, m, sp_)
                    for l, m in zip(self.params.lam, self.params.mu)]
        return np.ascontiguousarray(np.stack(mats))

    @cached_property
    def phase_flat(self) -> np.ndarray:
        return self.indicator.reshape(-1)

    @cached_property
    def _b_centroid(self) -> np.ndarray:
        xi = (0.5,) * self.d
        sp_ = self.dmap.grid.spacing
        return _thermal_b(xi, sp_) if self.kind == "thermal" else _elastic_b(xi, sp_)

    @cached_property
    def element_loads(self) -> np.ndarray:
        """Per-phase element load vectors ``-int B^T (material . load)``."""
        sp_ = self.dmap.grid.spacing
        vol = float(np.prod(sp_))
        bfun = _thermal_b if self.kind == "thermal" else _elastic_b
        out = []
        for p in (0, 1):
            flux = self.params.material_matrix(p, self.d) @ self.load
            fe = np.zeros(self.element_matrices.shape[1])
            for xi, w in _quadrature(self.d):
                fe -= w * vol * bfun(xi, sp_).T @ flux
            out.append(fe)
        return np.stack(out)


def homogeneous_spec(spec: ProblemSpec, params: PhaseParams | None = None) -> ProblemSpec:
    """Single-phase copy of ``spec`` (reference material by default)."""
    params = spec.params.reference() if params is None else params
    return replace(spec, indicator=np.zeros(spec.dmap.grid.dims, dtype=np.int8), params=params)


# --------------------------------------------------------------------------
# global operators
# --------------------------------------------------------------------------

def matvec(spec: ProblemSpec, u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != (spec.dmap.ndof,):
        raise ValueError(f"expected vector of length {spec.dmap.ndof}, got {u.shape}")
    return _kernels.element_matvec(u, spec.dmap.element_nodes, spec.phase_flat,
                                   spec.element_matrices, spec.c, spec.dmap.n)


def assemble_rhs(spec: ProblemSpec) -> np.ndarray:
    return _kernels.element_scatter(spec.dmap.element_nodes, spec.phase_flat,
                                    spec.element_loads, spec.c, spec.dmap.n)


def assemble_matrix(spec: ProblemSpec) -> sp.csr_matrix:
    """Assembled sparse stiffness (test scale / diagnostics only)."""
    conn = spec.dmap.element_nodes
    c = spec.c
    idx = (conn[:, :, None] * c + np.arange(c)).reshape(conn.shape[0], -1)
    idx[np.repeat(conn < 0, c, axis=1)] = -1
    ke = spec.element_matrices[spec.phase_flat]
    rows = np.broadcast_to(idx[:, :, None], ke.shape)
    cols = np.broadcast_to(idx[:, None, :], ke.shape)
    keep = (rows >= 0) & (cols >= 0)
    n = spec.dmap.ndof
    return sp.coo_matrix((ke[keep], (rows[keep], cols[keep])), shape=(n, n)).tocsr()


def stiffness_diagonal(spec: ProblemSpec) -> np.ndarray:
    diag_e = np.stack([np.diag(k) for k in spec.element_matrices])
    return _kernels.element_scatter(spec.dmap.element_nodes, spec.phase_flat,
                                    diag_e, spec.c, spec.dmap.n)


def jacobi_diagonal(spec: ProblemSpec) -> np.ndarray:
    diag = stiffness_diagonal(spec)
    if not (diag > 0).all():
        raise ValueError("non-positive stiffness diagonal entry; check material parameters")
    return 1.0 / diag


def mean_free(u: np.ndarray, dmap: DofMap) -> np.ndarray:
    """Remove the per-component mean (only meaningful for all-periodic grids)."""
    f = np.asarray(u, dtype=float).reshape(dmap.n, dmap.c)
    return (f - f.mean(axis=0)).reshape(-1)


def _element_dofs(spec: ProblemSpec, u: np.ndarray) -> np.ndarray:
    n, c = spec.dmap.n, spec.c
    up = np.concatenate([np.asarray(u, float).reshape(n, c), np.zeros((1, c))])
    conn = spec.dmap.element_nodes
    return up[np.where(conn < 0, n, conn)].reshape(conn.shape[0], -1)


def recover_secondary(spec: ProblemSpec, u: np.ndarray) -> np.ndarray:
    """Element-centroid heat flux ``q`` (thermal) or Mandel stress (elastic).

    Returned with shape ``(*dims, d)`` resp. ``(*dims, D)``.
    """
    grad = _element_dofs(spec, u) @ spec._b_centroid.T + spec.load
    out = np.empty_like(grad)
    for p in (0, 1):
        mask = spec.phase_flat == p
        mat = spec.params.material_matrix(p, spec.d)
        out[mask] = grad[mask] @ mat.T
    if spec.kind == "thermal":
        out = -out
    return out.reshape(spec.dmap.grid.dims + (out.shape[-1],))


def effective_property(spec: ProblemSpec, solutions: Sequence[np.ndarray],
                       converged: Sequence[bool] | None = None) -> np.ndarray:
    """Effective conductivity or Mandel stiffness from one solution per unit load.

    ``solutions[j]`` must solve the problem with load ``e_j``.  The result is
    symmetrized.
    """
    k = spec.n_loads
    if len(solutions) != k:
        raise ValueError(f"need {k} solutions (one per canonical load), got {len(solutions)}")
    if converged is not None and not all(converged):
        warnings.warn("effective property computed from non-converged solutions")
    cols = []
    for j, u in enumerate(solutions):
        sec = recover_secondary(spec.with_load(np.eye(k)[j]), u)
        avg = sec.reshape(-1, k).mean(axis=0)
        cols.append(-avg if spec.kind == "thermal" else avg)
    eff = np.column_stack(cols)
    return 0.5 * (eff + eff.T)


def nrmse(pred: np.ndarray, ref: np.ndarray, axis: int | None = None) -> float:
    """Domain-averaged pointwise error norm over averaged reference norm.

    ``axis`` names the component axis of vector-valued fields; ``None``
    treats every entry as a scalar sample point.
    """
    pred = np.asarray(pred, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if pred.shape != ref.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {ref.shape}")
    if axis is None:
        num, den = np.abs(pred - ref), np.abs(ref)
    else:
        num = np.linalg.norm(pred - ref, axis=axis)
        den = np.linalg.norm(ref, axis=axis)
    den_mean = den.mean()
    if den_mean == 0:
        raise ValueError("reference field has zero norm")
    return float(num.mean() / den_mean)


def dirichlet_axes(dmap: DofMap) -> list[int]:
    return [i for i, a in enumerate(dmap.bc.axes) if a is AxisBC.DIRICHLET]
