"""Orthonormal per-axis transforms and learned mode sets.

Periodic axes use the unitary DFT, Dirichlet axes the orthonormal DST-I on
interior nodes; mixed grids use the tensor product.  Every transform here
satisfies ``T^{-1} = T^H``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from itertools import product

import numpy as np
import scipy.fft as sfft

from .grid import AxisBC, BoundaryCondition, DofMap

IMAG_TOL = 1e-10


class AxisKind(str, Enum):
    FOURIER = "fourier"
    SINE = "sine"


@dataclass(frozen=True)
class TransformPlan:
    kinds: tuple[AxisKind, ...]
    lengths: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "kinds", tuple(AxisKind(k) for k in self.kinds))
        object.__setattr__(self, "lengths", tuple(int(n) for n in self.lengths))
        if len(self.kinds) != len(self.lengths):
            raise ValueError("one transform kind per axis required")
        if any(n < 1 for n in self.lengths):
            raise ValueError(f"invalid axis lengths {self.lengths}")

    @classmethod
    def for_dofmap(cls, dmap: DofMap) -> "TransformPlan":
        kinds = [AxisKind.FOURIER if a is AxisBC.PERIODIC else AxisKind.SINE for a in dmap.bc.axes]
        return cls(tuple(kinds), dmap.free_dims)

    @property
    def d(self) -> int:
        return len(self.lengths)

    @property
    def n(self) -> int:
        return int(np.prod(self.lengths))

    @property
    def fourier_axes(self) -> tuple[int, ...]:
        return tuple(i for i, k in enumerate(self.kinds) if k is AxisKind.FOURIER)

    @property
    def sine_axes(self) -> tuple[int, ...]:
        return tuple(i for i, k in enumerate(self.kinds) if k is AxisKind.SINE)

    @property
    def is_complex(self) -> bool:
        return bool(self.fourier_axes)

    def to_dict(self) -> dict:
        return {"kinds": [k.value for k in self.kinds], "lengths": list(self.lengths)}

    @classmethod
    def from_dict(cls, data: dict) -> "TransformPlan":
        return cls(tuple(data["kinds"]), tuple(data["lengths"]))


def _check_shape(plan: TransformPlan, x: np.ndarray) -> None:
    if x.shape[: plan.d] != plan.lengths:
        raise ValueError(f"field shape {x.shape} does not match plan {plan.lengths}")


def forward(plan: TransformPlan, x: np.ndarray) -> np.ndarray:
    """Transform the leading ``d`` axes of ``x`` (trailing axes are channels)."""
    x = np.asarray(x)
    _check_shape(plan, x)
    if plan.sine_axes:
        x = sfft.dstn(x, type=1, axes=plan.sine_axes, norm="ortho")
    if plan.fourier_axes:
        x = sfft.fftn(x, axes=plan.fourier_axes, norm="ortho")
    return x


def inverse(plan: TransformPlan, xh: np.ndarray) -> np.ndarray:
    """Inverse of ``forward``; real output, raises if the spectrum was not conjugate-symmetric."""
    xh = np.asarray(xh)
    _check_shape(plan, xh)
    if plan.fourier_axes:
        xh = sfft.ifftn(xh, axes=plan.fourier_axes, norm="ortho")
    if plan.sine_axes:
        xh = sfft.idstn(xh, type=1, axes=plan.sine_axes, norm="ortho")
    if np.iscomplexobj(xh):
        re, im = xh.real, xh.imag
        scale = np.abs(re).max(initial=0.0)
        if np.abs(im).max(initial=0.0) > IMAG_TOL * max(scale, 1e-300):
            raise ValueError("inverse transform is not real: spectrum violates conjugate symmetry")
        xh = re
    return np.ascontiguousarray(xh)


def dense_matrix(plan: TransformPlan) -> np.ndarray:
    """Explicit ``n x n`` transform matrix for c=1 (test scale)."""
    if plan.n > 4096:
        raise ValueError("dense transform matrix only for small grids")
    eye = np.eye(plan.n).reshape(plan.lengths + (plan.n,))
    cols = forward(plan, eye)
    return cols.reshape(plan.n, plan.n)


# --------------------------------------------------------------------------
# mode sets
# --------------------------------------------------------------------------

def conj_mode(plan: TransformPlan, mode) -> tuple[int, ...]:
    """Partner frequency: Fourier components negated, sine components kept."""
    return tuple(-k if kind is AxisKind.FOURIER else k for k, kind in zip(mode, plan.kinds))


def mode_to_flat_index(plan: TransformPlan, mode) -> int:
    mode = tuple(int(k) for k in mode)
    if len(mode) != plan.d:
        raise ValueError(f"mode {mode} has wrong dimension for plan")
    idx = []
    for k, kind, n in zip(mode, plan.kinds, plan.lengths):
        if kind is AxisKind.FOURIER:
            if abs(k) > n // 2:
                raise ValueError(f"Fourier mode {k} not representable on axis of length {n}")
            idx.append(k % n)
        else:
            if not 0 <= k < n:
                raise ValueError(f"sine mode {k} not representable on axis of length {n}")
            idx.append(k)
    return int(np.ravel_multi_index(tuple(idx), plan.lengths))


@dataclass(frozen=True, eq=False)
class ModeSet:
    """Learned modes ``K``, conjugate modes ``K_c`` and their frequency incidence.

    Each learned mode ``i`` contributes ``psi(theta_i)`` to the frequencies
    ``idx(k_i)`` and ``idx(conj(k_i))``.  Where several modes land on the
    same frequency (``+-k`` pairs in the plane ``k_last = 0`` of the
    Fourier half-space, Nyquist aliases) their contributions are averaged,
    which keeps every block symmetric in ``k -> -k`` and the preconditioner
    real.
    """

    M: int
    plan: TransformPlan
    modes: np.ndarray = field(repr=False)
    conj_modes: np.ndarray = field(repr=False)

    @property
    def k_max(self) -> int:
        return int(self.modes.shape[0])

    @cached_property
    def incidence(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(freq, mode, weight)`` triplets; weights sum to one per touched frequency."""
        freqs, owners = [], []
        for i, k in enumerate(self.modes):
            touched = {mode_to_flat_index(self.plan, k),
                       mode_to_flat_index(self.plan, conj_mode(self.plan, k))}
            for q in sorted(touched):
                freqs.append(q)
                owners.append(i)
        freqs = np.asarray(freqs, dtype=np.int64)
        owners = np.asarray(owners, dtype=np.int64)
        counts = np.bincount(freqs, minlength=self.plan.n)
        return freqs, owners, 1.0 / counts[freqs]

    @cached_property
    def learned_mask(self) -> np.ndarray:
        mask = np.zeros(self.plan.n, dtype=bool)
        mask[self.incidence[0]] = True
        return mask

    @cached_property
    def groups(self) -> list[np.ndarray]:
        """Modes coupled through shared frequencies (connected components)."""
        freqs, owners, _ = self.incidence
        parent = np.arange(self.k_max)

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        first = {}
        for q, i in zip(freqs, owners):
            if q in first:
                ra, rb = find(first[q]), find(i)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
            else:
                first[q] = i
        roots = np.array([find(i) for i in range(self.k_max)], dtype=np.int64)
        return [np.flatnonzero(roots == r) for r in np.unique(roots)]

    def to_dict(self) -> dict:
        return {"M": self.M, "plan": self.plan.to_dict()}

    @classmethod
    def from_dict(cls, data: dict) -> "ModeSet":
        return build_mode_set(int(data["M"]), TransformPlan.from_dict(data["plan"]))


def _axis_ranges(M: int, plan: TransformPlan) -> list[range]:
    fourier = plan.fourier_axes
    last_fourier = fourier[-1] if fourier else None
    ranges = []
    for ax, kind in enumerate(plan.kinds):
        if kind is AxisKind.SINE:
            ranges.append(range(0, 2 * M + 1))
        elif ax == last_fourier:
            ranges.append(range(0, M + 1))
        else:
            ranges.append(range(-M, M + 1))
    return ranges


def build_mode_set(M: int, plan: TransformPlan) -> ModeSet:
    """Low-frequency learned modes for the plan's boundary conditions.

    Fourier axes span ``[-M..M]`` except the last Fourier axis, which spans
    the half range ``[0..M]``; sine axes span ``[0..2M]``.  The zero mode is
    dropped when every axis is Fourier.
    """
    if M < 1:
        raise ValueError(f"M must be >= 1, got {M}")
    for kind, n in zip(plan.kinds, plan.lengths):
        if kind is AxisKind.FOURIER and M > n // 2:
            raise ValueError(f"M={M} too large for a Fourier axis with {n} nodes")
        if kind is AxisKind.SINE and 2 * M > n - 1:
            raise ValueError(f"M={M} too large for a sine axis with {n} free nodes")
    all_fourier = len(plan.fourier_axes) == plan.d
    modes = [k for k in product(*_axis_ranges(M, plan)) if not (all_fourier and not any(k))]
    mode_set = set(modes)
    conj, seen = [], set()
    for k in modes:
        kc = conj_mode(plan, k)
        if kc not in mode_set and kc not in seen:
            seen.add(kc)
            conj.append(kc)
    return ModeSet(M, plan, np.array(modes, dtype=np.int64).reshape(-1, plan.d),
                   np.array(conj, dtype=np.int64).reshape(-1, plan.d))


def expected_k_max(M: int, bc: BoundaryCondition) -> int:
    d = len(bc.axes)
    if bc.all_periodic:
        return (2 * M + 1) ** (d - 1) * (M + 1) - 1
    n_fourier = sum(a is AxisBC.PERIODIC for a in bc.axes)
    if n_fourier == 0:
        return (2 * M + 1) ** d
    return (2 * M + 1) ** (d - 1) * (M + 1)
