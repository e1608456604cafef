"""Regular-grid topology and the field <-> dof-vector contract.

Free nodes are enumerated lexicographically with the last axis fastest and
the ``c`` nodal components interleaved per node, i.e. a field of shape
``(*free_dims, c)`` flattened in C order is the dof vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from itertools import product

import numpy as np


class AxisBC(str, Enum):
    PERIODIC = "periodic"
    DIRICHLET = "dirichlet"


@dataclass(frozen=True)
class RegularGrid:
    dims: tuple[int, ...]
    c: int = 1
    spacing: tuple[float, ...] | None = None

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        object.__setattr__(self, "dims", dims)
        if len(dims) not in (2, 3):
            raise ValueError(f"grid must be 2D or 3D, got d={len(dims)}")
        if any(n < 2 for n in dims):
            raise ValueError(f"every axis needs at least 2 elements, got {dims}")
        if self.c not in (1, len(dims)):
            raise ValueError(f"c must be 1 or d={len(dims)}, got {self.c}")
        if self.spacing is None:
            object.__setattr__(self, "spacing", tuple(1.0 / n for n in dims))
        else:
            sp = tuple(float(h) for h in self.spacing)
            if len(sp) != len(dims) or any(h <= 0 for h in sp):
                raise ValueError(f"invalid spacing {self.spacing}")
            object.__setattr__(self, "spacing", sp)

    @property
    def d(self) -> int:
        return len(self.dims)

    @property
    def n_elem(self) -> int:
        return int(np.prod(self.dims))

    @property
    def n_nodes(self) -> int:
        return int(np.prod([n + 1 for n in self.dims]))

    @property
    def volume(self) -> float:
        return float(np.prod([n * h for n, h in zip(self.dims, self.spacing)]))


@dataclass(frozen=True)
class BoundaryCondition:
    axes: tuple[AxisBC, ...]

    def __post_init__(self):
        object.__setattr__(self, "axes", tuple(AxisBC(a) for a in self.axes))

    @classmethod
    def periodic(cls, d: int) -> "BoundaryCondition":
        return cls((AxisBC.PERIODIC,) * d)

    @classmethod
    def dirichlet(cls, d: int) -> "BoundaryCondition":
        return cls((AxisBC.DIRICHLET,) * d)

    @classmethod
    def mixed(cls, d: int, dirichlet_axes) -> "BoundaryCondition":
        dirichlet_axes = set(dirichlet_axes)
        if not dirichlet_axes <= set(range(d)):
            raise ValueError(f"Dirichlet axes {sorted(dirichlet_axes)} out of range for d={d}")
        return cls(tuple(AxisBC.DIRICHLET if i in dirichlet_axes else AxisBC.PERIODIC
                         for i in range(d)))

    @classmethod
    def parse(cls, text: str, d: int) -> "BoundaryCondition":
        """Parse ``periodic``, ``dirichlet`` or ``mixed:<axis list>`` (Dirichlet axes, 0-based)."""
        text = text.strip().lower()
        if text == "periodic":
            return cls.periodic(d)
        if text == "dirichlet":
            return cls.dirichlet(d)
        if text.startswith("mixed"):
            _, _, rest = text.partition(":")
            axes = [int(a) for a in rest.split(",") if a.strip()] if rest else [1]
            return cls.mixed(d, axes)
        raise ValueError(f"unknown boundary condition {text!r}")

    @property
    def all_periodic(self) -> bool:
        return all(a is AxisBC.PERIODIC for a in self.axes)

    @property
    def label(self) -> str:
        if self.all_periodic:
            return "periodic"
        if all(a is AxisBC.DIRICHLET for a in self.axes):
            return "dirichlet"
        dirs = ",".join(str(i) for i, a in enumerate(self.axes) if a is AxisBC.DIRICHLET)
        return f"mixed:{dirs}"


@dataclass(frozen=True)
class DofMap:
    grid: RegularGrid
    bc: BoundaryCondition
    free_dims: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        if len(self.bc.axes) != self.grid.d:
            raise ValueError("boundary condition needs one kind per axis")
        free = tuple(n if a is AxisBC.PERIODIC else n - 1
                     for n, a in zip(self.grid.dims, self.bc.axes))
        object.__setattr__(self, "free_dims", free)

    @property
    def c(self) -> int:
        return self.grid.c

    @property
    def n(self) -> int:
        return int(np.prod(self.free_dims))

    @property
    def ndof(self) -> int:
        return self.c * self.n

    @property
    def field_shape(self) -> tuple[int, ...]:
        return self.free_dims + (self.c,)

    def free_index_along(self, axis: int, node: np.ndarray) -> np.ndarray:
        """Map node positions ``0..N`` along ``axis`` to free indices, -1 if fixed."""
        node = np.asarray(node)
        nax = self.grid.dims[axis]
        if self.bc.axes[axis] is AxisBC.PERIODIC:
            return node % nax
        return np.where((node == 0) | (node == nax), -1, node - 1)

    @cached_property
    def element_nodes(self) -> np.ndarray:
        """``(n_elem, 2**d)`` free-node index of every element corner, -1 when fixed.

        Corners are ordered lexicographically over offsets in ``{0,1}^d``,
        last axis fastest; elements likewise.
        """
        d = self.grid.d
        lower = np.indices(self.grid.dims).reshape(d, -1)
        strides = np.cumprod((1,) + self.free_dims[::-1])[:-1][::-1]
        out = np.empty((lower.shape[1], 2 ** d), dtype=np.int64)
        for a, off in enumerate(product((0, 1), repeat=d)):
            idx = np.zeros(lower.shape[1], dtype=np.int64)
            fixed = np.zeros(lower.shape[1], dtype=bool)
            for ax in range(d):
                fi = self.free_index_along(ax, lower[ax] + off[ax])
                fixed |= fi < 0
                idx += np.where(fi < 0, 0, fi) * strides[ax]
            out[:, a] = np.where(fixed, -1, idx)
        out.setflags(write=False)
        return out


def build_dof_map(grid: RegularGrid, bc: BoundaryCondition) -> DofMap:
    return DofMap(grid, bc)


def vectorize(field_: np.ndarray, dmap: DofMap) -> np.ndarray:
    field_ = np.asarray(field_)
    if dmap.c == 1 and field_.shape == dmap.free_dims:
        field_ = field_[..., None]
    if field_.shape != dmap.field_shape:
        raise ValueError(f"field shape {field_.shape} does not match {dmap.field_shape}")
    return field_.reshape(-1).copy()


def devectorize(v: np.ndarray, dmap: DofMap) -> np.ndarray:
    v = np.asarray(v)
    if v.ndim != 1 or v.size != dmap.ndof:
        raise ValueError(f"expected vector of length {dmap.ndof}, got shape {v.shape}")
    return v.reshape(dmap.field_shape).copy()
