"""Synthetic two-phase microstructures, training data and file I/O."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import container as _io
from .container import Container
from .grid import BoundaryCondition, RegularGrid, build_dof_map
from .parametrization import n_unique
from .physics import PhaseParams, ProblemSpec, assemble_rhs, homogeneous_spec, matvec, mean_free
from .precond import JacobiPreconditioner, Symbol, SymbolPreconditioner, fans_symbol
from .solver import SolveConfig, pcg, solve_spec
from .training import TrainingFeatures, UnoWeights
from .transform import ModeSet, TransformPlan

log = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# microstructures
# --------------------------------------------------------------------------

def gen_microstructure(seed: int, dims, style: str = "blobs", fraction: float = 0.3,
                       max_tries: int = 20) -> np.ndarray:
    """Periodic two-phase indicator with a phase-1 volume fraction near ``fraction``.

    ``blobs`` thresholds smoothed white noise at the matching quantile;
    ``inclusions`` scatters disks (spheres) with overlap rejection.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"volume fraction must lie in (0, 1), got {fraction}")
    dims = tuple(int(n) for n in dims)
    rng = np.random.default_rng(seed)
    if style == "blobs":
        noise = rng.standard_normal(dims)
        smooth = ndimage.gaussian_filter(noise, sigma=[max(n / 16.0, 1.0) for n in dims], mode="wrap")
        k = int(round(fraction * smooth.size))
        order = np.argsort(smooth, axis=None, kind="stable")
        ind = np.zeros(smooth.size, dtype=np.int8)
        ind[order[smooth.size - k:]] = 1
        return ind.reshape(dims)
    if style == "inclusions":
        return _inclusions(rng, dims, fraction, max_tries)
    raise ValueError(f"unknown microstructure style {style!r}")


def _inclusions(rng, dims, fraction, max_tries) -> np.ndarray:
    d = len(dims)
    grids = np.meshgrid(*[np.arange(n) + 0.5 for n in dims], indexing="ij")
    radius = max(min(dims) / 10.0, 1.5)
    ind = np.zeros(dims, dtype=bool)
    for _ in range(max_tries * 200):
        if ind.mean() >= fraction:
            break
        center = rng.uniform(0, dims)
        dist2 = np.zeros(dims)
        for ax in range(d):
            delta = np.abs(grids[ax] - center[ax])
            delta = np.minimum(delta, dims[ax] - delta)
            dist2 += delta ** 2
        disk = dist2 <= radius ** 2
        if (ind & disk).any() and ind.mean() < 0.6 * fraction:
            continue  # avoid overlap while there is still room
        ind |= disk
    got = ind.mean()
    if abs(got - fraction) > 0.05:
        raise ValueError(f"inclusion packing reached fraction {got:.3f}, target {fraction}")
    return ind.astype(np.int8)


def volume_fraction(ind: np.ndarray) -> float:
    return float(np.mean(ind))


# --------------------------------------------------------------------------
# problems and reference solves
# --------------------------------------------------------------------------

def canonical_loads(kind: str, d: int) -> np.ndarray:
    k = d if kind == "thermal" else n_unique(d)
    return np.eye(k)


def make_spec(kind: str, dims, bc: BoundaryCondition | str, indicator: np.ndarray,
              params: PhaseParams, load=None) -> ProblemSpec:
    dims = tuple(dims)
    d = len(dims)
    if isinstance(bc, str):
        bc = BoundaryCondition.parse(bc, d)
    c = 1 if kind == "thermal" else d
    dmap = build_dof_map(RegularGrid(dims, c=c), bc)
    if load is None:
        load = canonical_loads(kind, d)[0]
    return ProblemSpec(kind, dmap, indicator, params, load)


def reference_preconditioner(spec: ProblemSpec):
    if spec.dmap.bc.all_periodic:
        return SymbolPreconditioner(fans_symbol(spec.params, spec.dmap), name="fans")
    return JacobiPreconditioner.from_spec(spec)


def residual_audit(spec: ProblemSpec, r: np.ndarray, s: np.ndarray) -> float:
    """``||A s - r||_inf / ||r||_inf``."""
    scale = float(np.abs(r).max())
    return float(np.abs(matvec(spec, s) - r).max()) / (scale if scale > 0 else 1.0)


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "thermal"
    dims: tuple[int, ...] = (64, 64)
    bc: str = "periodic"
    n_micro: int = 10
    params: PhaseParams = field(default_factory=lambda: PhaseParams.thermal(1.0, 0.2))
    style: str = "blobs"
    fraction: float = 0.3
    tol: float = 1e-10
    seed: int = 0
    max_iter: int = 20000

    @property
    def loads_per_micro(self) -> int:
        return canonical_loads(self.kind, len(self.dims)).shape[0]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "dims": list(self.dims), "bc": self.bc, "n_micro": self.n_micro,
                "params": self.params.to_dict(), "style": self.style, "fraction": self.fraction,
                "tol": self.tol, "seed": self.seed}


def gen_dataset(ds: DatasetSpec, audit_tol: float = 1e-8) -> Container:
    """Right-hand sides and reference solutions for every microstructure and unit load."""
    d = len(ds.dims)
    loads = canonical_loads(ds.kind, d)
    R, S, owners, load_rows, inds, dropped = [], [], [], [], [], []
    seeds = np.random.SeedSequence(ds.seed).generate_state(ds.n_micro)
    cfg = SolveConfig(tol=ds.tol, max_iter=ds.max_iter)
    spec0 = None
    for i in range(ds.n_micro):
        ind = gen_microstructure(int(seeds[i]), ds.dims, ds.style, ds.fraction)
        inds.append(ind)
        for j, load in enumerate(loads):
            spec = make_spec(ds.kind, ds.dims, ds.bc, ind, ds.params, load)
            spec0 = spec0 or spec
            P = reference_preconditioner(spec)
            u, rep = solve_spec(spec, P, cfg)
            f = assemble_rhs(spec)
            res = residual_audit(spec, f, u)
            if not rep.converged or res > audit_tol:
                reason = f"microstructure {i} load {j}: converged={rep.converged} residual={res:.2e}"
                log.warning("dropping sample (%s)", reason)
                dropped.append(reason)
                continue
            R.append(f)
            S.append(u)
            owners.append(i)
            load_rows.append(load)
    meta = {"spec": ds.to_dict(), "c": 1 if ds.kind == "thermal" else d, "dims": list(ds.dims),
            "bc": spec0.dmap.bc.label if spec0 else ds.bc, "dropped": dropped}
    ndof = spec0.dmap.ndof if spec0 else 0
    arrays = {
        "r": np.array(R).reshape(-1, ndof),
        "s": np.array(S).reshape(-1, ndof),
        "micro": np.array(owners, dtype=np.int64),
        "load": np.array(load_rows).reshape(-1, loads.shape[1]),
        "indicator": np.array(inds, dtype=np.int8),
    }
    return Container("dataset", meta, arrays)


def random_pairs(spec: ProblemSpec, n_samples: int, seed: int = 0,
                 tol: float = 1e-13) -> tuple[np.ndarray, np.ndarray]:
    """Random unit residuals ``r`` and solutions ``s = A^{-1} r``.

    Useful when the loads produce no right-hand side (homogeneous material).
    On periodic grids ``r`` and ``s`` are mean-free.
    """
    rng = np.random.default_rng(seed)
    periodic = spec.dmap.bc.all_periodic
    P = reference_preconditioner(spec)
    R, S = [], []
    for _ in range(n_samples):
        r = rng.standard_normal(spec.dmap.ndof)
        if periodic:
            r = mean_free(r, spec.dmap)
        r /= np.linalg.norm(r)
        u, rep = pcg(lambda x: matvec(spec, x), P, r, cfg=SolveConfig(tol=tol, max_iter=50 * r.size))
        if periodic:
            u = mean_free(u, spec.dmap)
        R.append(r)
        S.append(u)
    return np.array(R), np.array(S)


def dataset_pairs(cont: Container) -> tuple[np.ndarray, np.ndarray]:
    return cont.arrays["r"], cont.arrays["s"]


def raw_pair_nbytes(cont: Container) -> int:
    return cont.arrays["r"].nbytes + cont.arrays["s"].nbytes


# --------------------------------------------------------------------------
# typed save / load
# --------------------------------------------------------------------------

def save_microstructure(path, ind: np.ndarray, meta: dict | None = None) -> None:
    ind = np.asarray(ind, dtype=np.int8)
    _io.write(path, Container("microstructure", {"dims": list(ind.shape), **(meta or {})},
                              {"indicator": ind}))


def load_microstructure(path) -> np.ndarray:
    cont = _io.read(path, "microstructure")
    ind = cont.arrays.get("indicator")
    if ind is None or list(ind.shape) != cont.meta.get("dims"):
        raise _io.ContainerError("microstructure container lacks a matching indicator array")
    return ind


def features_container(feats: TrainingFeatures) -> Container:
    meta = {"c": feats.c, "plan": feats.plan.to_dict(), "delta": feats.delta,
            "n_samples": feats.n_samples, "dims": list(feats.plan.lengths)}
    return Container("features", meta, {"alpha": feats.alpha, "beta": feats.beta})


def save_features(path, feats: TrainingFeatures) -> None:
    _io.write(path, features_container(feats))


def load_features(path) -> TrainingFeatures:
    cont = _io.read(path, "features")
    m = cont.meta
    feats = TrainingFeatures(cont.arrays["alpha"], cont.arrays["beta"], float(m["delta"]), int(m["c"]),
                             TransformPlan.from_dict(m["plan"]), int(m["n_samples"]))
    if feats.alpha.shape != (n_unique(feats.c), feats.plan.n):
        raise _io.ContainerError("feature planes do not match the declared plan")
    return feats


def save_weights(path, w: UnoWeights, meta: dict | None = None) -> None:
    info = {"c": w.c, "modes": w.modes.to_dict(), "dims": list(w.modes.plan.lengths), **(meta or {})}
    _io.write(path, Container("weights", info, {"theta": w.theta}))


def load_weights(path) -> UnoWeights:
    cont = _io.read(path, "weights")
    modes = ModeSet.from_dict(cont.meta["modes"])
    return UnoWeights(cont.arrays["theta"], modes, int(cont.meta["c"]))


def save_symbol(path, sym: Symbol) -> None:
    meta = {"c": sym.c, "plan": sym.plan.to_dict(), "zero_block_null": sym.zero_block_null,
            "dims": list(sym.plan.lengths)}
    _io.write(path, Container("symbol", meta, {"planes": sym.planes}))


def load_symbol(path) -> Symbol:
    cont = _io.read(path, "symbol")
    m = cont.meta
    return Symbol(cont.arrays["planes"], int(m["c"]), TransformPlan.from_dict(m["plan"]),
                  bool(m["zero_block_null"]))


__all__ = [
    "gen_microstructure", "volume_fraction", "canonical_loads", "make_spec",
    "reference_preconditioner", "residual_audit", "DatasetSpec", "gen_dataset", "random_pairs",
    "dataset_pairs", "raw_pair_nbytes", "save_microstructure", "load_microstructure",
    "features_container", "save_features", "load_features", "save_weights", "load_weights",
    "save_symbol", "load_symbol", "homogeneous_spec",
]
