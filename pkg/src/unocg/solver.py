"""Preconditioned conjugate gradients and convergence estimates."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla

Operator = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class SolveConfig:
    tol: float = 1e-6
    max_iter: int | None = None
    relative: bool = True
    project_every: int = 50

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError(f"tolerance must be positive, got {self.tol}")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")


@dataclass
class SolveReport:
    iterations: int = 0
    converged: bool = False
    residual_history: list[float] = field(default_factory=list)
    nrmse_primary: list[float] | None = None
    nrmse_secondary: list[float] | None = None
    energy_error: list[float] | None = None
    breakdown: str | None = None
    wall_time: float | None = None
    matvecs: int = 0
    precond_calls: int = 0
    alphas: list[float] = field(default_factory=list, repr=False)
    betas: list[float] = field(default_factory=list, repr=False)

    @property
    def final_residual(self) -> float:
        return self.residual_history[-1] if self.residual_history else float("nan")

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "final_residual": self.final_residual,
            "breakdown": self.breakdown,
            "wall_time": self.wall_time,
            "residual_history": self.residual_history,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "residual", "nrmse_primary", "nrmse_secondary"])
        for i, r in enumerate(self.residual_history):
            p = self.nrmse_primary[i] if self.nrmse_primary else ""
            s = self.nrmse_secondary[i] if self.nrmse_secondary else ""
            w.writerow([i, repr(r), p if p == "" else repr(p), s if s == "" else repr(s)])
        return buf.getvalue()


def pcg(apply_A: Operator, apply_P: Operator, f: np.ndarray, u0: np.ndarray | None = None,
        cfg: SolveConfig | None = None, reference: np.ndarray | None = None,
        secondary: Callable[[np.ndarray], np.ndarray] | None = None,
        reference_secondary: np.ndarray | None = None,
        project: Callable[[np.ndarray], np.ndarray] | None = None,
        callback: Callable[[int, np.ndarray], bool | None] | None = None,
        report: SolveReport | None = None) -> tuple[np.ndarray, SolveReport]:
    """Preconditioned CG.

    Stops when ``||r||_inf <= tol`` (times ``||r_0||_inf`` in relative mode).
    With ``reference`` the nRMSE and energy-norm error of every iterate are
    recorded; ``secondary`` maps an iterate to a derived field compared
    against ``reference_secondary``.  ``project`` is applied to the iterate
    every ``cfg.project_every`` iterations (e.g. mean removal).  A
    ``callback(it, u)`` returning true stops the iteration early.
    """
    from .physics import nrmse

    cfg = cfg or SolveConfig()
    f = np.asarray(f, dtype=float)
    u = np.zeros_like(f) if u0 is None else np.array(u0, dtype=float)
    if u.shape != f.shape:
        raise ValueError("initial guess and right-hand side differ in shape")
    max_iter = cfg.max_iter if cfg.max_iter is not None else f.size
    rep = SolveReport() if report is None else report
    t0 = time.perf_counter()

    def record(u_):
        if reference is not None:
            e = u_ - reference
            rep.nrmse_primary.append(_safe_nrmse(u_, reference, nrmse))
            rep.energy_error.append(float(np.sqrt(max(e @ apply_A(e), 0.0))))
        if secondary is not None and reference_secondary is not None:
            rep.nrmse_secondary.append(_safe_nrmse(secondary(u_), reference_secondary, nrmse))

    if reference is not None:
        rep.nrmse_primary, rep.energy_error = [], []
    if secondary is not None and reference_secondary is not None:
        rep.nrmse_secondary = []

    r = f - apply_A(u)
    rep.matvecs += 1
    rnorm = float(np.abs(r).max(initial=0.0))
    r0 = rnorm
    rep.residual_history.append(rnorm)
    record(u)
    threshold = cfg.tol * r0 if cfg.relative else cfg.tol
    if rnorm <= threshold or r0 == 0.0:
        rep.converged = True
        rep.wall_time = time.perf_counter() - t0
        return u, rep

    s = apply_P(r)
    rep.precond_calls += 1
    gamma = float(r @ s)
    if not gamma > 0:
        rep.breakdown = f"non-positive preconditioned residual norm at iteration 0 ({gamma:.3e})"
        rep.wall_time = time.perf_counter() - t0
        return u, rep
    d = s.copy()
    for it in range(1, max_iter + 1):
        p = apply_A(d)
        rep.matvecs += 1
        dp = float(d @ p)
        if dp <= 1e-300:
            rep.breakdown = f"loss of positive definiteness at iteration {it} (d.Ad = {dp:.3e})"
            break
        alpha = gamma / dp
        u += alpha * d
        r -= alpha * p
        if project is not None and cfg.project_every and it % cfg.project_every == 0:
            u = project(u)
        rnorm = float(np.abs(r).max())
        rep.iterations = it
        rep.residual_history.append(rnorm)
        rep.alphas.append(alpha)
        record(u)
        if rnorm <= threshold:
            rep.converged = True
            break
        if it == max_iter or (callback is not None and callback(it, u)):
            break
        s = apply_P(r)
        rep.precond_calls += 1
        gamma_new = float(r @ s)
        if gamma_new <= 0:
            rep.breakdown = f"non-positive preconditioned residual norm at iteration {it} ({gamma_new:.3e})"
            break
        beta = gamma_new / gamma
        rep.betas.append(beta)
        gamma = gamma_new
        d = s + beta * d
    rep.wall_time = time.perf_counter() - t0
    return u, rep


def _safe_nrmse(pred, ref, fn) -> float:
    try:
        return fn(pred, ref)
    except ValueError:
        return float("nan")


# --------------------------------------------------------------------------
# estimates
# --------------------------------------------------------------------------

def estimate_iterations(cond: float, rel_tol: float) -> tuple[float, int]:
    """Rate ``C = (sqrt k - 1)/(sqrt k + 1)`` and iterations for ``2 C^m <= rel_tol``."""
    if not cond >= 1:
        raise ValueError(f"condition number must be >= 1, got {cond}")
    if not 0 < rel_tol < 1:
        raise ValueError(f"relative tolerance must lie in (0, 1), got {rel_tol}")
    sq = math.sqrt(cond)
    rate = (sq - 1.0) / (sq + 1.0)
    if rate == 0.0:
        return 0.0, 1
    return rate, max(1, math.ceil(math.log(2.0 / rel_tol) / math.log(1.0 / rate)))


@dataclass
class ConditionEstimate:
    lam_min: float
    lam_max: float
    cond: float
    steps: int
    ritz: np.ndarray = field(repr=False)


def lanczos_tridiagonal(alphas, betas) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal and off-diagonal of the Lanczos matrix of ``P A`` from CG coefficients."""
    a = np.asarray(alphas, dtype=float)
    b = np.asarray(betas, dtype=float)[: a.size - 1]
    diag = 1.0 / a
    diag[1:] += b / a[:-1]
    off = np.sqrt(b) / a[:-1]
    return diag, off


def estimate_condition(apply_A: Operator, apply_P: Operator, n: int, *, seed: int = 0,
                       max_steps: int = 300, tol: float = 1e-4,
                       project: Callable[[np.ndarray], np.ndarray] | None = None) -> ConditionEstimate:
    """Extremal eigenvalues of ``P A`` from the Lanczos process hidden in CG.

    CG is run on ``A x = A z`` for a random ``z`` so the right-hand side lies
    in the range of ``A`` (any shared null space is deflated automatically);
    ``project`` may remove it from ``z`` explicitly.  Iteration stops once
    both Ritz extremes have changed by less than ``tol / 100`` relative for
    three consecutive steps.
    """
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(n)
    if project is not None:
        z = project(z)
    rep = SolveReport()
    state = {"ev": None, "stable": 0}

    def ritz():
        k = len(rep.alphas)
        diag, off = lanczos_tridiagonal(rep.alphas, rep.betas[: k - 1])
        return diag if k == 1 else sla.eigvalsh_tridiagonal(diag, off)

    def watch(it, _u):
        ev = ritz()
        prev = state["ev"]
        state["ev"] = ev
        if prev is not None and it >= 5:
            change = max(abs(ev[0] - prev[0]) / abs(ev[0]), abs(ev[-1] - prev[-1]) / abs(ev[-1]))
            state["stable"] = state["stable"] + 1 if change < 1e-2 * tol else 0
            return state["stable"] >= 3
        return False

    pcg(apply_A, apply_P, apply_A(z), cfg=SolveConfig(tol=1e-14, max_iter=max_steps),
        callback=watch, report=rep)
    if not rep.alphas:
        raise RuntimeError("condition estimate needs at least one CG step")
    ev = ritz()
    lam_min, lam_max = float(ev[0]), float(ev[-1])
    if lam_min <= 0:
        raise RuntimeError("eigenvalue estimate did not converge to a positive spectrum")
    return ConditionEstimate(lam_min, lam_max, lam_max / lam_min, len(rep.alphas), ev)


def solve_spec(spec, P, cfg: SolveConfig | None = None, **kw) -> tuple[np.ndarray, SolveReport]:
    """Solve ``A u = f`` of a problem from a zero initial guess.

    On fully periodic grids the mean is removed from the iterate every
    ``cfg.project_every`` iterations and from the returned solution.
    """
    from .physics import assemble_rhs, matvec, mean_free

    periodic = spec.dmap.bc.all_periodic
    project = (lambda u: mean_free(u, spec.dmap)) if periodic else None
    u, rep = pcg(lambda x: matvec(spec, x), P, assemble_rhs(spec), cfg=cfg, project=project, **kw)
    return (project(u) if project else u), rep


__all__ = ["SolveConfig", "SolveReport", "pcg", "solve_spec", "estimate_iterations",
           "estimate_condition", "ConditionEstimate", "lanczos_tridiagonal"]
