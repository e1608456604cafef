"""Training of the learned symbol from (residual, solution) pairs.

The loss ``L = mean_j ||P r_j - s_j||^2`` is a quadratic in the symbol
planes ``v``.  Transforming every sample once condenses the data into the
features ``alpha_m, beta_m`` (``m = 1..C``) and the scalar ``delta``; after
that loss, gradient and Hessian cost ``O(n)`` per evaluation.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import transform as _tf
from .parametrization import (entry_pairs, global_psi, identity_theta, n_unique,
                              n_weights, psi, psi_hessian, psi_jacobian, split_theta,
                              theta_from_spd, planes_to_blocks, blocks_to_planes)
from .precond import Symbol, SymbolPreconditioner, spectrum_check
from .transform import ModeSet, TransformPlan


# --------------------------------------------------------------------------
# weights
# --------------------------------------------------------------------------

@dataclass(eq=False)
class UnoWeights:
    theta: np.ndarray
    modes: ModeSet
    c: int

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float).copy()
        want = n_weights(self.modes, self.c)
        if self.theta.shape != (want,):
            raise ValueError(f"expected {want} weights, got shape {self.theta.shape}")

    @property
    def n_w(self) -> int:
        return self.theta.size

    def planes(self) -> np.ndarray:
        return global_psi(self.theta, self.modes, self.c)

    def symbol(self) -> Symbol:
        return Symbol(self.planes(), self.c, self.modes.plan)

    def preconditioner(self) -> SymbolPreconditioner:
        return SymbolPreconditioner(self.symbol(), name="uno")


# --------------------------------------------------------------------------
# features
# --------------------------------------------------------------------------

@dataclass(eq=False)
class TrainingFeatures:
    """``alpha``/``beta`` have shape ``(C, n)`` in flat frequency order."""

    alpha: np.ndarray
    beta: np.ndarray
    delta: float
    c: int
    plan: TransformPlan
    n_samples: int

    @property
    def C(self) -> int:
        return n_unique(self.c)

    @property
    def n(self) -> int:
        return self.plan.n

    @property
    def hessian_blocks(self) -> np.ndarray:
        """Per-frequency Hessian ``d2L/dv dv`` as ``(n, C, C)`` (constant in ``v``)."""
        return np.moveaxis(hessian_v(self), -1, 0)


def _transform_samples(X: np.ndarray, plan: TransformPlan, c: int) -> np.ndarray:
    return _tf.forward(plan, X.reshape(plan.lengths + (c,))).reshape(plan.n, c)


def precompute_features(R: np.ndarray, S: np.ndarray, plan: TransformPlan, c: int) -> TrainingFeatures:
    """Condense ``N_s`` pairs ``(r_j, s_j)`` (rows of ``R``, ``S``) into features.

    Samples are accumulated in their stored order, so the result does not
    depend on scheduling.
    """
    R = np.atleast_2d(np.asarray(R, dtype=float))
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if R.shape != S.shape:
        raise ValueError(f"residual and solution sets differ in shape: {R.shape} vs {S.shape}")
    if R.shape[0] == 0:
        raise ValueError("empty training set")
    if R.shape[1] != c * plan.n:
        raise ValueError(f"samples of length {R.shape[1]} do not match c*n = {c * plan.n}")
    pairs = entry_pairs(c)
    C = len(pairs)
    alpha = np.zeros((C, plan.n))
    beta = np.zeros((C, plan.n))
    delta = 0.0
    for r, s in zip(R, S):
        rh = _transform_samples(r, plan, c)
        sh = _transform_samples(s, plan, c)
        for m, (a, b) in enumerate(pairs):
            if a == b:
                alpha[m] += np.real(np.conj(rh[:, a]) * rh[:, a])
                beta[m] += 2.0 * np.real(np.conj(rh[:, a]) * sh[:, a])
            else:
                alpha[m] += 2.0 * np.real(np.conj(rh[:, a]) * rh[:, b])
                beta[m] += 2.0 * np.real(np.conj(rh[:, a]) * sh[:, b] + np.conj(rh[:, b]) * sh[:, a])
        delta += float(s @ s)
    ns = R.shape[0]
    return TrainingFeatures(alpha / ns, beta / ns, delta / ns, c, plan, ns)


# --------------------------------------------------------------------------
# loss in v
# --------------------------------------------------------------------------

def _as_planes(v: np.ndarray, feats: TrainingFeatures) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.size != feats.C * feats.n:
        raise ValueError(f"v has {v.size} entries, expected {feats.C * feats.n}")
    return v.reshape(feats.C, feats.n)


def hessian_v(feats: TrainingFeatures) -> np.ndarray:
    """``(C, C, n)`` per-frequency second derivatives of ``L`` in ``v``."""
    a = feats.alpha
    C, n = a.shape
    H = np.zeros((C, C, n))
    if feats.c == 1:
        H[0, 0] = 2 * a[0]
    elif feats.c == 2:
        a1, a2, a3 = a
        H[0, 0], H[1, 1], H[2, 2] = 2 * a1, 2 * a2, 2 * (a1 + a2)
        H[0, 2] = H[2, 0] = a3
        H[1, 2] = H[2, 1] = a3
    else:
        a1, a2, a3, a4, a5, a6 = a
        H[0, 0], H[1, 1], H[2, 2] = 2 * a1, 2 * a2, 2 * (a1 + a2)
        H[3, 3], H[4, 4], H[5, 5] = 2 * a4, 2 * (a2 + a4), 2 * (a1 + a4)
        H[0, 2] = H[2, 0] = a3
        H[0, 5] = H[5, 0] = a6
        H[1, 2] = H[2, 1] = a3
        H[1, 4] = H[4, 1] = a5
        H[2, 4] = H[4, 2] = a6
        H[2, 5] = H[5, 2] = a5
        H[3, 4] = H[4, 3] = a5
        H[3, 5] = H[5, 3] = a6
        H[4, 5] = H[5, 4] = a3
    return H


def loss_and_derivatives(v: np.ndarray, feats: TrainingFeatures):
    """Closed-form ``(L, dL/dv, d2L/dv2)``.

    The gradient has shape ``(C, n)``; the Hessian is returned as its
    per-frequency ``(C, C, n)`` blocks.
    """
    v = _as_planes(v, feats)
    a, b = feats.alpha, feats.beta
    if feats.c == 1:
        (v1,), (a1,) = v, a
        L = a1 @ (v1 * v1)
        g = np.stack([2 * a1 * v1])
    elif feats.c == 2:
        v1, v2, v3 = v
        a1, a2, a3 = a
        L = a1 @ (v1 * v1 + v3 * v3) + a2 @ (v2 * v2 + v3 * v3) + a3 @ (v1 * v3 + v2 * v3)
        g = np.stack([
            2 * a1 * v1 + a3 * v3,
            2 * a2 * v2 + a3 * v3,
            2 * a1 * v3 + 2 * a2 * v3 + a3 * (v1 + v2),
        ])
    elif feats.c == 3:
        v1, v2, v3, v4, v5, v6 = v
        a1, a2, a3, a4, a5, a6 = a
        L = (a1 @ (v1 * v1 + v3 * v3 + v6 * v6) + a2 @ (v2 * v2 + v3 * v3 + v5 * v5)
             + a3 @ (v1 * v3 + v2 * v3 + v5 * v6) + a4 @ (v4 * v4 + v5 * v5 + v6 * v6)
             + a5 @ (v2 * v5 + v3 * v6 + v4 * v5) + a6 @ (v1 * v6 + v3 * v5 + v4 * v6))
        g = np.stack([
            2 * a1 * v1 + a3 * v3 + a6 * v6,
            2 * a2 * v2 + a3 * v3 + a5 * v5,
            2 * a1 * v3 + 2 * a2 * v3 + a3 * (v1 + v2) + a5 * v6 + a6 * v5,
            2 * a4 * v4 + a5 * v5 + a6 * v6,
            2 * a2 * v5 + a3 * v6 + 2 * a4 * v5 + a5 * (v2 + v4) + a6 * v3,
            2 * a1 * v6 + a3 * v5 + 2 * a4 * v6 + a5 * v3 + a6 * (v1 + v4),
        ])
    else:
        raise ValueError(f"unsupported c={feats.c}")
    L = float(L - np.sum(b * v) + feats.delta)
    return L, g - b, hessian_v(feats)


def loss_trace_form(v: np.ndarray, feats: TrainingFeatures) -> float:
    """``sum_q tr(Phi^2 R) - beta . v + delta`` with ``R`` built from ``alpha``."""
    v = _as_planes(v, feats)
    c = feats.c
    Phi = planes_to_blocks(v, c)  # (n, c, c)
    half = feats.alpha.copy()
    for m, (i, j) in enumerate(entry_pairs(c)):
        if i != j:
            half[m] *= 0.5
    Rb = planes_to_blocks(half, c)
    return float(np.einsum("qij,qjk,qki->", Phi, Phi, Rb) - np.sum(feats.beta * v) + feats.delta)


def direct_loss(P, R: np.ndarray, S: np.ndarray) -> float:
    """``mean_j ||P r_j - s_j||^2`` through the preconditioner itself."""
    R = np.atleast_2d(R)
    S = np.atleast_2d(S)
    return float(np.mean([np.sum((P.apply(r) - s) ** 2) for r, s in zip(R, S)]))


# --------------------------------------------------------------------------
# chain rule to theta
# --------------------------------------------------------------------------

@dataclass(eq=False)
class ArrowheadHessian:
    """Symmetric Hessian in ``theta`` with bypass border and mode-group blocks.

    ``h00`` is the ``C x C`` bypass block, ``border`` couples bypass to the
    padded group layout ``(C, G_n, G*C)`` and ``blocks`` holds the
    ``(G_n, G*C, G*C)`` group blocks.  ``slots`` maps each padded slot to a
    mode index (``-1`` for padding).
    """

    h00: np.ndarray
    border: np.ndarray
    blocks: np.ndarray
    slots: np.ndarray
    C: int

    @property
    def n_w(self) -> int:
        return self.C * (1 + int((self.slots >= 0).sum()))

    def _to_groups(self, x_modes: np.ndarray) -> np.ndarray:
        gx = np.zeros(self.slots.shape + (self.C,))
        valid = self.slots >= 0
        gx[valid] = x_modes[self.slots[valid]]
        return gx.reshape(self.slots.shape[0], -1)

    def _from_groups(self, gx: np.ndarray, k: int) -> np.ndarray:
        out = np.zeros((k, self.C))
        gx = gx.reshape(self.slots.shape + (self.C,))
        valid = self.slots >= 0
        out[self.slots[valid]] = gx[valid]
        return out

    def matvec(self, x: np.ndarray) -> np.ndarray:
        C = self.C
        k = self.n_w // C - 1
        x0, xm = x[:C], x[C:].reshape(k, C)
        gx = self._to_groups(xm)
        y0 = self.h00 @ x0 + np.einsum("agj,gj->a", self.border, gx)
        gy = np.einsum("gij,gj->gi", self.blocks, gx) + np.einsum("agi,a->gi", self.border, x0)
        return np.concatenate([y0, self._from_groups(gy, k).ravel()])

    def solve(self, b: np.ndarray, shift: float = 0.0) -> np.ndarray:
        """Solve ``(H + shift I) x = b``; raises ``LinAlgError`` unless positive definite."""
        C = self.C
        k = self.n_w // C - 1
        D = self.blocks + shift * np.eye(self.blocks.shape[-1])
        Lg = np.linalg.cholesky(D)
        B = self.border  # (C, G, GC)

        def dsolve(rhs):  # rhs (G, GC, m)
            y = np.linalg.solve(Lg, rhs)
            return np.linalg.solve(np.swapaxes(Lg, -1, -2), y)

        bm = self._to_groups(b[C:].reshape(k, C))
        Dinv_Bt = dsolve(np.transpose(B, (1, 2, 0)))  # (G, GC, C)
        Dinv_bm = dsolve(bm[..., None])[..., 0]
        S = self.h00 + shift * np.eye(C) - np.einsum("agj,gjb->ab", B, Dinv_Bt)
        S = 0.5 * (S + S.T)
        Ls = np.linalg.cholesky(S)
        rhs0 = b[:C] - np.einsum("agj,gj->a", B, Dinv_bm)
        x0 = np.linalg.solve(Ls.T, np.linalg.solve(Ls, rhs0))
        xm = Dinv_bm - np.einsum("gjb,b->gj", Dinv_Bt, x0)
        return np.concatenate([x0, self._from_groups(xm, k).ravel()])

    def scale(self) -> float:
        diag = np.concatenate([np.diag(self.h00), np.diagonal(self.blocks, axis1=1, axis2=2).ravel()])
        return float(np.abs(diag).max(initial=0.0))

    def to_dense(self) -> np.ndarray:
        n_w = self.n_w
        if n_w > 6000:
            raise ValueError("dense Hessian only for small weight counts")
        return np.column_stack([self.matvec(e) for e in np.eye(n_w)])


@dataclass(frozen=True, eq=False)
class _Layout:
    """Precomputed incidence bookkeeping for the chain rule."""

    freqs: np.ndarray
    owners: np.ndarray
    weights: np.ndarray
    pair_i: np.ndarray
    pair_j: np.ndarray
    pair_q: np.ndarray
    pair_w: np.ndarray
    slots: np.ndarray
    group_of: np.ndarray
    local_of: np.ndarray


_LAYOUTS: dict[int, _Layout] = {}


def _layout(modes: ModeSet) -> _Layout:
    key = id(modes)
    hit = _LAYOUTS.get(key)
    if hit is not None and hit[0] is modes:
        return hit[1]
    freqs, owners, weights = modes.incidence
    order = np.argsort(freqs, kind="stable")
    f_s, o_s, w_s = freqs[order], owners[order], weights[order]
    bounds = np.flatnonzero(np.diff(f_s)) + 1
    pi, pj, pq, pw = [], [], [], []
    for seg_f, seg_o, seg_w in zip(np.split(f_s, bounds), np.split(o_s, bounds), np.split(w_s, bounds)):
        for a in range(seg_o.size):
            for b in range(seg_o.size):
                pi.append(seg_o[a])
                pj.append(seg_o[b])
                pq.append(seg_f[0])
                pw.append(seg_w[a] * seg_w[b])
    groups = modes.groups
    G = max(len(g) for g in groups)
    slots = -np.ones((len(groups), G), dtype=np.int64)
    group_of = np.empty(modes.k_max, dtype=np.int64)
    local_of = np.empty(modes.k_max, dtype=np.int64)
    for g, members in enumerate(groups):
        slots[g, : len(members)] = members
        group_of[members] = g
        local_of[members] = np.arange(len(members))
    lay = _Layout(freqs, owners, weights, np.array(pi), np.array(pj), np.array(pq),
                  np.array(pw), slots, group_of, local_of)
    _LAYOUTS[key] = (modes, lay)
    return lay


def chain_to_theta(theta: np.ndarray, modes: ModeSet, c: int, gv: np.ndarray, hv: np.ndarray,
                   gauss_newton: bool = False):
    """Gradient and arrowhead Hessian of ``L`` with respect to ``theta``.

    ``gv`` is ``(C, n)`` and ``hv`` the ``(C, C, n)`` per-frequency blocks.
    ``gauss_newton`` drops the second derivatives of the parametrization.
    """
    C = n_unique(c)
    lay = _layout(modes)
    bypass, learned = split_theta(theta, modes, c)
    k = modes.k_max
    J0 = psi_jacobian(bypass, c)  # (C, C)
    Jm = psi_jacobian(learned, c)  # (k, C, C)
    d2 = psi_hessian(c)  # (C, C, C)
    gvT = gv.T  # (n, C)
    hvT = np.moveaxis(hv, -1, 0)  # (n, C, C)

    # gradient
    gsum = gvT.sum(axis=0)
    g0 = gsum @ J0
    gw = np.zeros((k, C))
    np.add.at(gw, lay.owners, lay.weights[:, None] * gvT[lay.freqs])
    gm = np.einsum("km,kma->ka", gw, Jm)
    grad = np.concatenate([g0, gm.ravel()])

    # bypass block
    h00 = J0.T @ hvT.sum(axis=0) @ J0
    if not gauss_newton:
        h00 = h00 + np.einsum("m,mab->ab", gsum, d2)
    # border: bypass x mode
    hw = np.zeros((k, C, C))
    np.add.at(hw, lay.owners, lay.weights[:, None, None] * hvT[lay.freqs])
    b0m = np.einsum("ma,kmn,knb->kab", J0, hw, Jm)  # (k, C, C)
    # mode x mode within groups
    hij = np.einsum("pma,pmn,pnb->pab", Jm[lay.pair_i], lay.pair_w[:, None, None] * hvT[lay.pair_q],
                    Jm[lay.pair_j])
    Gn, G = lay.slots.shape
    blocks = np.zeros((Gn, G, G, C, C))
    np.add.at(blocks, (lay.group_of[lay.pair_i], lay.local_of[lay.pair_i], lay.local_of[lay.pair_j]), hij)
    if not gauss_newton:
        extra = np.einsum("km,mab->kab", gw, d2)
        blocks[lay.group_of, lay.local_of, lay.local_of] += extra
    pad = lay.slots < 0
    if pad.any():
        gpad, lpad = np.nonzero(pad)
        blocks[gpad, lpad, lpad] = np.eye(C)
    blocks = blocks.transpose(0, 1, 3, 2, 4).reshape(Gn, G * C, G * C)
    blocks = 0.5 * (blocks + np.swapaxes(blocks, -1, -2))
    border = np.zeros((Gn, G, C, C))
    border[lay.group_of, lay.local_of] = np.swapaxes(b0m, -1, -2)  # (mode-row a, bypass-col)
    border = border.transpose(3, 0, 1, 2).reshape(C, Gn, G * C)
    return grad, ArrowheadHessian(0.5 * (h00 + h00.T), border, blocks, lay.slots, C)


def loss_theta(theta: np.ndarray, modes: ModeSet, feats: TrainingFeatures) -> float:
    v = global_psi(theta, modes, feats.c).reshape(feats.C, -1)
    return loss_and_derivatives(v, feats)[0]


def loss_grad_hess_theta(theta: np.ndarray, modes: ModeSet, feats: TrainingFeatures,
                         gauss_newton: bool = False):
    v = global_psi(theta, modes, feats.c).reshape(feats.C, -1)
    L, gv, hv = loss_and_derivatives(v, feats)
    g, H = chain_to_theta(theta, modes, feats.c, gv, hv, gauss_newton)
    return L, g, H


# --------------------------------------------------------------------------
# initialization
# --------------------------------------------------------------------------

def _check_consistent(feats: TrainingFeatures, modes: ModeSet) -> None:
    if feats.plan != modes.plan:
        raise ValueError("features and mode set refer to different transform plans")


def default_init(feats: TrainingFeatures, modes: ModeSet) -> np.ndarray:
    """Bypass ``s I`` with the scale of the diagonal least-squares fit, small modes."""
    _check_consistent(feats, modes)
    c = feats.c
    diag = [m for m, (i, j) in enumerate(entry_pairs(c)) if i == j]
    num = feats.beta[diag].sum()
    den = 2.0 * feats.alpha[diag].sum()
    s = num / den if den > 0 and num > 0 else 1.0
    theta = np.tile(identity_theta(c, 1e-6), modes.k_max + 1)
    theta[: n_unique(c)] = identity_theta(c, s)
    return theta


def warm_start(feats: TrainingFeatures, modes: ModeSet, floor_rel: float = 1e-6) -> np.ndarray:
    """Convex fit of bypass and mode blocks, projected onto the PSD cone.

    Each frequency's unconstrained minimizer is ``v* = H(q)^+ beta(q)``; the
    bypass is fitted on the unlearned frequencies and every mode absorbs the
    weighted remainder on its own frequencies.
    """
    _check_consistent(feats, modes)
    c, C = feats.c, feats.C
    hq = feats.hessian_blocks  # (n, C, C)
    bq = feats.beta.T  # (n, C)
    scale = float(np.abs(hq).max(initial=0.0))
    if scale == 0.0:
        return default_init(feats, modes)
    vstar = np.einsum("qab,qb->qa", np.linalg.pinv(hq, rcond=1e-12, hermitian=True), bq)
    live = np.abs(hq).reshape(hq.shape[0], -1).max(axis=1) > 1e-12 * scale
    mask = modes.learned_mask
    free = ~mask & live
    W = None
    if free.any():
        Hs = hq[free].sum(axis=0)
        if np.linalg.eigvalsh(Hs).min() > 1e-12 * scale:
            W = planes_to_blocks(np.linalg.solve(Hs, bq[free].sum(axis=0))[:, None], c)[0]
    if W is None:
        blocks = planes_to_blocks(vstar[live].T, c)
        lam = np.linalg.eigvalsh(blocks).min()
        W = 0.5 * max(lam, 0.0) * np.eye(c)
        if lam <= 0:
            W = 1e-3 * np.abs(blocks).max() * np.eye(c)
    w_ev = np.linalg.eigvalsh(W)
    floor = floor_rel * max(abs(w_ev).max(), 1e-300)
    W_theta = theta_from_spd(W, floor)
    Wv = psi(W_theta, c)

    lay = _layout(modes)
    k = modes.k_max
    Hk = np.zeros((k, C, C))
    bk = np.zeros((k, C))
    np.add.at(Hk, lay.owners, lay.weights[:, None, None] * hq[lay.freqs])
    resid = bq - np.einsum("qab,b->qa", hq, Wv)
    np.add.at(bk, lay.owners, lay.weights[:, None] * resid[lay.freqs])
    Kv = np.einsum("kab,kb->ka", np.linalg.pinv(Hk, rcond=1e-12, hermitian=True), bk)
    Kb = planes_to_blocks(Kv.T, c)
    ev, V = np.linalg.eigh(Kb)
    ev = np.maximum(ev, floor)
    Kb = (V * ev[:, None, :]) @ np.swapaxes(V, -1, -2)
    K_theta = theta_from_spd(Kb, floor)
    return np.concatenate([W_theta, K_theta.ravel()])


# --------------------------------------------------------------------------
# Newton training
# --------------------------------------------------------------------------

@dataclass
class TrainReport:
    method: str
    epochs: list[dict] = field(default_factory=list)
    converged: bool = False
    message: str = ""
    spectrum: dict | None = None
    wall_s: float | None = None

    @property
    def final_loss(self) -> float:
        return self.epochs[-1]["loss"] if self.epochs else float("nan")

    @property
    def losses(self) -> list[float]:
        return [e["loss"] for e in self.epochs]

    def to_jsonl(self) -> str:
        lines = [json.dumps(e, sort_keys=True) for e in self.epochs]
        lines.append(json.dumps({"method": self.method, "converged": self.converged,
                                 "message": self.message, "spectrum": self.spectrum,
                                 "final_loss": self.final_loss}, sort_keys=True))
        return "\n".join(lines) + "\n"


def _newton_direction(g: np.ndarray, H: ArrowheadHessian, max_shift_steps: int = 60):
    scale = max(H.scale(), 1e-300)
    tau = 0.0
    for _ in range(max_shift_steps):
        try:
            return -H.solve(g, shift=tau * scale), tau
        except np.linalg.LinAlgError:
            tau = 1e-12 if tau == 0.0 else 2.0 * tau
    return None, tau


def _line_search(theta, step, L0, slope, modes, feats, c1=1e-4, min_t=1e-12):
    t = 1.0
    while t >= min_t:
        trial = theta + t * step
        Lt = loss_theta(trial, modes, feats)
        if Lt <= L0 + c1 * t * slope or Lt <= L0 and slope >= 0:
            return trial, Lt, t
        t *= 0.5
    return None, L0, 0.0


def newton_train(feats: TrainingFeatures, modes: ModeSet, theta0: np.ndarray | None = None,
                 epochs: int = 20, tol: float = 1e-12, warm: bool = True,
                 callback=None) -> tuple[UnoWeights, TrainReport]:
    """Damped Newton iterations on the weights with Armijo backtracking.

    Directions fall back from the (shifted) Newton step to Gauss-Newton and
    finally to steepest descent.  Stops when ``||g|| <= tol * max(1, |L0|)``,
    when the loss stops decreasing, or after ``epochs`` epochs.
    """
    _check_consistent(feats, modes)
    c = feats.c
    if theta0 is None:
        theta = warm_start(feats, modes) if warm else default_init(feats, modes)
    else:
        theta = np.asarray(theta0, dtype=float).copy()
    report = TrainReport("newton")
    t_start = time.perf_counter()
    L, g, H = loss_grad_hess_theta(theta, modes, feats)
    ref = max(1.0, abs(L))
    report.epochs.append({"epoch": 0, "loss": L, "grad_norm": float(np.linalg.norm(g)),
                          "step_norm": 0.0, "t": 0.0, "shift": 0.0, "direction": "init"})
    for epoch in range(1, epochs + 1):
        gnorm = float(np.linalg.norm(g))
        if gnorm <= tol * ref:
            report.converged, report.message = True, "gradient tolerance reached"
            break
        accepted = None
        for kind in ("newton", "gauss-newton", "gradient"):
            if kind == "newton":
                step, tau = _newton_direction(g, H)
            elif kind == "gauss-newton":
                _, _, Hgn = loss_grad_hess_theta(theta, modes, feats, gauss_newton=True)
                step, tau = _newton_direction(g, Hgn)
            else:
                step, tau = -g / max(H.scale(), 1e-300), 0.0
            if step is None:
                continue
            slope = float(g @ step)
            if slope >= 0:
                continue
            trial, Lt, t = _line_search(theta, step, L, slope, modes, feats)
            if trial is not None:
                accepted = (kind, trial, Lt, t, tau, step)
                break
        if accepted is None:
            report.message = "line search failed"
            break
        kind, theta_new, L_new, t, tau, step = accepted
        decrease = L - L_new
        theta = theta_new
        L, g, H = loss_grad_hess_theta(theta, modes, feats)
        rec = {"epoch": epoch, "loss": L, "grad_norm": float(np.linalg.norm(g)),
               "step_norm": float(t * np.linalg.norm(step)), "t": t, "shift": tau, "direction": kind}
        report.epochs.append(rec)
        if callback is not None:
            callback(rec)
        if decrease <= 1e-15 * ref:
            report.converged, report.message = True, "loss stationary"
            break
    else:
        report.message = report.message or "epoch limit reached"
    weights = UnoWeights(theta, modes, c)
    spec = spectrum_check(weights.symbol(), 1e-14)
    report.spectrum = spec.to_dict()
    if not spec.passed:
        report.converged = False
        report.message = "trained symbol failed the spectrum check"
    report.wall_s = time.perf_counter() - t_start
    return weights, report


# --------------------------------------------------------------------------
# naive first-order training
# --------------------------------------------------------------------------

def naive_loss_and_grad(theta: np.ndarray, modes: ModeSet, R: np.ndarray, S: np.ndarray, c: int):
    """Loss and gradient evaluated sample by sample through the transforms."""
    plan = modes.plan
    sym = Symbol(global_psi(theta, modes, c), c, plan)
    P = SymbolPreconditioner(sym)
    pairs = entry_pairs(c)
    gv = np.zeros((len(pairs), plan.n))
    L = 0.0
    for r, s in zip(R, S):
        e = P.apply(r) - s
        L += float(e @ e)
        rh = _transform_samples(r, plan, c)
        eh = _transform_samples(e, plan, c)
        for m, (a, b) in enumerate(pairs):
            if a == b:
                gv[m] += 2.0 * np.real(np.conj(eh[:, a]) * rh[:, a])
            else:
                gv[m] += 2.0 * np.real(np.conj(eh[:, a]) * rh[:, b] + np.conj(eh[:, b]) * rh[:, a])
    ns = len(R)
    gv /= ns
    lay = _layout(modes)
    bypass, learned = split_theta(theta, modes, c)
    gvT = gv.T
    g0 = gvT.sum(axis=0) @ psi_jacobian(bypass, c)
    gw = np.zeros((modes.k_max, len(pairs)))
    np.add.at(gw, lay.owners, lay.weights[:, None] * gvT[lay.freqs])
    gm = np.einsum("km,kma->ka", gw, psi_jacobian(learned, c))
    return L / ns, np.concatenate([g0, gm.ravel()])


def naive_train(R: np.ndarray, S: np.ndarray, modes: ModeSet, c: int, theta0: np.ndarray,
                epochs: int = 100, lr: float = 1e-3, time_budget: float | None = None,
                target_loss: float | None = None) -> tuple[UnoWeights, TrainReport]:
    """Plain gradient descent ``theta <- theta - lr * g``."""
    if c not in (1, 2):
        raise ValueError("naive training is limited to c in (1, 2)")
    R = np.atleast_2d(np.asarray(R, dtype=float))
    S = np.atleast_2d(np.asarray(S, dtype=float))
    theta = np.asarray(theta0, dtype=float).copy()
    report = TrainReport("naive")
    t_start = time.perf_counter()
    rising, prev = 0, np.inf
    for epoch in range(1, epochs + 1):
        L, g = naive_loss_and_grad(theta, modes, R, S, c)
        report.epochs.append({"epoch": epoch, "loss": L, "grad_norm": float(np.linalg.norm(g)),
                              "step_norm": float(lr * np.linalg.norm(g)),
                              "elapsed_s": time.perf_counter() - t_start})
        if target_loss is not None and L <= target_loss:
            report.converged, report.message = True, "target loss reached"
            break
        if not np.isfinite(L):
            report.message = "diverged: non-finite loss"
            break
        rising = rising + 1 if L > prev else 0
        prev = L
        if rising >= 10:
            report.message = "diverged: loss increased for 10 consecutive epochs"
            break
        if time_budget is not None and time.perf_counter() - t_start > time_budget:
            report.message = "time budget exhausted"
            break
        theta = theta - lr * g
    else:
        report.message = "epoch limit reached"
    report.wall_s = time.perf_counter() - t_start
    weights = UnoWeights(theta, modes, c)
    report.spectrum = spectrum_check(weights.symbol(), 1e-14).to_dict()
    return weights, report


__all__ = [
    "UnoWeights", "TrainingFeatures", "precompute_features", "loss_and_derivatives",
    "hessian_v", "loss_trace_form", "direct_loss", "ArrowheadHessian", "chain_to_theta",
    "loss_theta", "loss_grad_hess_theta", "default_init", "warm_start", "TrainReport",
    "newton_train", "naive_loss_and_grad", "naive_train", "blocks_to_planes",
]
