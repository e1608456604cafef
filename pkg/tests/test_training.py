import json
import time

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import conj_symmetrize
from unocg import transform as tf
from unocg.datagen import DatasetSpec, dataset_pairs, gen_dataset, gen_microstructure, make_spec, random_pairs
from unocg.parametrization import (blocks_to_planes, global_psi, identity_theta, lower_factor, n_unique, n_weights, planes_to_blocks,
                                   psi, psi_jacobian, psi_matrix, theta_from_spd)
from unocg.physics import PhaseParams
from unocg.precond import Symbol, SymbolPreconditioner, fans_symbol, spectrum_check
from unocg.solver import SolveConfig, solve_spec
from unocg.training import (UnoWeights, chain_to_theta, default_init, direct_loss,
                            loss_and_derivatives, loss_grad_hess_theta, loss_theta,
                            loss_trace_form, naive_loss_and_grad, naive_train, newton_train,
                            precompute_features, warm_start)
from unocg.transform import AxisKind, TransformPlan, build_mode_set

F, S = AxisKind.FOURIER, AxisKind.SINE
PLANS = {
    "periodic": lambda d: TransformPlan((F,) * d, (6,) * d if d == 2 else (4,) * d),
    "dirichlet": lambda d: TransformPlan((S,) * d, (5,) * d if d == 2 else (3,) * d),
    "mixed": lambda d: TransformPlan((F,) * (d - 1) + (S,), (6,) * (d - 1) + (5,) if d == 2 else (4, 4, 3)),
}


def _spd_symbol(rng, plan, c):
    X = rng.standard_normal(plan.lengths + (c, c))
    blocks = X @ np.swapaxes(X, -1, -2) + 0.5 * np.eye(c)
    planes = conj_symmetrize(blocks_to_planes(blocks.reshape(-1, c, c)).reshape((-1,) + plan.lengths),
                             [k.value for k in plan.kinds])
    return Symbol(planes, c, plan)


def _data(rng, plan, c, ns=3, noise=0.1):
    """Residuals with responses from a random SPD symbol plus noise."""
    R = rng.standard_normal((ns, c * plan.n))
    P = SymbolPreconditioner(_spd_symbol(rng, plan, c))
    S_ = np.stack([P(r) for r in R]) + noise * rng.standard_normal(R.shape)
    return R, S_


def _setup(c, bc, seed=0, M=1):
    d = 2 if c < 3 else 3
    plan = PLANS[bc](d)
    rng = np.random.default_rng(seed)
    R, S_ = _data(rng, plan, c)
    feats = precompute_features(R, S_, plan, c)
    modes = build_mode_set(M, plan)
    return rng, plan, R, S_, feats, modes


# --------------------------------------------------------------------------
# parametrization
# --------------------------------------------------------------------------

def test_psi_examples():
    assert np.allclose(psi_matrix(np.array([1.0, 1.0, 0.0]), 2), np.eye(2))
    assert np.allclose(psi_matrix(np.array([2.0, 1.0, 1.0]), 2), [[4, 2], [2, 2]])
    assert psi(np.array([3.0]), 1) == pytest.approx([9.0])


@pytest.mark.parametrize("c", [1, 2, 3])
def test_psi_matches_factor_product_and_jacobian(c):
    rng = np.random.default_rng(c)
    C = n_unique(c)
    for _ in range(20):
        th = rng.standard_normal(C)
        L = lower_factor(th, c)
        assert np.allclose(np.tril(L), L)
        full = L @ L.T
        got = psi_matrix(th, c)
        assert np.abs(got - full).max() < 1e-14
        assert np.abs(planes_to_blocks(psi(th, c)[:, None], c)[0] - full).max() < 1e-14
        J = psi_jacobian(th, c)
        h = 1e-6
        fd = np.stack([(psi(th + h * e, c) - psi(th - h * e, c)) / (2 * h) for e in np.eye(C)], axis=1)
        assert np.linalg.norm(fd - J) <= 1e-7 * np.linalg.norm(J)


@pytest.mark.parametrize("c", [1, 2, 3])
def test_theta_from_spd_roundtrip(c):
    rng = np.random.default_rng(0)
    X = rng.standard_normal((c, c))
    mat = X @ X.T + 0.5 * np.eye(c)
    assert np.allclose(psi_matrix(theta_from_spd(mat), c), mat)
    assert np.allclose(psi_matrix(identity_theta(c, 2.5), c), 2.5 * np.eye(c))


def test_global_psi_bypass_only():
    plan = PLANS["periodic"](2)
    ms = build_mode_set(2, plan)
    th = np.concatenate([np.array([2.0, 1.0, 1.0]), np.zeros(3 * ms.k_max)])
    v = global_psi(th, ms, 2).reshape(3, -1)
    assert np.allclose(v.T, [4.0, 2.0, 2.0])


def test_global_psi_touches_only_learned_frequencies():
    plan = TransformPlan((F, F), (8, 8))
    ms = build_mode_set(1, plan)
    th = np.random.default_rng(0).standard_normal(n_weights(ms, 1))
    v = global_psi(th, ms, 1).ravel()
    differ = np.flatnonzero(np.abs(v - th[0] ** 2) > 1e-14)
    expected = {tf.mode_to_flat_index(plan, k) for k in ms.modes} | {
        tf.mode_to_flat_index(plan, k) for k in ms.conj_modes}
    assert set(differ) == expected


def test_weights_validation():
    ms = build_mode_set(1, PLANS["periodic"](2))
    with pytest.raises(ValueError):
        UnoWeights(np.zeros(3), ms, 1)
    w = UnoWeights(np.ones(n_weights(ms, 2)), ms, 2)
    assert w.n_w == 3 * (ms.k_max + 1)


# --------------------------------------------------------------------------
# features and loss in v
# --------------------------------------------------------------------------

def test_features_of_zero_data():
    plan = PLANS["mixed"](2)
    f = precompute_features(np.zeros((1, plan.n)), np.zeros((1, plan.n)), plan, 1)
    assert not f.alpha.any() and not f.beta.any() and f.delta == 0.0


def test_features_validation():
    plan = PLANS["periodic"](2)
    with pytest.raises(ValueError):
        precompute_features(np.zeros((2, plan.n)), np.zeros((3, plan.n)), plan, 1)
    with pytest.raises(ValueError):
        precompute_features(np.zeros((0, plan.n)), np.zeros((0, plan.n)), plan, 1)
    with pytest.raises(ValueError):
        precompute_features(np.zeros((1, plan.n + 1)), np.zeros((1, plan.n + 1)), plan, 1)


@pytest.mark.parametrize("bc", ["periodic", "dirichlet", "mixed"])
def test_single_sample_recovers_known_symbol(bc):
    plan = PLANS[bc](2)
    rng = np.random.default_rng(1)
    phi = conj_symmetrize(rng.uniform(0.5, 2.0, (1,) + plan.lengths), [k.value for k in plan.kinds])
    r = rng.standard_normal(plan.n)
    s = SymbolPreconditioner(Symbol(phi, 1, plan))(r)
    f = precompute_features(r[None], s[None], plan, 1)
    live = f.alpha[0] > 1e-12
    vstar = f.beta[0][live] / (2 * f.alpha[0][live])
    assert np.allclose(vstar, phi.ravel()[live], rtol=1e-10)


def test_feature_sizes_c2():
    plan = TransformPlan((F, F), (16, 16))
    R, S_ = _data(np.random.default_rng(0), plan, 2, ns=7)
    f = precompute_features(R, S_, plan, 2)
    assert f.alpha.size + f.beta.size == 6 * 256
    assert (f.alpha[:2] >= 0).all()


def test_features_order_independent():
    rng, plan, R, S_, feats, _ = _setup(2, "periodic")
    perm = rng.permutation(len(R))
    f2 = precompute_features(R[perm], S_[perm], plan, 2)
    assert np.allclose(f2.alpha, feats.alpha, rtol=1e-14, atol=1e-14)
    assert np.allclose(f2.beta, feats.beta, rtol=1e-14, atol=1e-14)


@pytest.mark.parametrize("c", [1, 2, 3])
def test_loss_at_zero(c):
    _, _, _, _, f, _ = _setup(c, "periodic")
    L, g, _ = loss_and_derivatives(np.zeros(f.C * f.n), f)
    assert L == pytest.approx(f.delta, rel=1e-14)
    assert np.array_equal(g, -f.beta)


@pytest.mark.parametrize("c", [1, 2, 3])
@pytest.mark.parametrize("bc", ["periodic", "dirichlet", "mixed"])
def test_loss_matches_direct_and_trace(c, bc):
    rng, plan, R, S_, f, _ = _setup(c, bc, seed=c)
    v = conj_symmetrize(rng.standard_normal((f.C,) + plan.lengths), [k.value for k in plan.kinds])
    L = loss_and_derivatives(v.reshape(f.C, -1), f)[0]
    Ld = direct_loss(SymbolPreconditioner(Symbol(v, c, plan)), R, S_)
    assert abs(L - Ld) <= 1e-10 * abs(Ld)
    assert abs(loss_trace_form(v.reshape(f.C, -1), f) - Ld) <= 1e-10 * abs(Ld)


@pytest.mark.parametrize("c", [1, 2, 3])
def test_loss_derivatives_in_v_finite_differences(c):
    rng, plan, R, S_, f, _ = _setup(c, "mixed", seed=5)
    v = rng.standard_normal(f.C * f.n)
    L, g, H = loss_and_derivatives(v, f)
    h = 1e-5
    idx = rng.choice(v.size, 25, replace=False)
    g_flat = g.ravel()
    fd = np.array([(loss_and_derivatives(v + h * e, f)[0] - loss_and_derivatives(v - h * e, f)[0]) / (2 * h)
                   for e in np.eye(v.size)[idx]])
    assert np.linalg.norm(fd - g_flat[idx]) <= 1e-7 * np.linalg.norm(g_flat[idx])
    # Hessian blocks couple the C planes of one frequency only
    Hd = np.zeros((v.size, v.size))
    n = f.n
    for a in range(f.C):
        for b in range(f.C):
            Hd[a * n:(a + 1) * n, b * n:(b + 1) * n] = np.diag(H[a, b])
    cols = rng.choice(v.size, 10, replace=False)
    for j in cols:
        e = np.zeros(v.size)
        e[j] = h
        fdcol = (loss_and_derivatives(v + e, f)[1].ravel() - loss_and_derivatives(v - e, f)[1].ravel()) / (2 * h)
        assert np.linalg.norm(fdcol - Hd[:, j]) <= 1e-7 * max(np.linalg.norm(Hd[:, j]), 1e-300)


@given(seed=st.integers(0, 10_000), c=st.sampled_from([1, 2, 3]), lam=st.floats(0, 1))
def test_loss_is_convex_in_v(seed, c, lam):
    rng = np.random.default_rng(seed)
    plan = PLANS["periodic"](2)
    R, S_ = _data(rng, plan, c, ns=2)
    f = precompute_features(R, S_, plan, c)
    v1, v2 = rng.standard_normal((2, f.C * f.n))
    L = lambda v: loss_and_derivatives(v, f)[0]  # noqa: E731
    assert L(lam * v1 + (1 - lam) * v2) <= lam * L(v1) + (1 - lam) * L(v2) + 1e-10


# --------------------------------------------------------------------------
# chain rule to theta
# --------------------------------------------------------------------------

@pytest.mark.parametrize("c", [1, 2, 3])
@pytest.mark.parametrize("bc", ["periodic", "dirichlet", "mixed"])
def test_theta_gradient_and_hessian_finite_differences(c, bc):
    rng, plan, R, S_, f, ms = _setup(c, bc, seed=11)
    th = rng.standard_normal(n_weights(ms, c))
    L, g, H = loss_grad_hess_theta(th, ms, f)
    Hd = H.to_dense()
    assert np.allclose(Hd, Hd.T, atol=1e-12 * np.abs(Hd).max())
    h = 1e-5
    E = np.eye(th.size)
    fd_g = np.array([(loss_theta(th + h * e, ms, f) - loss_theta(th - h * e, ms, f)) / (2 * h) for e in E])
    assert np.linalg.norm(fd_g - g) <= 1e-6 * np.linalg.norm(g)
    fd_H = np.column_stack([(loss_grad_hess_theta(th + h * e, ms, f)[1]
                             - loss_grad_hess_theta(th - h * e, ms, f)[1]) / (2 * h) for e in E])
    assert np.linalg.norm(fd_H - Hd) <= 1e-5 * np.linalg.norm(Hd)


def test_bypass_gradient_is_sum_of_frequency_terms():
    rng, plan, R, S_, f, ms = _setup(2, "periodic", seed=3)
    th = np.concatenate([rng.standard_normal(3), np.zeros(3 * ms.k_max)])
    v = global_psi(th, ms, 2).reshape(3, -1)
    _, gv, hv = loss_and_derivatives(v, f)
    g, _ = chain_to_theta(th, ms, 2, gv, hv)
    assert np.allclose(g[:3], gv.sum(axis=1) @ psi_jacobian(th[:3], 2), rtol=1e-12)


@pytest.mark.parametrize("c", [1, 2, 3])
def test_arrowhead_operations(c):
    rng, plan, R, S_, f, ms = _setup(c, "periodic", seed=2, M=2)
    th = rng.standard_normal(n_weights(ms, c))
    _, g, H = loss_grad_hess_theta(th, ms, f, gauss_newton=True)
    Hd = H.to_dense()
    x = rng.standard_normal(th.size)
    assert np.allclose(H.matvec(x), Hd @ x, rtol=1e-12, atol=1e-12 * np.abs(Hd).max())
    shift = 0.1 * H.scale()
    sol = H.solve(g, shift=shift)
    assert np.allclose((Hd + shift * np.eye(th.size)) @ sol, g, rtol=1e-8, atol=1e-10 * np.linalg.norm(g))


# --------------------------------------------------------------------------
# Newton training
# --------------------------------------------------------------------------

def _homogeneous_16():
    spec = make_spec("thermal", (16, 16), "periodic", np.zeros((16, 16), np.int8), PhaseParams.thermal(1, 1))
    R, S_ = random_pairs(spec, 4, seed=0)
    plan = TransformPlan.for_dofmap(spec.dmap)
    return spec, R, S_, plan, build_mode_set(8, plan)


def test_newton_homogeneous_reproduces_fans():
    spec, R, S_, plan, ms = _homogeneous_16()
    f = precompute_features(R, S_, plan, 1)
    w, rep = newton_train(f, ms, epochs=5)
    assert rep.final_loss < 1e-12
    assert rep.spectrum["passed"]
    uno = w.symbol().planes.ravel()
    fans = fans_symbol(spec.params, spec.dmap).planes.ravel()
    assert np.abs(uno[1:] - fans[1:]).max() < 1e-8


def test_newton_cold_start_decreases_loss():
    spec, R, S_, plan, ms = _homogeneous_16()
    f = precompute_features(R, S_, plan, 1)
    w, rep = newton_train(f, ms, epochs=8, warm=False)
    losses = rep.losses
    assert all(b <= a * (1 + 1e-12) for a, b in zip(losses, losses[1:]))
    assert losses[-1] < losses[0]
    assert rep.spectrum["passed"]


def test_newton_zero_features_leave_weights():
    plan = PLANS["periodic"](2)
    ms = build_mode_set(1, plan)
    f = precompute_features(np.zeros((1, plan.n)), np.zeros((1, plan.n)), plan, 1)
    th0 = np.random.default_rng(0).standard_normal(n_weights(ms, 1))
    w, rep = newton_train(f, ms, theta0=th0, epochs=1)
    assert np.array_equal(w.theta, th0)
    assert rep.final_loss == 0.0


@pytest.mark.parametrize("c, bc", [(2, "mixed"), (3, "dirichlet"), (1, "periodic")])
def test_newton_random_data_monotone(c, bc):
    _, plan, R, S_, f, ms = _setup(c, bc, seed=4)
    w, rep = newton_train(f, ms, theta0=default_init(f, ms), epochs=15)
    losses = rep.losses
    assert all(b <= a + 1e-12 * abs(a) for a, b in zip(losses, losses[1:]))
    assert spectrum_check(w.symbol(), 1e-14).passed
    lines = rep.to_jsonl().strip().splitlines()
    assert len(lines) == len(rep.epochs) + 1
    assert json.loads(lines[-1])["method"] == "newton"


def test_newton_improves_on_warm_start():
    _, plan, R, S_, f, ms = _setup(2, "periodic", seed=9, M=2)
    th = warm_start(f, ms)
    w, rep = newton_train(f, ms, epochs=10)
    assert rep.final_loss <= loss_theta(th, ms, f) + 1e-12
    assert rep.spectrum["passed"]


def test_trained_uno_within_twice_fans_32():
    params = PhaseParams.thermal(1.0, 0.2)
    cont = gen_dataset(DatasetSpec("thermal", (32, 32), "periodic", n_micro=10, params=params, seed=3))
    R, S_ = dataset_pairs(cont)
    assert len(R) == 20
    plan = TransformPlan((F, F), (32, 32))
    w, rep = newton_train(precompute_features(R, S_, plan, 1), build_mode_set(8, plan))
    assert rep.spectrum["passed"]
    cfg = SolveConfig(tol=1e-6)
    for seed in (101, 102):
        ind = gen_microstructure(seed, (32, 32))
        spec = make_spec("thermal", (32, 32), "periodic", ind, params, [1.0, 0.0])
        _, r_uno = solve_spec(spec, w.preconditioner(), cfg)
        _, r_fans = solve_spec(spec, SymbolPreconditioner(fans_symbol(params, spec.dmap)), cfg)
        assert r_uno.converged and r_uno.iterations <= 2 * r_fans.iterations


# --------------------------------------------------------------------------
# naive training
# --------------------------------------------------------------------------

@pytest.mark.parametrize("c, bc", [(1, "periodic"), (2, "mixed"), (2, "dirichlet")])
def test_naive_gradient_matches_features(c, bc):
    rng, plan, R, S_, f, ms = _setup(c, bc, seed=6)
    th = rng.standard_normal(n_weights(ms, c))
    L1, g1 = naive_loss_and_grad(th, ms, R, S_, c)
    L2, g2, _ = loss_grad_hess_theta(th, ms, f)
    assert abs(L1 - L2) <= 1e-10 * abs(L2)
    assert np.linalg.norm(g1 - g2) <= 1e-10 * np.linalg.norm(g2)


def test_naive_zero_rate_keeps_weights():
    rng, plan, R, S_, f, ms = _setup(1, "periodic")
    th = rng.standard_normal(n_weights(ms, 1))
    w, rep = naive_train(R, S_, ms, 1, th, epochs=1, lr=0.0)
    assert np.array_equal(w.theta, th)


def test_naive_rejects_c3_and_detects_divergence():
    rng, plan, R, S_, f, ms = _setup(3, "periodic")
    with pytest.raises(ValueError):
        naive_train(R, S_, ms, 3, np.ones(n_weights(ms, 3)))
    rng, plan, R, S_, f, ms = _setup(1, "periodic")
    with np.errstate(all="ignore"):
        _, rep = naive_train(R, S_, ms, 1, default_init(f, ms), epochs=500, lr=1e3)
    assert rep.message.startswith("diverged")


def test_naive_is_much_slower_than_newton():
    spec, R, S_, plan, ms = _homogeneous_16()
    t0 = time.perf_counter()
    f = precompute_features(R, S_, plan, 1)
    _, rep = newton_train(f, ms)
    t_newton = time.perf_counter() - t0
    assert rep.final_loss < 1e-4
    budget = max(10 * t_newton, 0.5)
    _, nrep = naive_train(R, S_, ms, 1, default_init(f, ms), epochs=100_000, lr=0.1,
                          time_budget=budget, target_loss=1e-4)
    if nrep.converged:
        assert nrep.epochs[-1]["elapsed_s"] >= 10 * t_newton
    assert nrep.final_loss >= 1e-4 or nrep.epochs[-1]["elapsed_s"] >= 10 * t_newton
