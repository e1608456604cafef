"""Independent reference implementations used as test oracles.

Nothing here imports the package's element, transform or solver code; each
oracle is written from first principles so that agreement is meaningful.
"""

from __future__ import annotations

from itertools import product

import numpy as np

SQRT2 = np.sqrt(2.0)


# --------------------------------------------------------------------------
# grid
# --------------------------------------------------------------------------

def classify_free_nodes(dims, periodic):
    """Free nodes of a regular grid by inspecting node coordinates directly.

    A node on the upper face of a periodic axis is an image of the lower face;
    a node on either face of a Dirichlet axis is fixed.  Returns the sorted
    list of free multi-indices and a dict node -> representative free node
    (None when fixed).
    """
    rep = {}
    for node in product(*[range(n + 1) for n in dims]):
        target = []
        fixed = False
        for x, n, per in zip(node, dims, periodic):
            if per:
                target.append(x % n)
            elif x == 0 or x == n:
                fixed = True
            else:
                target.append(x)
        rep[node] = None if fixed else tuple(target)
    free = sorted({v for v in rep.values() if v is not None})
    return free, rep


# --------------------------------------------------------------------------
# element matrices by 3-point Gauss-Legendre quadrature
# --------------------------------------------------------------------------

_GL_X, _GL_W = np.polynomial.legendre.leggauss(3)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W


def _grad_shape(xi, h):
    d = len(h)
    rows = []
    for corner in product((0, 1), repeat=d):
        g = []
        for k in range(d):
            val = 1.0
            for m in range(d):
                if m == k:
                    val *= (1.0 if corner[m] else -1.0) / h[m]
                else:
                    val *= xi[m] if corner[m] else 1.0 - xi[m]
            g.append(val)
        rows.append(g)
    return np.array(rows)


def _quad(d):
    for idx in product(range(3), repeat=d):
        yield tuple(_GL_X[i] for i in idx), float(np.prod([_GL_W[i] for i in idx]))


def thermal_element(kappa, h):
    d = len(h)
    vol = float(np.prod(h))
    ke = np.zeros((2 ** d, 2 ** d))
    for xi, w in _quad(d):
        g = _grad_shape(xi, h)
        ke += w * vol * kappa * g @ g.T
    return ke


def elastic_element(lam, mu, h):
    """Stiffness from the full fourth-order tensor, no Mandel shortcuts."""
    d = len(h)
    vol = float(np.prod(h))
    eye = np.eye(d)
    C4 = (lam * np.einsum("ij,kl->ijkl", eye, eye)
          + mu * (np.einsum("ik,jl->ijkl", eye, eye) + np.einsum("il,jk->ijkl", eye, eye)))
    nloc = 2 ** d
    ke = np.zeros((nloc * d, nloc * d))
    for xi, w in _quad(d):
        g = _grad_shape(xi, h)
        # strain of unit displacement of corner a in direction i
        eps = np.zeros((nloc, d, d, d))
        for a in range(nloc):
            for i in range(d):
                grad_u = np.zeros((d, d))
                grad_u[i, :] = g[a]
                eps[a, i] = 0.5 * (grad_u + grad_u.T)
        E = eps.reshape(nloc * d, d, d)
        ke += w * vol * np.einsum("aij,ijkl,bkl->ab", E, C4, E)
    return ke


def assembled_matrix(dims, periodic, c, indicator, element_mats, h=None):
    """Dense global stiffness assembled element by element from geometry."""
    d = len(dims)
    free, rep = classify_free_nodes(dims, periodic)
    index = {node: i for i, node in enumerate(free)}
    n = len(free)
    A = np.zeros((c * n, c * n))
    for elem in product(*[range(n_) for n_ in dims]):
        ke = element_mats[int(indicator[elem])]
        dofs = []
        for corner in product((0, 1), repeat=d):
            node = tuple(e + o for e, o in zip(elem, corner))
            r = rep[node]
            for j in range(c):
                dofs.append(None if r is None else c * index[r] + j)
        for a, ga in enumerate(dofs):
            if ga is None:
                continue
            for b, gb in enumerate(dofs):
                if gb is not None:
                    A[ga, gb] += ke[a, b]
    return A


# --------------------------------------------------------------------------
# transforms
# --------------------------------------------------------------------------

def dft_matrix(n):
    j = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(j, j) / n) / np.sqrt(n)


def dst1_matrix(n):
    j = np.arange(1, n + 1)
    return np.sqrt(2.0 / (n + 1)) * np.sin(np.pi * np.outer(j, j) / (n + 1))


def transform_matrix(kinds, lengths):
    """Kronecker product of per-axis unitary matrices (last axis fastest)."""
    T = np.ones((1, 1))
    for kind, n in zip(kinds, lengths):
        T = np.kron(T, dft_matrix(n) if kind == "fourier" else dst1_matrix(n))
    return T


def conj_symmetrize(planes, kinds):
    """Average each plane with its frequency reflection on Fourier axes."""
    out = np.array(planes, dtype=float)
    flipped = out
    for ax, kind in enumerate(kinds):
        if kind == "fourier":
            axis = ax + 1
            flipped = np.roll(np.flip(flipped, axis=axis), 1, axis=axis)
    return 0.5 * (out + flipped)


# --------------------------------------------------------------------------
# solvers
# --------------------------------------------------------------------------

def textbook_cg(A, b, iters):
    """Unpreconditioned CG in the Hestenes-Stiefel form, returns iterates."""
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rr = r @ r
    out = [x.copy()]
    for _ in range(iters):
        Ap = A @ p
        a = rr / (p @ Ap)
        x = x + a * p
        r = r - a * Ap
        rr_new = r @ r
        p = r + (rr_new / rr) * p
        rr = rr_new
        out.append(x.copy())
    return out


def random_spd(rng, n, cond=10.0):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    ev = np.exp(rng.uniform(0.0, np.log(cond), n))
    return (Q * ev) @ Q.T
