from itertools import product

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import classify_free_nodes
from unocg.grid import (AxisBC, BoundaryCondition, RegularGrid, build_dof_map, devectorize,
                        vectorize)


def _bc(periodic):
    return BoundaryCondition(tuple(AxisBC.PERIODIC if p else AxisBC.DIRICHLET for p in periodic))


@pytest.mark.parametrize("bc, n", [
    (BoundaryCondition.periodic(2), 16),
    (BoundaryCondition.dirichlet(2), 9),
    (BoundaryCondition.mixed(2, [1]), 12),
])
def test_free_node_counts_4x4(bc, n):
    assert build_dof_map(RegularGrid((4, 4)), bc).n == n


def test_grid_counts():
    g = RegularGrid((3, 4, 5), c=3)
    assert g.n_elem == 60
    assert g.n_nodes == 4 * 5 * 6
    assert g.spacing == pytest.approx((1 / 3, 1 / 4, 1 / 5))


@pytest.mark.parametrize("kw", [
    dict(dims=(1, 4)), dict(dims=(4,)), dict(dims=(2, 2, 2, 2)), dict(dims=(4, 4), c=3),
    dict(dims=(4, 4), spacing=(1.0, -1.0)),
])
def test_grid_rejects_invalid(kw):
    with pytest.raises(ValueError):
        RegularGrid(**kw)


def test_bc_needs_one_kind_per_axis():
    with pytest.raises(ValueError):
        build_dof_map(RegularGrid((4, 4)), BoundaryCondition.periodic(3))


@pytest.mark.parametrize("text, label", [
    ("periodic", "periodic"), ("Dirichlet", "dirichlet"), ("mixed:1", "mixed:1"), ("mixed", "mixed:1"),
])
def test_bc_parse(text, label):
    assert BoundaryCondition.parse(text, 2).label == label


def test_bc_parse_rejects():
    with pytest.raises(ValueError):
        BoundaryCondition.parse("neumann", 2)
    with pytest.raises(ValueError):
        BoundaryCondition.parse("mixed:5", 2)


@pytest.mark.parametrize("d", [2, 3])
def test_free_nodes_match_geometric_classifier(d):
    sizes = range(2, 7) if d == 2 else range(2, 5)
    for dims in product(sizes, repeat=d):
        for periodic in product((True, False), repeat=d):
            dmap = build_dof_map(RegularGrid(dims), _bc(periodic))
            free, rep = classify_free_nodes(dims, periodic)
            assert dmap.n == len(free)
            # lexicographic order, last axis fastest
            index = {node: i for i, node in enumerate(free)}
            for e, elem in enumerate(product(*[range(n) for n in dims])):
                for a, corner in enumerate(product((0, 1), repeat=d)):
                    r = rep[tuple(x + o for x, o in zip(elem, corner))]
                    want = -1 if r is None else index[r]
                    assert dmap.element_nodes[e, a] == want


def test_vectorize_examples():
    dmap = build_dof_map(RegularGrid((2, 2)), BoundaryCondition.periodic(2))
    field = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert vectorize(field, dmap).tolist() == [1, 2, 3, 4]
    assert devectorize(np.array([1.0, 2, 3, 4]), dmap)[..., 0].tolist() == [[1, 2], [3, 4]]
    assert not vectorize(np.zeros((2, 2)), dmap).any()
    assert vectorize(np.zeros((2, 2)), dmap).shape == (4,)


def test_components_interleave():
    dmap = build_dof_map(RegularGrid((3, 3), c=2), BoundaryCondition.periodic(2))
    field = np.zeros(dmap.field_shape)
    field[1, 2, 1] = 7.0
    v = vectorize(field, dmap)
    assert v[2 * (1 * 3 + 2) + 1] == 7.0 and np.count_nonzero(v) == 1


def test_vectorize_shape_errors():
    dmap = build_dof_map(RegularGrid((3, 3)), BoundaryCondition.dirichlet(2))
    with pytest.raises(ValueError):
        vectorize(np.zeros((3, 3)), dmap)
    with pytest.raises(ValueError):
        devectorize(np.zeros(5), dmap)


@given(dims=st.lists(st.integers(2, 6), min_size=2, max_size=3),
       bits=st.integers(0, 7), c_full=st.booleans(), seed=st.integers(0, 2**32 - 1))
def test_vectorize_roundtrip(dims, bits, c_full, seed):
    d = len(dims)
    periodic = [(bits >> i) & 1 == 1 for i in range(d)]
    dmap = build_dof_map(RegularGrid(tuple(dims), c=d if c_full else 1), _bc(periodic))
    field = np.random.default_rng(seed).standard_normal(dmap.field_shape)
    v = vectorize(field, dmap)
    assert v.shape == (dmap.ndof,)
    assert np.array_equal(devectorize(v, dmap), field)
    assert np.array_equal(vectorize(devectorize(v, dmap), dmap), v)
