import numpy as np
import pytest
import scipy.sparse as sp
from numpy.testing import assert_allclose

from fnar.errors import InvalidArgumentError, SchemaError
from fnar.network import (
    NetworkWeights,
    QuadWeightMatrix,
    build_distance_weights,
    build_lattice_weights,
    build_quadratic_weights,
    read_edge_list,
    write_edge_list,
)


def _find_seed(n, predicate, limit=200):
    for seed in range(limit):
        w = build_lattice_weights(n, seed)
        if predicate(w):
            return w
    raise AssertionError("no seed produced the wanted configuration")


class TestLattice:
    def test_adjacent_pair_is_symmetric_exchange(self):
        w = _find_seed(2, lambda w: w.w.nnz == 2)
        assert_allclose(w.dense(), [[0.0, 1.0], [1.0, 0.0]])

    def test_isolated_unit_keeps_zero_row(self):
        w = _find_seed(2, lambda w: w.w.nnz == 0)
        assert_allclose(w.dense(), np.zeros((2, 2)))
        assert w.row_sup == 0.0

    def test_row_sums_bounded_by_one(self):
        w = build_lattice_weights(40, 123)
        sums = np.asarray(np.abs(w.w).sum(axis=1)).ravel()
        assert w.row_sup <= 1.0 + 1e-15
        assert np.all((np.isclose(sums, 1.0)) | (sums == 0.0))

    def test_degree_at_most_four(self):
        for seed in range(5):
            w = build_lattice_weights(40, seed)
            assert np.max(w.degrees) <= 4

    def test_needs_two_units(self):
        with pytest.raises(InvalidArgumentError):
            build_lattice_weights(1, 0)

    def test_determinism(self):
        a = build_lattice_weights(30, 7)
        b = build_lattice_weights(30, 7)
        assert (a.w != b.w).nnz == 0


class TestDistanceWeights:
    def test_collinear_middle_unit(self):
        coords = np.array([[0.0, 0.0], [0.5, 0.0], [1.0, 0.0]])
        w = build_distance_weights(coords, threshold=1.0)
        assert_allclose(w.dense()[1], [0.5, 0.0, 0.5])

    def test_zero_threshold(self):
        coords = np.array([[0.0, 0.0], [1.0, 0.0]])
        w = build_distance_weights(coords, threshold=0.0)
        assert w.w.nnz == 0

    def test_single_neighbour_normalizes_to_one(self):
        coords = np.array([[0.0, 0.0], [0.4, 0.0]])
        w = build_distance_weights(coords, threshold=1.0)
        assert_allclose(w.dense(), [[0.0, 1.0], [1.0, 0.0]])

    def test_duplicate_coordinates_rejected(self):
        coords = np.array([[0.0, 0.0], [0.0, 0.0]])
        with pytest.raises(InvalidArgumentError):
            build_distance_weights(coords, threshold=1.0)

    def test_binary_variant(self):
        coords = np.array([[0.0, 0.0], [0.5, 0.0], [0.9, 0.0]])
        w = build_distance_weights(coords, threshold=1.0, inverse_distance=False)
        assert_allclose(w.dense()[0], [0.0, 0.5, 0.5])

    def test_great_circle_metric(self):
        # one degree of longitude at the equator is about 111 km
        coords = np.array([[0.0, 0.0], [1.0, 0.0]])
        w = build_distance_weights(coords, threshold=120.0, metric="greatcircle")
        assert w.w.nnz == 2
        w2 = build_distance_weights(coords, threshold=100.0, metric="greatcircle")
        assert w2.w.nnz == 0


class TestQuadraticWeights:
    def test_symmetric_matrix_unchanged(self):
        w = NetworkWeights(w=sp.csr_array(np.array([[0.0, 0.3], [0.3, 0.0]])))
        p1, _ = build_quadratic_weights(w)
        assert_allclose(p1.dense(), w.dense())

    def test_symmetrization(self):
        w = NetworkWeights(w=sp.csr_array(np.array([[0.0, 1.0], [0.0, 0.0]])))
        p1, _ = build_quadratic_weights(w)
        assert_allclose(p1.dense(), [[0.0, 0.5], [0.5, 0.0]])

    def test_two_cycle_second_matrix_vanishes(self):
        w = NetworkWeights(w=sp.csr_array(np.array([[0.0, 1.0], [1.0, 0.0]])))
        _, p2 = build_quadratic_weights(w)
        # W'W = I for the exchange matrix, so removing the diagonal empties it
        assert p2.p.nnz == 0

    @pytest.mark.parametrize("seed", range(4))
    def test_invariants_on_lattice(self, seed):
        w = build_lattice_weights(25, seed)
        for mat in build_quadratic_weights(w):
            p = mat.dense()
            assert np.max(np.abs(p - p.T)) == 0.0
            assert np.max(np.abs(np.diag(p))) == 0.0

    def test_constructor_rejects_asymmetry(self):
        bad = sp.csr_array(np.array([[0.0, 1.0], [0.0, 0.0]]))
        with pytest.raises(InvalidArgumentError):
            QuadWeightMatrix(p=bad)

    def test_constructor_rejects_nonzero_diagonal(self):
        bad = sp.csr_array(np.array([[1.0, 0.0], [0.0, 0.0]]))
        with pytest.raises(InvalidArgumentError):
            QuadWeightMatrix(p=bad)


class TestEdgeList:
    def test_round_trip(self, tmp_path):
        w = build_lattice_weights(12, 3)
        path = tmp_path / "w.csv"
        write_edge_list(w, path)
        back = read_edge_list(path, n=12)
        assert (w.w != back.w).nnz == 0

    def test_header_required(self, tmp_path):
        path = tmp_path / "w.csv"
        path.write_text("0,1,0.5\n")
        with pytest.raises(SchemaError):
            read_edge_list(path)

    def test_self_loop_rejected_with_line(self, tmp_path):
        path = tmp_path / "w.csv"
        path.write_text("i,j,weight\n0,1,0.5\n1,1,0.3\n")
        with pytest.raises(SchemaError) as err:
            read_edge_list(path)
        assert err.value.line == 3

    def test_weight_matrix_diagonal_enforced(self):
        with pytest.raises(InvalidArgumentError):
            NetworkWeights(w=sp.csr_array(np.array([[0.5, 0.0], [0.0, 0.0]])))
