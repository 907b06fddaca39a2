"""Geometry tests: wrapping, minimum-image displacements, k-NN graphs.

The minimum-image oracle enumerates all 27 periodic images and keeps the
shortest; the k-NN oracle is a dense O(N^2) sort.  Both must agree exactly
with the production implementations.
"""
import numpy as np
import pytest

from pbcdiff import PeriodicBox, knn_graph, min_image, pbc_distance, wrap_within
from pbcdiff.box import NeighborGraph, pair_displacements, require_wrapped


def brute_min_image(a, b, box):
    """Shortest image of the displacement b - a over all 27 neighbor shifts.

    Shares the initial subtraction with the production code so the
    comparison isolates the image selection, which can then be exact.
    """
    dr0 = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
    best = None
    best_d2 = np.inf
    for ix in (-1, 0, 1):
        for iy in (-1, 0, 1):
            for iz in (-1, 0, 1):
                dr = dr0 + np.array([ix, iy, iz]) * box.lengths
                d2 = float(dr @ dr)
                if d2 < best_d2:
                    best_d2 = d2
                    best = dr
    return best


def test_box_validation():
    with pytest.raises(ValueError):
        PeriodicBox(lengths=(1.0, -2.0, 3.0))
    with pytest.raises(ValueError):
        PeriodicBox(lengths=(0.0, 1.0, 1.0))
    with pytest.raises(ValueError):
        PeriodicBox(lengths=(np.inf, 1.0, 1.0))


def test_box_properties():
    box = PeriodicBox(lengths=(2.0, 3.0, 4.0))
    assert box.ndim == 3
    assert box.volume == pytest.approx(24.0)
    assert PeriodicBox.cubic(5.0) == PeriodicBox(lengths=(5.0, 5.0, 5.0))
    assert hash(PeriodicBox.cubic(5.0)) == hash(PeriodicBox(lengths=(5.0, 5.0, 5.0)))
    assert PeriodicBox.cubic(5.0) != PeriodicBox(lengths=(5.0, 5.0, 5.1))


def test_box_lengths_read_only():
    box = PeriodicBox.cubic(1.0)
    with pytest.raises(ValueError):
        box.lengths[0] = 2.0


def test_wrap_within_range():
    box = PeriodicBox(lengths=(2.0, 3.0, 4.0))
    rng = np.random.default_rng(0)
    pts = rng.uniform(-50.0, 50.0, size=(500, 3))
    wrapped = wrap_within(pts, box)
    assert np.all(wrapped >= 0.0)
    assert np.all(wrapped < box.lengths)
    # idempotent on already-wrapped input
    assert np.array_equal(wrap_within(wrapped, box), wrapped)


def test_wrap_within_negative_epsilon():
    # np.mod(-tiny, L) rounds to exactly L; the wrap must still land in [0, L)
    box = PeriodicBox.cubic(1.0)
    for val in (-5e-17, -1e-20, -2.5e-17):
        out = wrap_within(np.array([val, val, val]), box)
        assert np.all(out < 1.0)
        assert np.all(out >= 0.0)


def test_wrap_preserves_image():
    box = PeriodicBox(lengths=(1.5, 2.5, 3.5))
    p = np.array([[0.3, 0.4, 0.5]])
    shifted = p + np.array([3, -2, 5]) * box.lengths
    assert np.allclose(wrap_within(shifted, box), p, atol=1e-12)


def test_min_image_matches_27_image_search():
    box = PeriodicBox(lengths=(1.0, 2.0, 3.3))
    rng = np.random.default_rng(42)
    a = rng.uniform(0, 1, size=(1000, 3)) * box.lengths
    b = rng.uniform(0, 1, size=(1000, 3)) * box.lengths
    got = min_image(a, b, box)
    for i in range(1000):
        assert np.array_equal(got[i], brute_min_image(a[i], b[i], box)), i


def test_min_image_components_in_half_open_interval():
    box = PeriodicBox.cubic(2.0)
    rng = np.random.default_rng(3)
    a = rng.uniform(0, 2, size=(2000, 3))
    b = rng.uniform(0, 2, size=(2000, 3))
    dr = min_image(a, b, box)
    assert np.all(dr > -1.0)
    assert np.all(dr <= 1.0)


def test_min_image_antisymmetry():
    box = PeriodicBox(lengths=(1.0, 1.7, 2.9))
    rng = np.random.default_rng(7)
    a = rng.uniform(0, 1, size=(300, 3)) * box.lengths
    b = rng.uniform(0, 1, size=(300, 3)) * box.lengths
    assert np.array_equal(min_image(a, b, box), -min_image(b, a, box))


def test_min_image_tie_takes_positive_half():
    # at separation exactly L/2 both images are equidistant; the convention
    # is +L/2 regardless of direction
    box = PeriodicBox.cubic(2.0)
    a = np.array([0.0, 0.0, 0.0])
    b = np.array([1.0, 0.0, 0.0])
    assert min_image(a, b, box)[0] == 1.0
    assert min_image(b, a, box)[0] == 1.0


def test_min_image_rejects_unwrapped_input():
    box = PeriodicBox.cubic(1.0)
    a = np.array([5.2, -3.9, 0.1])
    b = np.array([0.2, 0.4, 0.3])
    with pytest.raises(ValueError):
        min_image(a, b, box)


def test_pbc_distance():
    box = PeriodicBox.cubic(10.0)
    a = np.array([[0.5, 0.5, 0.5]])
    b = np.array([[9.5, 0.5, 0.5]])
    assert pbc_distance(a, b, box)[0] == pytest.approx(1.0)
    rng = np.random.default_rng(11)
    pa = rng.uniform(0, 10, size=(100, 3))
    pb = rng.uniform(0, 10, size=(100, 3))
    dr = min_image(pa, pb, box)
    assert np.allclose(pbc_distance(pa, pb, box), np.linalg.norm(dr, axis=1))


def test_require_wrapped_rejects_out_of_box():
    box = PeriodicBox.cubic(1.0)
    with pytest.raises(ValueError):
        require_wrapped(np.array([[0.5, 1.0, 0.5]]), box)
    with pytest.raises(ValueError):
        require_wrapped(np.array([[-0.1, 0.5, 0.5]]), box)
    with pytest.raises(ValueError):
        require_wrapped(np.array([[np.nan, 0.5, 0.5]]), box)


def brute_knn(points, k, box):
    """Dense oracle: for each node, sort all others by (distance^2, index)."""
    n = len(points)
    edges = []
    for i in range(n):
        cand = []
        for j in range(n):
            if j == i:
                continue
            dr = brute_min_image(points[i], points[j], box)
            cand.append((float(dr @ dr), j))
        cand.sort()
        for _, j in cand[:k]:
            edges.append((i, j))
    return np.array(edges, dtype=np.int64)


def test_knn_graph_matches_brute_force():
    box = PeriodicBox.cubic(1.0)
    rng = np.random.default_rng(5)
    for trial in range(5):
        pts = rng.random((20, 3))
        graph = knn_graph(pts, 4, box)
        assert np.array_equal(graph.edges, brute_knn(pts, 4, box)), trial


def test_knn_graph_noncubic_box():
    box = PeriodicBox(lengths=(1.0, 2.0, 0.5))
    rng = np.random.default_rng(9)
    pts = rng.random((15, 3)) * box.lengths
    graph = knn_graph(pts, 3, box)
    assert np.array_equal(graph.edges, brute_knn(pts, 3, box))


def test_knn_graph_shapes_and_displacements():
    box = PeriodicBox.cubic(1.0)
    rng = np.random.default_rng(1)
    pts = rng.random((30, 3))
    g = knn_graph(pts, 6, box)
    assert g.edges.shape == (180, 2)
    assert g.displacement.shape == (180, 3)
    assert g.n_nodes == 30
    assert g.n_edges == 180
    src, dst = g.edges[:, 0], g.edges[:, 1]
    assert np.array_equal(g.displacement, min_image(pts[src], pts[dst], box))


def test_knn_graph_tie_break_prefers_lower_index():
    # four particles on a line, two of them equidistant from the origin node
    box = PeriodicBox.cubic(8.0)
    pts = np.array([
        [4.0, 4.0, 4.0],
        [5.0, 4.0, 4.0],  # distance 1, index 1
        [3.0, 4.0, 4.0],  # distance 1, index 2
        [4.0, 6.0, 4.0],  # distance 2
    ])
    g = knn_graph(pts, 3, box)
    assert list(g.edges[:3, 1]) == [1, 2, 3]


def test_knn_graph_coincident_particles():
    box = PeriodicBox.cubic(1.0)
    pts = np.array([
        [0.5, 0.5, 0.5],
        [0.5, 0.5, 0.5],
        [0.5, 0.5, 0.5],
        [0.9, 0.5, 0.5],
    ])
    g = knn_graph(pts, 2, box)
    # all distances defined, ties resolved by index
    assert list(g.edges[:2, 1]) == [1, 2]
    assert list(g.edges[2:4, 1]) == [0, 2]


def test_knn_graph_k_validation():
    box = PeriodicBox.cubic(1.0)
    pts = np.random.default_rng(0).random((5, 3))
    with pytest.raises(ValueError):
        knn_graph(pts, 5, box)
    with pytest.raises(ValueError):
        knn_graph(pts, 0, box)


def test_knn_graph_translation_invariance():
    # shift all points rigidly (grid-free positions), re-wrap: same topology
    box = PeriodicBox.cubic(1.0)
    rng = np.random.default_rng(23)
    pts = rng.random((25, 3))
    g0 = knn_graph(pts, 5, box)
    shifted = wrap_within(pts + np.array([0.37, -0.81, 0.52]), box)
    g1 = knn_graph(shifted, 5, box)
    assert np.array_equal(g0.edges, g1.edges)
    assert np.allclose(g0.displacement, g1.displacement, atol=1e-12)


def test_pair_displacements_consistency():
    box = PeriodicBox.cubic(1.0)
    rng = np.random.default_rng(2)
    pts = rng.random((12, 3))
    disp = pair_displacements(pts, box)
    assert disp.shape == (12, 12, 3)
    for i in range(12):
        for j in range(12):
            assert np.array_equal(disp[i, j], brute_min_image(pts[i], pts[j], box))
