import math

import numpy as np
import pytest
from scipy import ndimage
from skimage.draw import line as draw_line

from oracles import dbscan_naive
from spermseg.con2dis import (
    Con2DisConfig,
    TailPointSet,
    build_affinity,
    cluster_points,
    cluster_rows,
    con2dis,
    conformity,
    eigen_residuals,
    filtered_components,
    knn_adjacency,
    principal_angles,
    restore,
    spectral_embed,
    tangent_at,
    threshold_k,
)
from spermseg.errors import BasisError, DegenerateAffinity, InvalidK, TooFewPoints
from spermseg.mppca import fit_mppca


def stroke(shape, segments, width=3):
    m = np.zeros(shape, bool)
    for (x0, y0), (x1, y1) in segments:
        rr, cc = draw_line(y0, x0, y1, x1)
        m[rr, cc] = True
    if width > 1:
        m = ndimage.binary_dilation(m, iterations=width // 2)
    return m


def unit(deg):
    r = math.radians(deg)
    return np.array([[math.cos(r)], [math.sin(r)]])


# --------------------------------------------------------------------------
# kNN


def test_knn_on_a_line():
    a = knn_adjacency([[0, 0], [1, 0], [10, 0]], 1).toarray()
    assert a.tolist() == [[False, True, False], [True, False, True], [False, True, False]]


def test_knn_complete_when_k_is_n_minus_one():
    x = np.random.default_rng(0).random((9, 2))
    a = knn_adjacency(x, 8).toarray()
    assert (a == ~np.eye(9, dtype=bool)).all()


def test_knn_is_symmetric_without_diagonal():
    x = np.random.default_rng(1).random((50, 2)) * 20
    a = knn_adjacency(x, 4)
    assert (a != a.T).nnz == 0
    assert not a.diagonal().any()
    assert (np.asarray(a.sum(axis=1)).ravel() >= 4).all()


def test_knn_ties_go_to_lower_index():
    # point 0 is equidistant from 1 and 2; point 2 has a closer partner of its own
    a = knn_adjacency([[0, 0], [1, 0], [-1, 0], [-1.5, 0]], 1).toarray()
    assert a[0, 1] and not a[0, 2]


def test_knn_duplicates_are_neighbours():
    a = knn_adjacency([[0, 0], [0, 0], [5, 5]], 1).toarray()
    assert a[0, 1] and a[1, 0]


def test_knn_too_few_points():
    with pytest.raises(TooFewPoints):
        knn_adjacency([[0, 0]], 3)


# --------------------------------------------------------------------------
# DBSCAN components


def segment_pts(x0, x1, y=0.0):
    return np.column_stack([np.arange(x0, x1 + 1, dtype=float), np.full(x1 - x0 + 1, y)])


def test_small_gap_keeps_one_component():
    pts = np.vstack([segment_pts(0, 30), segment_pts(34, 60)])
    assert len(set(filtered_components(pts, 6.0, 4))) == 1


def test_large_gap_splits_components():
    pts = np.vstack([segment_pts(0, 30), segment_pts(81, 110)])
    lab = filtered_components(pts, 6.0, 4)
    assert len(set(lab)) == 2
    assert len(set(lab[:31])) == 1 and lab[0] != lab[-1]


def test_single_point_component():
    assert filtered_components([[3.0, 4.0]], 6.0, 4).tolist() == [0]


@pytest.mark.parametrize("seed", range(6))
def test_components_agree_with_naive_dbscan_on_core_points(seed):
    rng = np.random.default_rng(seed)
    pts = np.vstack([rng.normal(c, 2.0, (25, 2)) for c in rng.uniform(0, 60, (3, 2))])
    ref = dbscan_naive(pts, 4.0, 4)
    got = filtered_components(pts, 4.0, 4)
    core = ref >= 0
    # same partition of the clustered points (labels may be renamed)
    for a in np.unique(ref[core]):
        assert len(set(got[ref == a])) == 1
    assert len(set(got[core])) == len(set(ref[core]))


# --------------------------------------------------------------------------
# tangents and conformity


def test_tangent_picks_responsible_analyser():
    x = np.column_stack([np.arange(60.0), np.zeros(60)])
    m = fit_mppca(x, 3, dim=1, seed=0)
    owner = m.owner()
    for i in (0, 30, 59):
        assert (tangent_at(m, i) == m.bases[owner[i]]).all()
    assert tangent_at(m).shape == (60, 2, 1)


def test_principal_angles_examples():
    assert principal_angles(unit(0), unit(0))[0] == pytest.approx(0.0, abs=1e-7)
    assert principal_angles(unit(0), unit(90))[0] == pytest.approx(math.pi / 2)
    assert principal_angles(unit(0), unit(60))[0] == pytest.approx(math.pi / 3)
    # sign of the basis vector does not matter
    assert principal_angles(unit(10), -unit(10))[0] == pytest.approx(0.0, abs=1e-7)


@pytest.mark.parametrize("seed", range(10))
def test_principal_angle_matches_arccos_of_dot(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(0, 360, 2)
    ref = math.acos(min(1.0, abs(float(unit(a)[:, 0] @ unit(b)[:, 0]))))
    assert principal_angles(unit(a), unit(b))[0] == pytest.approx(ref, abs=1e-7)


def test_principal_angles_higher_dim():
    a = np.eye(3)[:, :2]
    b = np.eye(3)[:, 1:]
    ang = principal_angles(a, b)
    assert ang == pytest.approx([0.0, math.pi / 2], abs=1e-7)


def test_non_orthonormal_basis_rejected():
    with pytest.raises(BasisError):
        principal_angles(np.array([[2.0], [0.0]]), unit(0))
    with pytest.raises(BasisError):
        principal_angles(unit(0), np.eye(2))


def test_conformity_values():
    assert conformity(unit(0), unit(60), 8) == pytest.approx(0.5 ** 8)
    assert conformity(unit(20), unit(20), 8) == pytest.approx(1.0)
    assert conformity(unit(0), unit(90), 8) == pytest.approx(0.0, abs=1e-12)


def test_conformity_is_bounded_and_decreasing():
    vals = [conformity(unit(0), unit(a), 8) for a in range(0, 91, 5)]
    assert all(0.0 <= v <= 1.0 for v in vals)
    assert all(b <= a for a, b in zip(vals, vals[1:]))


# --------------------------------------------------------------------------
# affinity


def test_affinity_zero_across_components():
    pts = np.vstack([segment_pts(0, 30), segment_pts(80, 110)])
    aff = build_affinity(pts, Con2DisConfig(knn_k=40))
    w = aff.weights.toarray()
    # knn links the two pieces but DBSCAN separates them
    assert aff.knn[:31, 31:].nnz > 0
    assert (w[:31, 31:] == 0).all()
    assert (w == w.T).all() and (np.diag(w) == 0).all()


def test_straight_segment_affinity_near_one():
    aff = build_affinity(segment_pts(0, 80), Con2DisConfig())
    vals = aff.weights.data
    assert vals.min() > 0.99


def test_perpendicular_segments_have_weak_cross_affinity():
    horiz = segment_pts(0, 60, y=30.0)
    vert = np.column_stack([np.full(61, 30.0), np.arange(0, 61.0)])
    vert = vert[np.abs(vert[:, 1] - 30) > 0.5]
    pts = np.vstack([horiz, vert])
    aff = build_affinity(pts, Con2DisConfig(mppca_num_analyzers=12))
    w = aff.weights.toarray()
    n = len(horiz)
    far_h = np.abs(horiz[:, 0] - 30) > 8
    far_v = np.abs(vert[:, 1] - 30) > 8
    assert w[:n][far_h][:, n:][:, far_v].max(initial=0.0) < 0.05
    assert w[:n, :n][far_h][:, far_h].sum() > 0


# --------------------------------------------------------------------------
# spectral readout


def two_block_graph():
    w = np.zeros((6, 6))
    for block in ([0, 1, 2], [3, 4, 5]):
        for i in block:
            for j in block:
                if i != j:
                    w[i, j] = 1.0
    return w


def test_two_components_give_two_zero_eigenvalues():
    w = two_block_graph()
    vals, u = spectral_embed(w, w.sum(axis=1), 3)
    assert vals[:2] == pytest.approx([0.0, 0.0], abs=1e-10)
    assert vals[2] > 0.5
    lab = cluster_rows(u[:, :2], 2).labels
    assert len(set(lab[:3])) == 1 and len(set(lab[3:])) == 1 and lab[0] != lab[3]


def test_two_point_graph_spectrum():
    w = np.array([[0.0, 1.0], [1.0, 0.0]])
    vals, _ = spectral_embed(w, w.sum(axis=1), 2)
    assert vals == pytest.approx([0.0, 2.0], abs=1e-10)


def test_zero_affinity_is_degenerate():
    with pytest.raises(DegenerateAffinity):
        spectral_embed(np.zeros((4, 4)), np.zeros(4), 2)


def test_invalid_k():
    w = two_block_graph()
    with pytest.raises(InvalidK):
        spectral_embed(w, w.sum(axis=1), 0)
    with pytest.raises(InvalidK):
        spectral_embed(w, w.sum(axis=1), 7)


@pytest.mark.parametrize("seed", range(5))
def test_generalised_eigen_residuals_small(seed):
    rng = np.random.default_rng(seed)
    a = rng.random((30, 30))
    w = np.triu(a * (a > 0.6), 1)
    w = w + w.T + np.diag(np.zeros(30))
    w[np.arange(29), np.arange(1, 30)] += 0.1
    w[np.arange(1, 30), np.arange(29)] += 0.1
    deg = w.sum(axis=1)
    vals, u = spectral_embed(w, deg, 5)
    assert (eigen_residuals(w, deg, vals, u) <= 1e-6).all()
    # E-orthonormal eigenvectors
    assert u.T @ (deg[:, None] * u) == pytest.approx(np.eye(5), abs=1e-8)


def test_threshold_k():
    vals = np.array([0.0, 1e-5, 2e-4, 0.03, 0.2])
    assert threshold_k(vals, 1e-3, 12) == 3
    assert threshold_k(vals, 1e-3, 2) == 2
    assert threshold_k(np.array([0.5, 0.9]), 1e-3, 12) == 1


def test_cluster_rows_single_cluster():
    assert (cluster_rows(np.random.default_rng(0).random((10, 1)), 1).labels == 0).all()


# --------------------------------------------------------------------------
# restoration


def test_restore_examples():
    mask = np.zeros((20, 30), bool)
    mask[10, 3] = mask[10, 14] = mask[10, 22] = True
    pts = np.array([[0.0, 10.0], [10.0, 10.0], [18.0, 10.0]])
    labels = np.array([0, 1, 2])
    a = restore(labels, pts, mask, 5.0)
    assert a.labels_at(3, 10) == {0}  # 3 px from cluster 0
    assert a.labels_at(14, 10) == {1, 2}  # 4 px from both 1 and 2
    b = restore(np.array([0, 1]), pts[:2], mask, 5.0)
    assert b.labels_at(22, 10) == set()  # 8 px away from everything


def test_restore_is_strict_at_gamma():
    mask = np.zeros((5, 20), bool)
    mask[2, 5] = True
    a = restore(np.array([0]), np.array([[0.0, 2.0]]), mask, 5.0)
    assert a.labels_at(5, 2) == set()


# --------------------------------------------------------------------------
# end to end


def test_right_angle_cross_separates_arms():
    m = stroke((120, 120), [((10, 60), (110, 60)), ((60, 10), (60, 110))])
    res = con2dis(m, Con2DisConfig(), k=2)
    pts = res.points.points
    lab = res.assignment.skeleton_labels
    far = (np.abs(pts[:, 0] - 60) > 3) | (np.abs(pts[:, 1] - 60) > 3)
    horiz = np.abs(pts[:, 1] - 60) <= 1
    truth = np.where(horiz, 0, 1)
    agree = (lab[far] == truth[far]).mean()
    assert max(agree, 1 - agree) >= 0.95


def test_single_curve_is_one_cluster():
    t = np.linspace(0, 1, 200)
    xs = (15 + 90 * t).astype(int)
    ys = (60 + 30 * np.sin(2 * np.pi * t * 0.7)).astype(int)
    m = np.zeros((120, 120), bool)
    m[ys, xs] = True
    m = ndimage.binary_dilation(ndimage.binary_closing(m, iterations=2), iterations=1)
    res = con2dis(m, Con2DisConfig())
    assert res.k == 1
    inter = (res.masks[0] & m).sum()
    assert inter / (res.masks[0] | m).sum() >= 0.95


def test_broken_curve_reunified_among_three():
    # three well separated one-pixel tails, the middle one missing 4 pixels
    # (thin strokes are their own skeleton, so the gap is measured between skeleton points)
    m = stroke((160, 200), [((10, 20), (190, 20)), ((10, 140), (190, 140))], width=1)
    broken = stroke((160, 200), [((10, 80), (95, 80)), ((100, 80), (190, 80))], width=1)
    gap = ~broken[80, 10:190]
    assert gap.sum() == 4
    res = con2dis(m | broken, Con2DisConfig(), k=3)
    pts, lab = res.points.points, res.assignment.skeleton_labels
    rows = np.rint(pts[:, 1]).astype(int)
    for y in (20, 80, 140):
        assert len(set(lab[np.abs(rows - y) <= 2])) == 1
    assert len(set(lab)) == 3


def test_far_apart_tails_are_two_clusters():
    m = stroke((120, 200), [((10, 20), (190, 20)), ((10, 100), (190, 100))])
    res = con2dis(m, Con2DisConfig())
    assert res.k == 2
    assert res.diagnostics["n_components"] == 2


def test_k_min_floor():
    m = stroke((60, 200), [((10, 30), (190, 30))])
    assert con2dis(m, Con2DisConfig(), k_min=2).k == 2


def test_permutation_equivariance():
    m = stroke((120, 120), [((10, 40), (110, 80)), ((30, 110), (90, 10))])
    pts = TailPointSet.from_mask(m)
    lab, _, _ = cluster_points(pts, Con2DisConfig(), k=2)
    perm = np.random.default_rng(7).permutation(len(pts))
    lab_p, _, _ = cluster_points(pts.points[perm], Con2DisConfig(), k=2)
    # same partition: labels agree up to renaming
    pairs = set(zip(lab[perm].tolist(), lab_p.tolist()))
    assert len(pairs) == 2


def test_too_few_points():
    m = np.zeros((10, 10), bool)
    m[5, 5] = True
    with pytest.raises(TooFewPoints):
        con2dis(m)


def test_deterministic_for_fixed_seed():
    m = stroke((120, 120), [((10, 60), (110, 60)), ((60, 10), (60, 110))])
    a = con2dis(m, Con2DisConfig(seed=3), k=2)
    b = con2dis(m, Con2DisConfig(seed=3), k=2)
    assert all((x == y).all() for x, y in zip(a.masks, b.masks))
