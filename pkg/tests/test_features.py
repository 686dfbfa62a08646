"""Feature ranking, tree building, and localization on toy networks."""
import numpy as np
import pytest

from grasptrace.errors import ConfigurationError, DataError
from grasptrace.features import (EPS_RESPONSE, FeatureTree, HierFeature,
                                 TraceStats, build_feature_tree,
                                 grad_responses, localize_feature,
                                 log_sum_scores, map_argmax_unit,
                                 map_responses, top_filters)
from grasptrace.network import UnitRef, backward_single_path, forward_pass
from grasptrace.segmentation import OrganizedPointCloud

from conftest import toy_net

TAPS = ("conv-3", "conv-2", "conv-1")


def make_trace(seed=0, size=12):
    net, weights = toy_net(seed=seed)
    image = np.abs(np.random.default_rng(seed + 100).normal(size=(3, size, size)))
    return forward_pass(net, weights, image)


def test_hier_feature_validation_and_keys():
    f = HierFeature((("conv-3", 2), ("conv-2", 7)))
    assert len(f) == 2 and f.top == ("conv-3", 2) and f.lowest == ("conv-2", 7)
    assert f.key() == "conv-3:2/conv-2:7"
    assert HierFeature.parse(f.key()) == f
    with pytest.raises(ConfigurationError):
        HierFeature(())
    with pytest.raises(ConfigurationError):
        HierFeature((("conv-3", 1), ("conv-3", 2)))
    with pytest.raises(ConfigurationError):
        HierFeature((("conv-3", -1),))
    with pytest.raises(DataError):
        HierFeature.parse("no-colon-here")


def test_log_sum_scores_hand_computed():
    rows = np.array([[1.0, 2.0, 0.0],
                     [np.e, 4.0, 5.0]])
    scores = log_sum_scores(rows)
    np.testing.assert_allclose(scores[0], 1.0)               # log1 + log e
    np.testing.assert_allclose(scores[1], np.log(8.0))       # log2 + log4
    assert scores[2] == -np.inf                               # silent once


def test_top_filters_tie_break_and_finite_only():
    scores = np.array([2.0, 5.0, 5.0, -np.inf, 3.0])
    assert top_filters(scores, 3) == [1, 2, 4]
    assert top_filters(scores, 10) == [1, 2, 4, 0]


def test_map_responses_matches_direct_max():
    trace = make_trace(seed=1)
    got = map_responses(trace, "conv-3")
    want = trace.output_at("conv-3").max(axis=(1, 2))
    np.testing.assert_array_equal(got, want)
    unit = map_argmax_unit(trace, "conv-3", 2)
    assert trace.output_at("conv-3")[2, unit.row, unit.col] == want[2]


def test_grad_responses_matches_backward_slice():
    trace = make_trace(seed=2)
    unit = map_argmax_unit(trace, "conv-3", 0)
    vals, units = grad_responses(trace, unit, "conv-2", scale=2.0)
    grad = 2.0 * backward_single_path(trace, unit, target_tap="conv-2")
    grad[trace.output_at("conv-2") <= 0.0] = 0.0  # only fired units count
    for f in range(grad.shape[0]):
        best = grad[f].max()
        if best <= 0:
            assert vals[f] == 0.0 and (units[f] == -1).all()
        else:
            np.testing.assert_allclose(vals[f], best)
            r, c = units[f]
            assert grad[f, r, c] == best


def test_grad_responses_never_lands_on_silent_unit():
    trace = make_trace(seed=2)
    for f_top in range(trace.output_at("conv-3").shape[0]):
        if trace.output_at("conv-3")[f_top].max() <= 0:
            continue
        unit = map_argmax_unit(trace, "conv-3", f_top)
        for tap in ("conv-2", "conv-1"):
            vals, units = grad_responses(trace, unit, tap)
            out = trace.output_at(tap)
            for f in range(vals.shape[0]):
                if vals[f] > 0:
                    r, c = units[f]
                    assert out[f, r, c] > 0


def test_chained_response_composes_level_by_level():
    """Triple response must equal the manual two-step chain of max gradients."""
    trace = make_trace(seed=3)
    f3 = int(np.argmax(map_responses(trace, "conv-3")))
    u3 = map_argmax_unit(trace, "conv-3", f3)
    g2, u2s = grad_responses(trace, u3, "conv-2")
    f2 = int(np.argmax(g2))
    assert g2[f2] > 0
    u2 = UnitRef("conv-2", f2, int(u2s[f2][0]), int(u2s[f2][1]))
    g1 = g2[f2] * backward_single_path(trace, u2, target_tap="conv-1")
    g1[trace.output_at("conv-1") <= 0.0] = 0.0
    f1 = int(np.argmax(g1.reshape(g1.shape[0], -1).max(axis=1)))
    want = g1[f1].max()
    assert want > 0

    feature = HierFeature((("conv-3", f3), ("conv-2", f2), ("conv-1", f1)))
    obs = localize_feature(trace, feature)
    np.testing.assert_allclose(obs.response, want, rtol=1e-12)
    assert obs.unit.tap == "conv-1" and obs.unit.filter == f1


def test_localize_single_tap_uses_activation():
    trace = make_trace(seed=4)
    f = int(np.argmax(map_responses(trace, "conv-3")))
    obs = localize_feature(trace, HierFeature((("conv-3", f),)))
    np.testing.assert_allclose(obs.response,
                               trace.output_at("conv-3")[f].max())
    assert obs.located and obs.position is None and not obs.usable


def test_localize_dead_feature():
    net, weights = toy_net(seed=5)
    # All-zero image: biases may fire, so force a filter dead via dead path.
    image = np.zeros((3, 12, 12))
    trace = forward_pass(net, weights, image)
    resp = map_responses(trace, "conv-3")
    dead = np.where(resp <= EPS_RESPONSE)[0]
    if dead.size == 0:
        pytest.skip("no dead conv-3 filter on zero input")
    obs = localize_feature(trace, HierFeature((("conv-3", int(dead[0])),)))
    assert obs.response == 0.0 and not obs.located


def test_localize_rejects_non_descending_path():
    trace = make_trace(seed=6)
    with pytest.raises(ConfigurationError):
        localize_feature(trace, HierFeature((("conv-1", 0), ("conv-2", 0))))
    with pytest.raises(ConfigurationError):
        localize_feature(trace, HierFeature((("conv-9", 0),)))


def test_localize_centroid_inside_image_footprint():
    trace = make_trace(seed=7, size=16)
    f = int(np.argmax(map_responses(trace, "conv-3")))
    obs = localize_feature(trace, HierFeature((("conv-3", f),)))
    grad = backward_single_path(trace, obs.unit)
    rows, cols = np.nonzero(np.abs(grad).sum(axis=0))
    assert rows.min() <= obs.centroid[0] <= rows.max()
    assert cols.min() <= obs.centroid[1] <= cols.max()
    assert obs.pixel == (round(obs.centroid[0]), round(obs.centroid[1]))


def test_localize_reads_cloud_with_nan_fallback():
    trace = make_trace(seed=8, size=16)
    f = int(np.argmax(map_responses(trace, "conv-3")))
    feature = HierFeature((("conv-3", f),))
    obs0 = localize_feature(trace, feature)
    pts = np.zeros((16, 16, 3))
    pts[..., 0], pts[..., 1] = np.meshgrid(np.arange(16), np.arange(16),
                                           indexing="ij")
    cloud = OrganizedPointCloud(pts)
    obs = localize_feature(trace, feature, cloud=cloud)
    assert obs.usable
    np.testing.assert_array_equal(obs.position[:2], obs.pixel)
    # Knock out the centroid pixel: nearest valid neighbour supplies depth.
    pts2 = pts.copy()
    pts2[obs.pixel[0], obs.pixel[1]] = np.nan
    obs2 = localize_feature(trace, feature, cloud=OrganizedPointCloud(pts2))
    assert obs2.usable
    assert abs(obs2.position[0] - obs.pixel[0]) <= 1
    assert abs(obs2.position[1] - obs.pixel[1]) <= 1
    # Entirely invalid neighbourhood: located but unusable.
    pts3 = pts.copy()
    r, c = obs0.pixel
    pts3[max(0, r - 6):r + 7, max(0, c - 6):c + 7] = np.nan
    obs3 = localize_feature(trace, feature, cloud=OrganizedPointCloud(pts3))
    assert obs3.located and not obs3.usable


def tree_from_seeds(seeds, n5=3, n4=2, n3=2):
    stats = [TraceStats(make_trace(seed=s), taps=TAPS) for s in seeds]
    return build_feature_tree(stats, n5=n5, n4=n4, n3=n3), stats


def test_tree_root_ranking_matches_independent_sum():
    seeds = [1, 2, 3, 4]
    tree, stats = tree_from_seeds(seeds)
    # Independent root scores straight from the forward outputs.
    resp = np.stack([make_trace(seed=s).output_at("conv-3").max(axis=(1, 2))
                     for s in seeds])
    scores = np.where((resp > EPS_RESPONSE).all(0),
                      np.log(np.clip(resp, EPS_RESPONSE, None)).sum(0), -np.inf)
    want = [int(i) for i in np.argsort(-scores, kind="stable")[:3]
            if np.isfinite(scores[i])]
    assert [r.filter for r in tree.roots] == want
    for r in tree.roots:
        np.testing.assert_allclose(r.score, scores[r.filter])


def test_tree_shape_scores_and_liveness():
    tree, stats = tree_from_seeds([5, 6, 7], n5=3, n4=2, n3=2)
    assert tree.taps == TAPS
    assert 0 < len(tree.roots) <= 3
    for root in tree.roots:
        assert np.isfinite(root.score)
        assert len(root.children) <= 2
        kid_scores = [c.score for c in root.children]
        assert kid_scores == sorted(kid_scores, reverse=True)
        for child in root.children:
            assert np.isfinite(child.score)
            assert len(child.children) <= 2
            leaf_scores = [g.score for g in child.children]
            assert leaf_scores == sorted(leaf_scores, reverse=True)
    # Feature enumeration matches the tree shape.
    n_pairs = sum(len(r.children) for r in tree.roots)
    n_triples = sum(len(c.children) for r in tree.roots for c in r.children)
    assert len(tree.all_features()) == len(tree.roots) + n_pairs + n_triples


def test_tree_serialization_round_trip(tmp_path):
    tree, _ = tree_from_seeds([8, 9], n5=2, n4=2, n3=1)
    path = tmp_path / "tree.txt"
    tree.save_text(path)
    back = FeatureTree.load_text(path)
    assert back.taps == tree.taps
    assert len(back.roots) == len(tree.roots)
    for a, b in zip(back.roots, tree.roots):
        assert (a.filter, a.tap) == (b.filter, b.tap)
        assert a.score == b.score
        for ca, cb in zip(a.children, b.children):
            assert ca.filter == cb.filter and ca.score == cb.score
            assert [g.filter for g in ca.children] == [g.filter
                                                       for g in cb.children]


def test_tree_rejects_empty_and_bad_files(tmp_path):
    with pytest.raises(DataError):
        build_feature_tree([])
    bad = tmp_path / "bad.txt"
    bad.write_text("not a tree\n")
    with pytest.raises(DataError):
        FeatureTree.load_text(bad)
