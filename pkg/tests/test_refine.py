import numpy as np
import pytest

from geoalign import oracles, synth
from geoalign.errors import DataError, StageError
from geoalign.geometry import CameraModel, DepthMap, PointMap, depth_to_points
from geoalign.refine import (CompletionProblem, OutlierReport, RefineConfig, detect_outliers, filter_mask,
                             poisson_complete, refine_pipeline, sample_pred_regions, schedule_regions,
                             solve_completion)
from geoalign.losses import sample_sphere_regions


@pytest.fixture(scope="module")
def street():
    depth, pm, mask, cam = synth.render(synth.street_scene(2))
    return depth, pm, mask, cam


# -- regions ------------------------------------------------------------------

def test_pred_regions_equal_gt_regions_when_pred_is_gt(scene):
    _, pm, mask, _ = scene
    idx = np.flatnonzero(mask.ravel())[:5]
    a = sample_pred_regions(pm, mask, idx, 0.7)
    b = sample_sphere_regions(pm, mask, idx, 0.7)
    assert all(np.array_equal(x.members, y.members) for x, y in zip(a, b))


def test_pred_regions_match_scan(scene):
    _, pm, mask, _ = scene
    pred = synth.biased_prediction(pm, 2.0, 0.2)
    rng = np.random.default_rng(0)
    centers = rng.choice(np.flatnonzero(mask.ravel()), 6)
    for reg in sample_pred_regions(pred, mask, centers, rng.uniform(0.2, 3.0, 6)):
        assert np.array_equal(reg.members, oracles.sphere_scan(pred.points, mask, reg.center_index, reg.radius))


def test_schedule_is_seeded(scene):
    _, pm, mask, _ = scene
    cfg = RefineConfig(centers_per_radius=4, seed=9)
    a = schedule_regions(pm, mask, cfg)
    b = schedule_regions(pm, mask, cfg)
    assert len(a) == 12
    assert [r.center_index for r in a] == [r.center_index for r in b]


# -- outlier detection --------------------------------------------------------

def test_affine_real_has_no_outliers(scene):
    _, pm, mask, _ = scene
    real = PointMap(0.5 * pm.points + [0.1, 0.0, -0.2], pm.mask)
    rep = detect_outliers(pm, real, schedule_regions(pm, mask, RefineConfig(centers_per_radius=8)))
    assert not rep.union.any() and all(c == 0 for c in rep.counts)


def test_displaced_member_is_flagged():
    rng = np.random.default_rng(1)
    pred_pts = rng.uniform(0, 1, (50, 3)) + [0, 0, 3]
    real_pts = pred_pts.copy()
    pred = PointMap(pred_pts.reshape(50, 1, 3))
    r = 10.0
    real_pts[7] += [3 * r, 0, 0]
    real = PointMap(real_pts.reshape(50, 1, 3))
    regs = sample_pred_regions(pred, pred.mask, [0], [r])
    rep = detect_outliers(pred, real, regs)
    al = rep.alignments[0]
    resid = np.linalg.norm(al.scale * real_pts + al.shift - pred_pts, axis=1)
    assert rep.outliers[0].tolist() == [7]
    assert resid[7] > r and np.all(resid[np.arange(50) != 7] <= r)


def test_threshold_is_strict():
    # a dense cluster of exact points pins the identity alignment; one point is
    # displaced by exactly the region radius (kept), one slightly more (flagged)
    rng = np.random.default_rng(0)
    n = 200
    pred_pts = rng.integers(0, 13, (n, 3)) / 64.0 + [0.0, 0.0, 4.0]
    pred_pts[0] = [6 / 64, 6 / 64, 4 + 6 / 64]
    r = 0.5
    real_pts = pred_pts.copy()
    real_pts[17, 0] -= r
    real_pts[42, 0] -= r + 1 / 64
    pred = PointMap(pred_pts.reshape(n, 1, 3))
    real = PointMap(real_pts.reshape(n, 1, 3))
    regs = sample_pred_regions(pred, pred.mask, [0], [r])
    assert len(regs[0]) == n
    rep = detect_outliers(pred, real, regs)
    al = rep.alignments[0]
    assert al.scale == 1.0 and np.all(al.shift == 0)
    assert rep.outliers[0].tolist() == [42]


def test_detect_rejects_bad_mode(scene):
    _, pm, mask, _ = scene
    with pytest.raises(DataError):
        detect_outliers(pm, pm, [], mode="median")


def test_filter_mask_set_algebra():
    rng = np.random.default_rng(0)
    for _ in range(10):
        m = rng.random((6, 7)) < 0.7
        u = rng.random((6, 7)) < 0.3
        rep = OutlierReport((), u, ())
        out = filter_mask(m, rep)
        expect = np.array([[m[i, j] and not u[i, j] for j in range(7)] for i in range(6)])
        assert np.array_equal(out, expect)
    assert np.array_equal(filter_mask(m, OutlierReport((), np.zeros_like(m), ())), m)
    assert not filter_mask(m, OutlierReport((), np.ones_like(m), ())).any()


# -- Poisson completion -------------------------------------------------------

def _grid(H=20, W=24):
    yy, xx = np.mgrid[0:H, 0:W]
    return yy, xx


def test_constant_fill():
    unknown = np.zeros((10, 10), bool)
    unknown[3:7, 2:8] = True
    d = poisson_complete(CompletionProblem(DepthMap(np.full((10, 10), 4.0), ~unknown),
                                           DepthMap(np.full((10, 10), 7.0))))
    np.testing.assert_allclose(d.values, 4.0, rtol=1e-12)


def test_compatible_guide_is_reproduced():
    yy, xx = _grid()
    g = np.exp(0.03 * xx - 0.02 * yy)
    unknown = np.zeros(g.shape, bool)
    unknown[4:15, 5:19] = True
    res = solve_completion(CompletionProblem(DepthMap(g, ~unknown), DepthMap(g)))
    np.testing.assert_allclose(res.depth.values, g, rtol=1e-8)
    assert res.residual <= 1e-10


def test_scaled_guide_gives_true_depth():
    yy, xx = _grid()
    true = 2.0 + 0.5 * np.sin(xx / 4.0) + 0.05 * yy
    unknown = np.zeros(true.shape, bool)
    unknown[3:12, 4:20] = True
    d = poisson_complete(CompletionProblem(DepthMap(true, ~unknown), DepthMap(2.0 * true)))
    np.testing.assert_allclose(d.values, true, rtol=1e-8)
    dense = np.exp(oracles.poisson_dense(np.log(2.0 * true), np.log(true), unknown))
    np.testing.assert_allclose(d.values, dense, rtol=1e-8)


def test_matches_dense_on_irregular_region():
    rng = np.random.default_rng(3)
    H, W = 16, 18
    unknown = rng.random((H, W)) < 0.35
    guide = np.exp(rng.normal(0, 0.3, (H, W)))
    known = np.exp(rng.normal(1, 0.3, (H, W)))
    unknown[0, :] = unknown[-1, :] = unknown[:, 0] = unknown[:, -1] = False
    d = poisson_complete(CompletionProblem(DepthMap(known, ~unknown), DepthMap(guide)))
    dense = np.exp(oracles.poisson_dense(np.log(guide), np.log(known), unknown))
    np.testing.assert_allclose(d.values, dense, rtol=1e-8)
    assert np.array_equal(d.values[~unknown], known[~unknown])


def test_maximum_principle():
    rng = np.random.default_rng(4)
    for _ in range(5):
        vals = rng.uniform(1, 9, (12, 12))
        unknown = np.zeros((12, 12), bool)
        unknown[2:10, 3:9] = True
        d = poisson_complete(CompletionProblem(DepthMap(vals, ~unknown), DepthMap(np.ones((12, 12)))))
        ring = CompletionProblem(DepthMap(vals, ~unknown), DepthMap(np.ones((12, 12)))).boundary
        fill = d.values[unknown]
        assert fill.min() >= vals[ring].min() * (1 - 1e-10)
        assert fill.max() <= vals[ring].max() * (1 + 1e-10)


def test_idempotent():
    yy, xx = _grid()
    guide = np.exp(0.1 * np.sin(xx / 3.0) + 0.01 * yy)
    known = 3.0 + 0.02 * xx
    unknown = np.zeros(guide.shape, bool)
    unknown[5:15, 6:18] = True
    p = CompletionProblem(DepthMap(known, ~unknown), DepthMap(guide))
    once = poisson_complete(p).values
    twice = poisson_complete(CompletionProblem(DepthMap(once, ~unknown), DepthMap(guide))).values
    assert np.max(np.abs(twice - once) / once) <= 1e-9


def test_boundary_ring_is_four_connected():
    unknown = np.zeros((5, 5), bool)
    unknown[2, 2] = True
    p = CompletionProblem(DepthMap(np.ones((5, 5)), ~unknown), DepthMap(np.ones((5, 5))))
    assert sorted(zip(*np.nonzero(p.boundary))) == [(1, 2), (2, 1), (2, 3), (3, 2)]


def test_free_floating_component():
    guide = np.exp(np.linspace(0, 1, 20)).reshape(4, 5)
    known = DepthMap(np.ones((4, 5)), np.zeros((4, 5), bool))
    res = solve_completion(CompletionProblem(known, DepthMap(guide)))
    assert res.free_floating.all() and not res.depth.mask.any()
    np.testing.assert_allclose(res.depth.values, guide)


def test_nothing_to_fill():
    d = DepthMap(np.full((3, 3), 2.0))
    out = poisson_complete(CompletionProblem(d, DepthMap(np.ones((3, 3)))))
    assert np.array_equal(out.values, d.values) and out.mask.all()


def test_bad_guide():
    unknown = np.zeros((4, 4), bool)
    unknown[1, 1] = True
    with pytest.raises(DataError):
        poisson_complete(CompletionProblem(DepthMap(np.ones((4, 4)), ~unknown), DepthMap(-np.ones((4, 4)))))


# -- pipeline -----------------------------------------------------------------

def test_pipeline_clean_scene_is_identity(street):
    depth, pm, mask, cam = street
    res = refine_pipeline(depth, mask, pm, cam)
    assert np.array_equal(res.mask, mask)
    assert np.array_equal(res.depth.values[mask], depth.values[mask])
    assert not res.report.union.any()


def test_pipeline_boundary_shift(street):
    depth, pm, mask, cam = street
    real, rmask, fp = synth.inject(depth, mask, synth.ArtifactSpec("boundary_shift", {"shift": 2}))
    res = refine_pipeline(real, rmask, synth.biased_prediction(pm, 2.0), cam)
    flagged = res.report.union
    clean = rmask & ~fp
    assert (flagged & fp).sum() / fp.sum() >= 0.95
    assert (flagged & clean).sum() / clean.sum() <= 0.05
    assert np.all(res.filtered_mask <= rmask)


def test_pipeline_fills_hole_smoothly(street):
    depth, pm, mask, cam = street
    real, rmask, fp = synth.inject(depth, mask, synth.ArtifactSpec("hole", {"center": (30, 20), "pixels": 60}))
    res = refine_pipeline(real, rmask, synth.biased_prediction(pm, 2.0), cam)
    assert res.mask.all()
    ld = np.log(res.depth.values)
    grown = CompletionProblem(DepthMap(real.values, res.filtered_mask), DepthMap(pm.points[..., 2]))
    hole = grown.unknown
    jumps_h = np.abs(np.diff(ld, axis=1))
    across = (hole[:, 1:] != hole[:, :-1])
    inside = hole[:, 1:] & hole[:, :-1]
    assert jumps_h[across].max() <= 2 * jumps_h[inside].max() + 1e-12


def test_global_ablation_flags_more_clean_pixels_under_bias(street):
    depth, pm, mask, cam = street
    real, rmask, fp = synth.inject(depth, mask, synth.ArtifactSpec("boundary_shift", {"shift": 2}))
    realp = depth_to_points(DepthMap(real.values, rmask), cam)
    pred = synth.biased_prediction(pm, 2.0, 0.15)
    regions = schedule_regions(pred, rmask)
    clean = rmask & ~fp
    loc = detect_outliers(pred, realp, regions).union
    glo = detect_outliers(pred, realp, regions, mode="global").union
    fpr_loc = (loc & clean).sum() / clean.sum()
    fpr_glo = (glo & clean).sum() / clean.sum()
    assert (loc & fp).sum() / fp.sum() >= 0.9
    assert fpr_glo > 10 * fpr_loc


def test_pipeline_stage_error(street):
    depth, pm, mask, cam = street
    small = PointMap(pm.points[:10])
    with pytest.raises(StageError) as ei:
        refine_pipeline(depth, mask, small, cam)
    assert ei.value.stage == "unproject"


def test_inverse_depth_flag_runs(street):
    depth, pm, mask, cam = street
    res = refine_pipeline(depth, mask, pm, cam, RefineConfig(centers_per_radius=8, inverse_depth_weights=True))
    assert not res.report.union.any()
