import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from geoalign import oracles
from geoalign.errors import RegionError
from geoalign.geometry import PointMap
from geoalign.losses import (bounding_radius, default_regions, loss_global, loss_multiscale, loss_scale,
                             sample_sphere_regions)
from geoalign.selftest import random_instance


def _pm(P):
    return PointMap(np.asarray(P, float).reshape(-1, 1, 3))


def test_loss_global_identity(scene):
    _, pm, mask, _ = scene
    assert loss_global(pm, pm, mask).value == 0.0


@settings(max_examples=25, deadline=None)
@given(st.floats(0.05, 20.0), st.lists(st.floats(-5, 5), min_size=3, max_size=3))
def test_loss_global_affine_invariance(scene, s, t):
    _, pm, mask, _ = scene
    pred = PointMap((pm.points - np.array(t)) / s, pm.mask)
    assert loss_global(pred, pm, mask).value <= 1e-9


def test_loss_global_invariant_to_pred_transform(scene):
    _, pm, mask, _ = scene
    rng = np.random.default_rng(0)
    noisy = PointMap(pm.points * (1 + 0.05 * rng.normal(size=pm.points.shape)), pm.mask)
    base = loss_global(noisy, pm, mask).value
    moved = PointMap(3.0 * noisy.points + [1.0, -2.0, 0.5], pm.mask)
    assert abs(loss_global(moved, pm, mask).value - base) <= 1e-8 * base


def test_loss_global_matches_oracle_recomputation():
    X, Y, w = random_instance(np.random.default_rng(3), 100)
    gt = _pm(Y)
    rep = loss_global(_pm(X), gt)
    a, b, _ = oracles.scale_shift_grid_oracle(X, Y, 1.0 / Y[:, 2])
    direct = float(np.sum((1.0 / Y[:, 2])[:, None] * np.abs(a * X + b - Y)))
    assert abs(rep.value - direct) <= 1e-8 * direct


def test_loss_global_monotone_in_noise(scene):
    _, pm, mask, _ = scene
    means = []
    for sigma in (0.01, 0.05, 0.2):
        vals = []
        for seed in range(20):
            rng = np.random.default_rng(seed)
            noisy = PointMap(pm.points + sigma * rng.normal(size=pm.points.shape), pm.mask)
            vals.append(loss_global(noisy, pm, mask).value)
        means.append(np.mean(vals))
    assert means[0] < means[1] < means[2]


def test_sphere_tiny_and_huge_radius(scene):
    _, pm, mask, _ = scene
    c = int(np.flatnonzero(mask.ravel())[10])
    tiny, huge = sample_sphere_regions(pm, mask, [c, c], [1e-9, 1e6])
    assert tiny.members.tolist() == [c]
    assert np.array_equal(huge.members, np.flatnonzero(mask.ravel()))


def test_sphere_matches_linear_scan(scene):
    _, pm, mask, _ = scene
    rng = np.random.default_rng(5)
    idx = np.flatnonzero(mask.ravel())
    centers = rng.choice(idx, 8)
    radii = rng.uniform(0.1, 4.0, 8)
    for reg in sample_sphere_regions(pm, mask, centers, radii):
        assert np.array_equal(reg.members, oracles.sphere_scan(pm.points, mask, reg.center_index, reg.radius))


def test_sphere_boundary_is_inclusive():
    P = np.array([[0, 0, 1.0], [0, 0, 1.5], [0, 0, 2.0]])
    reg = sample_sphere_regions(_pm(P), np.ones((3, 1), bool), [0], [0.5])[0]
    assert reg.members.tolist() == [0, 1]


def test_sphere_errors(scene):
    _, pm, mask, _ = scene
    m = mask.copy()
    m.ravel()[0] = False
    with pytest.raises(RegionError):
        sample_sphere_regions(pm, m, [0], [1.0])
    with pytest.raises(RegionError):
        sample_sphere_regions(pm, mask, [1], [0.0])
    with pytest.raises(RegionError):
        sample_sphere_regions(pm, mask, [10**9], [1.0])


def test_default_regions_schedule(scene):
    _, pm, mask, _ = scene
    regs = default_regions(pm, mask, n_centers=5, seed=3)
    assert len(regs) == 15
    R = bounding_radius(pm, mask)
    assert [r.radius for r in regs[::5]] == [R / 16, R / 4, R]
    again = default_regions(pm, mask, n_centers=5, seed=3)
    assert all(np.array_equal(a.members, b.members) for a, b in zip(regs, again))


def test_multiscale_identity_and_full_region(scene):
    _, pm, mask, _ = scene
    regs = default_regions(pm, mask, n_centers=4)
    assert loss_multiscale(pm, pm, mask, regs).value == 0.0
    rng = np.random.default_rng(0)
    noisy = PointMap(pm.points + 0.1 * rng.normal(size=pm.points.shape), pm.mask)
    full = sample_sphere_regions(pm, mask, [int(np.flatnonzero(mask.ravel())[0])], [1e9])
    assert loss_multiscale(noisy, pm, mask, full).value == loss_global(noisy, pm, mask).value


def test_multiscale_per_region_invariance():
    rng = np.random.default_rng(2)
    A = rng.uniform(1, 2, (20, 3))
    B = rng.uniform(1, 2, (20, 3)) + [100, 0, 0]
    gt = _pm(np.vstack([A, B]))
    pred = _pm(np.vstack([(A - 0.3) / 2.0, (B + 1.0) / 0.5]))
    regs = sample_sphere_regions(gt, gt.mask, [0, 20], [50.0, 50.0])
    assert [len(r) for r in regs] == [20, 20]
    assert loss_multiscale(pred, gt, None, regs).value <= 1e-12


def test_multiscale_skips_singletons(scene):
    _, pm, mask, _ = scene
    c = int(np.flatnonzero(mask.ravel())[0])
    regs = sample_sphere_regions(pm, mask, [c, c], [1e-9, 1e9])
    rep = loss_multiscale(pm, pm, mask, regs)
    assert rep.skipped_regions == 1 and rep.region_count == 1
    with pytest.raises(RegionError):
        loss_multiscale(pm, pm, mask, [])


def test_loss_scale_examples(scene):
    _, pm, mask, _ = scene
    pred = PointMap(pm.points / 2.5, pm.mask)
    rep = loss_scale(math.log(2.5), pred, pm, mask)
    assert abs(rep.alignment.scale - 2.5) <= 1e-12 and rep.value <= 1e-20
    rep = loss_scale(math.log(rep.alignment.scale) + 1.0, pred, pm, mask)
    assert abs(rep.value - 1.0) <= 1e-12
    assert abs(loss_scale(0.0, pred, pm, mask).value - math.log(2.5) ** 2) <= 1e-12


def test_loss_scale_target_ignores_prediction(scene):
    _, pm, mask, _ = scene
    a = loss_scale(-3.0, pm, pm, mask).alignment
    b = loss_scale(7.0, pm, pm, mask).alignment
    assert a.scale == b.scale and np.array_equal(a.shift, b.shift)
