"""Objective-function tests: hand-computed values and FD gradient checks."""

import numpy as np
import pytest

from planelayout.errors import EmptyOverlap
from planelayout.geometry import (
    CameraIntrinsics,
    ParamMap,
    SegmentationMap,
)
from planelayout.losses import (
    LossConfig,
    SceneTruth,
    loss_depth_2d,
    loss_depth_supervised,
    loss_discriminative,
    loss_param_l1,
    loss_stretch,
    loss_total_2d,
    loss_total_3d,
    optimize_param_map,
)
from planelayout.synth import generate_cuboid, render_scene

CFG = LossConfig()


def fd_gradient(fn, x, eps=1e-6):
    """Central finite differences of a scalar function over array x."""
    g = np.zeros_like(x)
    flat = g.reshape(-1)
    xf = x.reshape(-1)
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + eps
        hi = fn(x)
        xf[i] = orig - eps
        lo = fn(x)
        xf[i] = orig
        flat[i] = (hi - lo) / (2 * eps)
    return g


def rel_err(a, b):
    denom = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


def random_map(rng, h=6, w=6):
    vals = rng.normal(0, 0.5, (h, w, 4))
    vals[..., 3] = np.abs(vals[..., 3]) + 0.5
    return ParamMap(vals, np.ones((h, w), dtype=bool))


def three_band_seg(h=6, w=6):
    lab = np.zeros((h, w), dtype=np.int32)
    lab[:, w // 3:2 * w // 3] = 1
    lab[:, 2 * w // 3:] = 2
    return SegmentationMap(lab)


class TestParamL1:
    def test_zero_on_equal(self):
        rng = np.random.default_rng(0)
        pm = random_map(rng)
        value, grad = loss_param_l1(pm, pm)
        assert value == 0.0
        assert not grad.any()

    def test_single_pixel_hand_value(self):
        pred = ParamMap(np.array([[[0.0, 0.0, 1.0, 1.0]]]),
                        np.ones((1, 1), dtype=bool))
        target = ParamMap(np.array([[[0.0, 0.0, 1.0, 1.5]]]),
                          np.ones((1, 1), dtype=bool))
        value, grad = loss_param_l1(pred, target)
        assert value == pytest.approx(0.5)
        np.testing.assert_allclose(grad[0, 0], [0, 0, 0, -1])

    def test_empty_overlap(self):
        a = ParamMap(np.zeros((2, 2, 4)), np.zeros((2, 2), dtype=bool))
        with pytest.raises(EmptyOverlap):
            loss_param_l1(a, a)

    def test_fd_gradient(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            pred = random_map(rng)
            target = random_map(rng)
            # keep every channel away from the L1 kink
            while np.abs(pred.values - target.values).min() < 1e-4:
                target = random_map(rng)
            mask = pred.mask
            value, grad = loss_param_l1(pred, target)
            fd = fd_gradient(
                lambda x: loss_param_l1(ParamMap(x, mask), target)[0],
                pred.values.copy())
            assert rel_err(grad, fd) <= 1e-5


def _sample_discriminative(rng, cfg):
    """Random map + seg with every hinge strictly away from its kink."""
    while True:
        pm = random_map(rng, 8, 8)
        seg = three_band_seg(8, 8)
        l_var, l_dist, gv, gd = loss_discriminative(pm, seg, cfg)
        ok = True
        for c in range(3):
            m = seg.labels == c
            center = pm.values[m].mean(axis=0)
            d = np.linalg.norm(pm.values[m] - center, axis=1)
            if np.abs(d - cfg.delta_v).min() < 1e-3 or d.min() < 1e-3:
                ok = False
        centers = [pm.values[seg.labels == c].mean(axis=0) for c in range(3)]
        for i in range(3):
            for j in range(i + 1, 3):
                dd = np.linalg.norm(centers[i] - centers[j])
                if abs(dd - cfg.delta_d) < 1e-3 or dd < 1e-3:
                    ok = False
        if ok:
            return pm, seg


class TestDiscriminative:
    def test_zero_when_margins_satisfied(self):
        vals = np.zeros((4, 6, 4))
        vals[:, :3] = [0.0, 0.0, 1.0, 0.5]
        vals[:, 3:] = [1.0, 0.0, 0.0, 1.6]  # centers 1.55 > delta_d apart
        pm = ParamMap(vals, np.ones((4, 6), dtype=bool))
        lab = np.zeros((4, 6), dtype=np.int32)
        lab[:, 3:] = 1
        l_var, l_dist, gv, gd = loss_discriminative(pm, SegmentationMap(lab), CFG)
        assert l_var == 0.0 and l_dist == 0.0
        assert not gv.any() and not gd.any()

    def test_identical_centers_give_delta_d(self):
        vals = np.zeros((4, 6, 4))
        vals[...] = [0.0, 0.0, 1.0, 0.5]
        pm = ParamMap(vals, np.ones((4, 6), dtype=bool))
        lab = np.zeros((4, 6), dtype=np.int32)
        lab[:, 3:] = 1
        l_var, l_dist, _, _ = loss_discriminative(pm, SegmentationMap(lab), CFG)
        assert l_var == 0.0
        assert l_dist == pytest.approx(CFG.delta_d)

    def test_fd_gradients(self):
        rng = np.random.default_rng(2)
        for _ in range(6):
            pm, seg = _sample_discriminative(rng, CFG)
            _, _, gv, gd = loss_discriminative(pm, seg, CFG)
            fd_v = fd_gradient(
                lambda x: loss_discriminative(
                    ParamMap(x, pm.mask), seg, CFG)[0], pm.values.copy())
            fd_d = fd_gradient(
                lambda x: loss_discriminative(
                    ParamMap(x, pm.mask), seg, CFG)[1], pm.values.copy())
            assert rel_err(gv, fd_v) <= 1e-5
            assert rel_err(gd, fd_d) <= 1e-5


class TestDepthSupervised:
    def test_exact_instances_zero(self):
        cam = CameraIntrinsics(fx=60.0, fy=60.0, u0=31.5, v0=31.5,
                               width=64, height=64)
        rendered = render_scene(generate_cuboid(2, cam))
        value, grad = loss_depth_supervised(rendered.params, rendered.seg,
                                            rendered.depth)
        assert value <= 1e-12
        assert np.abs(grad).max() <= 1e-12

    def test_offset_region_hand_value(self):
        # label 0 covers 40% of pixels; its instance's inverse depth is
        # offset by exactly 0.1 there -> loss 0.04
        h, w = 10, 10
        vals = np.zeros((h, w, 4))
        vals[:4] = [0.0, 0.0, 1.0, 0.6]   # pred inv = 0.6 on 40 pixels
        vals[4:] = [0.0, 0.0, 1.0, 0.8]
        lab = np.zeros((h, w), dtype=np.int32)
        lab[4:] = 1
        depth_vals = np.where(lab == 0, 2.0, 1.25)  # gt inv 0.5 and 0.8
        from planelayout.geometry import DepthMap
        pm = ParamMap(vals, np.ones((h, w), dtype=bool))
        gt_depth = DepthMap(depth_vals, np.ones((h, w), dtype=bool))
        value, _ = loss_depth_supervised(pm, SegmentationMap(lab), gt_depth)
        assert value == pytest.approx(0.04)

    def test_fd_gradient(self):
        from planelayout.geometry import DepthMap
        rng = np.random.default_rng(3)
        checked = 0
        while checked < 6:
            pm = random_map(rng)
            seg = three_band_seg()
            depth = DepthMap(1.0 / rng.uniform(0.2, 1.0, (6, 6)),
                             np.ones((6, 6), dtype=bool))
            value, grad = loss_depth_supervised(pm, seg, depth)
            # stay away from the |.| kink
            inst = np.stack([pm.values[seg.labels == c].mean(axis=0)
                             for c in range(3)])
            uu, vv = np.meshgrid(np.arange(6.0), np.arange(6.0))
            lin = (inst[seg.labels, :][..., 0] * uu
                   + inst[seg.labels, :][..., 1] * vv
                   + inst[seg.labels, :][..., 2]) * inst[seg.labels, :][..., 3]
            if np.abs(lin - 1.0 / depth.values).min() < 1e-3:
                continue
            checked += 1
            fd = fd_gradient(
                lambda x: loss_depth_supervised(
                    ParamMap(x, pm.mask), seg, depth)[0], pm.values.copy())
            assert rel_err(grad, fd) <= 1e-5


def _instances_with_gaps(rng, n_inst=3, h=6, w=6, min_gap=1e-3):
    """Random instances whose per-pixel top-2 inverse depths stay separated."""
    while True:
        inst = rng.normal(0, 0.05, (n_inst, 4))
        inst[:, 2] += 0.5
        inst[:, 3] = np.abs(inst[:, 3]) + 0.5
        uu, vv = np.meshgrid(np.arange(float(w)), np.arange(float(h)))
        inv = (inst[:, 0, None, None] * uu + inst[:, 1, None, None] * vv
               + inst[:, 2, None, None]) * inst[:, 3, None, None]
        srt = np.sort(inv.reshape(n_inst, -1), axis=0)
        if (srt[-1] - srt[-2]).min() >= min_gap:
            return inst


class TestDepth2D:
    def test_zero_when_labels_are_argmax(self):
        rng = np.random.default_rng(4)
        inst = _instances_with_gaps(rng)
        uu, vv = np.meshgrid(np.arange(6.0), np.arange(6.0))
        inv = (inst[:, 0, None, None] * uu + inst[:, 1, None, None] * vv
               + inst[:, 2, None, None]) * inst[:, 3, None, None]
        seg = SegmentationMap(np.argmax(inv, axis=0).astype(np.int32))
        value, grad = loss_depth_2d(inst, seg)
        assert value == 0.0
        assert not grad.any()

    def test_constructed_violation_value(self):
        # wall (label 1) nearer than the labeled floor on all 36 pixels
        inst = np.array([[0.0, 0.0, 1.0, 0.4],
                         [0.0, 0.0, 1.0, 0.7]])
        seg = SegmentationMap(np.zeros((6, 6), dtype=np.int32))
        value, _ = loss_depth_2d(inst, seg)
        assert value == pytest.approx(0.3)

    def test_fd_gradient(self):
        rng = np.random.default_rng(5)
        for _ in range(6):
            inst = _instances_with_gaps(rng)
            seg = three_band_seg()
            value, grad = loss_depth_2d(inst, seg)
            fd = fd_gradient(lambda x: loss_depth_2d(x, seg)[0], inst.copy())
            assert rel_err(grad, fd) <= 1e-5


class TestStretch:
    def test_identical_instances_uniform(self):
        inst = np.tile([0.0, 0.0, 1.0, 0.5], (4, 1))
        seg = SegmentationMap(
            np.arange(36, dtype=np.int32).reshape(6, 6) % 4)
        value, _ = loss_stretch(inst, seg, k=20.0)
        assert value == pytest.approx(-0.25, abs=1e-15)

    def test_saturation_with_unit_gap(self):
        inst = np.array([[0.0, 0.0, 1.0, 1.5],
                         [0.0, 0.0, 1.0, 0.5]])  # inverse-depth gap 1.0
        seg = SegmentationMap(np.zeros((6, 6), dtype=np.int32))
        value, _ = loss_stretch(inst, seg, k=20.0)
        assert value <= -0.99

    def test_fd_gradient(self):
        rng = np.random.default_rng(6)
        for _ in range(6):
            inst = _instances_with_gaps(rng)
            seg = three_band_seg()
            value, grad = loss_stretch(inst, seg, k=5.0)
            fd = fd_gradient(lambda x: loss_stretch(x, seg, k=5.0)[0],
                             inst.copy())
            assert rel_err(grad, fd) <= 1e-5


class TestTotals:
    def _scene_truth(self, seed=2):
        cam = CameraIntrinsics(fx=60.0, fy=60.0, u0=31.5, v0=31.5,
                               width=64, height=64)
        rendered = render_scene(generate_cuboid(seed, cam))
        return rendered, SceneTruth(seg=rendered.seg, params=rendered.params,
                                    depth=rendered.depth)

    def test_perfect_prediction_3d(self):
        rendered, truth = self._scene_truth()
        bd = loss_total_3d(rendered.params, truth, CFG)
        assert bd.total <= 1e-12

    def test_additivity_3d(self):
        rng = np.random.default_rng(7)
        rendered, truth = self._scene_truth()
        noisy = ParamMap(rendered.params.values
                         + rng.normal(0, 0.1, rendered.params.values.shape),
                         rendered.params.mask)
        bd = loss_total_3d(noisy, truth, CFG)
        assert bd.total == (bd.terms["param_l1"] + CFG.alpha * bd.terms["variance"]
                            + CFG.beta * bd.terms["depth"])

    def test_additivity_2d(self):
        rng = np.random.default_rng(8)
        rendered, truth = self._scene_truth()
        noisy = ParamMap(rendered.params.values
                         + rng.normal(0, 0.1, rendered.params.values.shape),
                         rendered.params.mask)
        bd = loss_total_2d(noisy, truth, CFG)
        assert bd.total == (bd.terms["variance"] + bd.terms["distance"]
                            + CFG.eta * bd.terms["depth"]
                            + CFG.theta * bd.terms["stretch"])

    def test_label_permutation_invariance(self):
        rng = np.random.default_rng(9)
        pm = random_map(rng, 8, 8)
        seg = three_band_seg(8, 8)
        perm = np.array([2, 0, 1])
        seg_p = SegmentationMap(perm[seg.labels])
        for fn in (lambda s: loss_discriminative(pm, s, CFG)[:2],):
            assert fn(seg) == fn(seg_p)
        inst = _instances_with_gaps(rng)
        v1, _ = loss_depth_2d(inst, seg)
        v2, _ = loss_depth_2d(inst[np.argsort(perm)], seg_p)
        assert v1 == pytest.approx(v2, abs=1e-15)
        s1, _ = loss_stretch(inst, seg, k=5.0)
        s2, _ = loss_stretch(inst[np.argsort(perm)], seg_p, k=5.0)
        assert s1 == pytest.approx(s2, abs=1e-15)


class TestOptimizer:
    def _small_scene(self):
        cam = CameraIntrinsics(fx=15.0, fy=15.0, u0=7.5, v0=7.5,
                               width=16, height=16)
        rendered = render_scene(generate_cuboid(1, cam))
        return rendered, SceneTruth(seg=rendered.seg, params=rendered.params,
                                    depth=rendered.depth)

    def test_zero_steps_returns_init(self):
        rendered, truth = self._small_scene()
        out, trace = optimize_param_map(rendered.params, truth, "3D",
                                        steps=0)
        np.testing.assert_array_equal(out.values, rendered.params.values)
        assert len(trace) == 1

    def test_monotone_trace_and_reduction(self):
        rng = np.random.default_rng(10)
        rendered, truth = self._small_scene()
        init = ParamMap(rendered.params.values
                        + rng.normal(0, 0.05, rendered.params.values.shape),
                        rendered.params.mask)
        out, trace = optimize_param_map(init, truth, "3D", steps=200)
        assert all(b <= a + 1e-15 for a, b in zip(trace, trace[1:]))
        assert trace[-1] < 0.5 * trace[0]

    def test_2d_mode_runs_and_descends(self):
        rng = np.random.default_rng(11)
        rendered, truth = self._small_scene()
        init = ParamMap(rendered.params.values
                        + rng.normal(0, 0.05, rendered.params.values.shape),
                        rendered.params.mask)
        out, trace = optimize_param_map(init, truth, "2D", steps=100)
        assert all(b <= a + 1e-15 for a, b in zip(trace, trace[1:]))
        assert trace[-1] < trace[0]
