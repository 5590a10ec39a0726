import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cglo.generator import GeneratorConfig, forward, init_params
from cglo.synthesis import (AugmentPlan, BoundingBox, InvertConfig, SceneImage, augment_scene, crop_patch,
                            feather_mask, geometric_augment, iou, paste_patch, plan_placements,
                            reports_to_csv, resize_bilinear, switch_condition)
from cglo.trainer import init_latents


def brute_iou(a, b):
    """Count shared pixels cell by cell."""
    pa = {(x, y) for x in range(a.x, a.x + a.w) for y in range(a.y, a.y + a.h)}
    pb = {(x, y) for x in range(b.x, b.x + b.w) for y in range(b.y, b.y + b.h)}
    return len(pa & pb) / len(pa | pb)


def scene(h=64, w=64, c=1, seed=0, sid="s"):
    return SceneImage(np.random.default_rng(seed).uniform(-1, 1, (c, h, w)), sid)


@pytest.fixture
def small_params():
    return init_params(GeneratorConfig(d=4, output_size=8, channels=1, base_feat=8, seed=0))


class TestIoU:
    def test_identical(self):
        assert iou(BoundingBox(1, 2, 5, 5), BoundingBox(1, 2, 5, 5)) == 1

    def test_disjoint(self):
        assert iou(BoundingBox(0, 0, 2, 2), BoundingBox(5, 5, 2, 2)) == 0

    def test_touching(self):
        assert iou(BoundingBox(0, 0, 2, 2), BoundingBox(2, 0, 2, 2)) == 0

    def test_half_offset(self):
        assert iou(BoundingBox(0, 0, 2, 2), BoundingBox(1, 0, 2, 2)) == pytest.approx(1 / 3)

    @settings(max_examples=50)
    @given(st.tuples(*[st.integers(0, 10)] * 2, *[st.integers(1, 6)] * 2),
           st.tuples(*[st.integers(0, 10)] * 2, *[st.integers(1, 6)] * 2))
    def test_matches_pixel_count(self, a, b):
        a, b = BoundingBox(*a), BoundingBox(*b)
        assert iou(a, b) == pytest.approx(brute_iou(a, b))
        assert iou(a, b) == iou(b, a)

    def test_box_extents_positive(self):
        with pytest.raises(ValueError):
            BoundingBox(0, 0, 0, 3)


class TestCropPaste:
    def test_round_trip_at_generator_size(self):
        s = scene()
        box = BoundingBox(10, 20, 8, 8)
        out = paste_patch(s, crop_patch(s, box, 8), box)
        assert np.array_equal(out.pixels, s.pixels)

    def test_constant_region(self):
        s = SceneImage(np.full((1, 32, 32), 0.25))
        np.testing.assert_array_equal(crop_patch(s, BoundingBox(3, 3, 16, 16), 8), 0.25)

    def test_checkerboard_downscale_is_uniform(self):
        board = np.indices((16, 16)).sum(axis=0) % 2 * 2.0 - 1.0
        patch = crop_patch(SceneImage(board[None]), BoundingBox(0, 0, 16, 16), 8)
        np.testing.assert_allclose(patch, 0.0, atol=1e-15)

    def test_paste_locality_and_no_mutation(self):
        s = scene()
        original = s.pixels.copy()
        box = BoundingBox(5, 7, 12, 12)
        out = paste_patch(s, np.full((1, 8, 8), -1.0), box)
        assert np.array_equal(s.pixels, original)
        mask = np.zeros((64, 64), bool)
        mask[7:19, 5:17] = True
        assert np.array_equal(out.pixels[:, ~mask], original[:, ~mask])
        np.testing.assert_array_equal(out.pixels[:, mask], -1.0)

    def test_out_of_bounds(self):
        with pytest.raises(ValueError):
            crop_patch(scene(), BoundingBox(60, 60, 8, 8), 8)
        with pytest.raises(ValueError):
            paste_patch(scene(), np.zeros((1, 8, 8)), BoundingBox(-1, 0, 8, 8))

    def test_non_square_box(self):
        with pytest.raises(ValueError):
            crop_patch(scene(), BoundingBox(0, 0, 8, 9), 8)

    def test_feathering_blends_edges_only(self):
        s = SceneImage(np.zeros((1, 16, 16)))
        out = paste_patch(s, np.ones((1, 8, 8)), BoundingBox(4, 4, 8, 8), feather=2)
        assert out.pixels[0, 4, 4] == pytest.approx(1 / 3)
        assert out.pixels[0, 7, 7] == 1.0
        assert out.pixels[0, 0, 0] == 0.0
        assert feather_mask(8, 0).min() == 1.0

    def test_resize_identity_and_constant(self):
        img = np.random.default_rng(0).normal(size=(2, 5, 5))
        assert np.array_equal(resize_bilinear(img, 5, 5), img)
        np.testing.assert_allclose(resize_bilinear(np.full((1, 5, 7), 0.3), 11, 3), 0.3)


class TestGeometric:
    patch = np.arange(2 * 5 * 5, dtype=float).reshape(2, 5, 5)

    def test_identity(self):
        assert np.array_equal(geometric_augment(self.patch), self.patch)

    def test_half_turn_equals_both_flips(self):
        assert np.array_equal(geometric_augment(self.patch, 2), geometric_augment(self.patch, 0, True, True))

    def test_four_quarter_turns(self):
        p = self.patch
        for _ in range(4):
            p = geometric_augment(p, 1)
        assert np.array_equal(p, self.patch)

    @pytest.mark.parametrize("rot,fh,fv", list(itertools.product(range(4), (False, True), (False, True))))
    def test_permutes_pixels(self, rot, fh, fv):
        out = geometric_augment(self.patch, rot, fh, fv)
        assert np.array_equal(np.sort(out, axis=None), np.sort(self.patch, axis=None))

    def test_requires_square(self):
        with pytest.raises(ValueError):
            geometric_augment(np.zeros((1, 3, 4)))


class TestSwitchCondition:
    def test_same_label_is_forward(self, small_params):
        z = init_latents(1, 4, 0)[0]
        assert np.array_equal(switch_condition(small_params, z, 0, 0), forward(small_params, z, 0))

    def test_pure(self, small_params):
        z = init_latents(1, 4, 1)[0]
        z_copy = z.copy()
        first = switch_condition(small_params, z, 0, 1)
        assert np.array_equal(switch_condition(small_params, z, 0, 1), first)
        assert np.array_equal(switch_condition(small_params, z, 1, 0), forward(small_params, z, 0))
        assert np.array_equal(z, z_copy)


class TestPlanPlacements:
    def test_enough_boxes_already(self):
        existing = [BoundingBox(0, 0, 8, 8), BoundingBox(20, 20, 8, 8)]
        boxes, limited = plan_placements(scene(), existing, AugmentPlan(2, 8, 8))
        assert boxes == [] and not limited

    def test_disjoint_on_empty_scene(self):
        boxes, limited = plan_placements(scene(128, 128), [], AugmentPlan(6, 8, 16, 0.0, seed=3))
        assert len(boxes) == 6 and not limited
        assert all(iou(a, b) == 0 for a, b in itertools.combinations(boxes, 2))

    def test_three_new_boxes_brute_force(self):
        s = scene(256, 256)
        existing = [BoundingBox(100, 100, 48, 48)]
        boxes, limited = plan_placements(s, existing, AugmentPlan(4, 32, 64, 0.0, seed=0))
        assert len(boxes) == 3 and not limited
        allb = existing + boxes
        assert all(brute_iou(a, b) <= 0.0 for a, b in itertools.combinations(allb, 2))
        assert all(32 <= b.w <= 64 and b.w == b.h and b.inside(256, 256) for b in boxes)

    def test_overlap_ceiling(self):
        boxes, _ = plan_placements(scene(64, 64), [], AugmentPlan(5, 16, 24, 0.2, seed=1))
        assert all(brute_iou(a, b) <= 0.2 + 1e-12 for a, b in itertools.combinations(boxes, 2))

    def test_deterministic(self):
        plan = AugmentPlan(5, 8, 20, 0.1, seed=9)
        assert plan_placements(scene(), [], plan) == plan_placements(scene(), [], plan)

    def test_rejection_limited(self):
        boxes, limited = plan_placements(scene(32, 32), [], AugmentPlan(10, 16, 16, 0.0, seed=0))
        assert limited and len(boxes) < 10

    def test_min_side_too_large(self):
        with pytest.raises(ValueError):
            plan_placements(scene(32, 32), [], AugmentPlan(1, 40, 50))

    @pytest.mark.parametrize("kwargs", [dict(min_side=0), dict(min_side=9, max_side=8), dict(max_overlap_iou=1.0)])
    def test_invalid_plan(self, kwargs):
        with pytest.raises(ValueError):
            AugmentPlan(**kwargs)


class TestAugmentScene:
    cfg = InvertConfig(steps=5, lr_z=1.0)

    def test_no_placements(self, small_params):
        s = scene()
        existing = [BoundingBox(0, 0, 8, 8)]
        out, boxes, report = augment_scene(small_params, s, existing, AugmentPlan(1, 8, 8), self.cfg)
        assert np.array_equal(out.pixels, s.pixels) and boxes == existing and report.records == []

    def test_bookkeeping_and_locality(self, small_params):
        s = scene(64, 64, sid="abc")
        existing = [BoundingBox(2, 2, 10, 10)]
        plan = AugmentPlan(4, 8, 16, 0.0, seed=2)
        out, boxes, report = augment_scene(small_params, s, existing, plan, self.cfg)
        assert len(boxes) == len(existing) + report.placed == 4
        mask = np.zeros((64, 64), bool)
        for b in boxes[1:]:
            mask[b.y:b.y + b.h, b.x:b.x + b.w] = True
        assert np.array_equal(out.pixels[:, ~mask], s.pixels[:, ~mask])
        assert all(b.label == "foreground" for b in boxes[1:])

    def test_deterministic_per_seed(self, small_params):
        plan = AugmentPlan(3, 8, 12, 0.0, seed=5)
        a = augment_scene(small_params, scene(sid="x"), [], plan, self.cfg)
        b = augment_scene(small_params, scene(sid="x"), [], plan, self.cfg)
        assert np.array_equal(a[0].pixels, b[0].pixels) and a[1] == b[1]

    def test_nonfinite_inversion_skips_box(self, small_params):
        small_params.tensors["deconv0.bias"][:] = np.nan
        s = scene()
        out, boxes, report = augment_scene(small_params, s, [], AugmentPlan(2, 8, 8, seed=1), self.cfg)
        assert boxes == [] and np.array_equal(out.pixels, s.pixels)
        assert [r.status for r in report.records] == ["skipped_nonfinite"] * 2

    def test_report_csv(self, small_params):
        _, _, report = augment_scene(small_params, scene(sid="q"), [], AugmentPlan(2, 8, 8, seed=1), self.cfg)
        lines = reports_to_csv([report]).splitlines()
        assert lines[0] == "scene_id,box_index,x,y,side,inversion_loss,status"
        assert len(lines) == 3 and lines[1].startswith("q,0,") and lines[1].endswith(",ok")
