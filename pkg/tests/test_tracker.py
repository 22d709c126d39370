import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spmtrack.boxes import BBox, iou
from spmtrack.toy import synthetic_square_sequence, toy_model
from spmtrack.tracker import (
    CONFIG_ENV,
    CropWindow,
    DegenerateScoreError,
    FusionWeights,
    Tracker,
    TrackerConfig,
    apply_window_penalty,
    context_side,
    cosine_window,
    crop_and_resize,
    fuse_box,
    fuse_score,
    update_state,
)

unit = st.floats(0, 1)
pos = st.floats(0.01, 1)
box_st = st.builds(BBox.from_center, st.floats(-100, 400), st.floats(-100, 400), st.floats(1, 200), st.floats(1, 200))


class TestFusion:
    @given(unit, unit)
    def test_score_extremes(self, uc, uf):
        assert fuse_score(uc, uf, FusionWeights(0.0, 2.0)) == uc
        assert fuse_score(uc, uf, FusionWeights(1.0, 2.0)) == uf

    def test_default_score(self):
        assert fuse_score(0.2, 0.6) == pytest.approx(0.4)

    @given(box_st, box_st, pos, st.floats(0, 5))
    def test_zero_fm_score_keeps_cm_box(self, bc, bf, uc, wbox):
        out = fuse_box(bc, bf, uc, 0.0, FusionWeights(0.5, wbox))
        np.testing.assert_allclose(out.center_form, bc.center_form, atol=1e-7)

    @given(box_st, box_st, pos)
    def test_equal_weight_midpoint(self, bc, bf, uf):
        fw = FusionWeights(0.5, 2.0)
        out = fuse_box(bc, bf, 2.0 * uf, uf, fw)
        mid = [(a + b) / 2 for a, b in zip(bc.center_form, bf.center_form)]
        np.testing.assert_allclose(out.center_form, mid, atol=1e-7)

    @given(box_st, pos, unit, st.floats(0, 5))
    def test_fixed_point(self, b, uc, uf, wbox):
        out = fuse_box(b, b, uc, uf, FusionWeights(0.5, wbox))
        np.testing.assert_allclose(out.center_form, b.center_form, atol=1e-7)

    def test_weights_sum_to_one(self):
        bc, bf = BBox.from_center(0, 0, 10, 10), BBox.from_center(10, 0, 20, 10)
        out = fuse_box(bc, bf, 0.3, 0.6)
        a = 0.3 / (2 * 0.6 + 0.3)
        assert out.cx == pytest.approx((1 - a) * 10)
        assert out.w == pytest.approx(a * 10 + (1 - a) * 20)

    def test_degenerate(self):
        with pytest.raises(DegenerateScoreError):
            fuse_box(BBox(0, 0, 1, 1), BBox(0, 0, 1, 1), 0.0, 0.0)

    def test_invalid_weights(self):
        with pytest.raises(ValueError):
            FusionWeights(1.5, 2.0)


class TestWindow:
    def test_hann(self):
        w = cosine_window(29, 29)
        assert w.shape == (29, 29)
        assert w[14, 14] == 1.0 and w[0, 0] == 0.0
        np.testing.assert_allclose(w, w.T)

    def test_penalty_at_cells(self):
        window = cosine_window(5, 5)
        centers = np.array([[10 + 2.5 * 4, 10 + 2.5 * 4], [10 + 0.5 * 4, 10 + 4.5 * 4]])
        got = apply_window_penalty([0.8, 0.8], centers, window, 0.42, offset=10, stride=4)
        np.testing.assert_allclose(got, [0.58 * 0.8 + 0.42, 0.58 * 0.8])

    def test_zero_influence(self):
        got = apply_window_penalty([0.3], [[0, 0]], cosine_window(3, 3), 0.0, 0, 8)
        assert got[0] == 0.3


class TestCrops:
    def test_context_side(self):
        assert context_side(40, 40) == pytest.approx(80.0)
        assert context_side(10, 30) == pytest.approx(math.sqrt(30 * 50))

    def test_identity_crop(self):
        img = np.random.default_rng(0).random((3, 8, 8)).astype(np.float32)
        out = crop_and_resize(img, CropWindow(4, 4, 8, 8), img.mean(axis=(1, 2)))
        np.testing.assert_allclose(out, img, atol=1e-6)

    def test_outside_filled(self):
        img = np.zeros((3, 4, 4), dtype=np.float32)
        out = crop_and_resize(img, CropWindow(-50, -50, 8, 8), [1.0, 2.0, 3.0])
        np.testing.assert_allclose(out[:, 0, 0], [1, 2, 3])

    def test_window_round_trip(self):
        win = CropWindow(100, 80, 160, 271)
        b = BBox(90, 70, 130, 110)
        back = win.to_image(win.to_crop(b))
        np.testing.assert_allclose(back.as_array(), b.as_array(), atol=1e-9)
        assert win.to_crop(BBox.from_center(100, 80, 1, 1)).cx == pytest.approx(135.5)


class TestConfig:
    def test_defaults(self):
        c = TrackerConfig()
        assert (c.k, c.w_cls, c.w_box, c.window_influence, c.size_lr) == (9, 0.5, 2.0, 0.42, 0.3)

    def test_from_file(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"k": 3, "w_cls": 0.25}))
        c = TrackerConfig.from_file(p)
        assert c.k == 3 and c.fusion == FusionWeights(0.25, 2.0)

    def test_unknown_key(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text('{"kk": 1}')
        with pytest.raises(ValueError, match="kk"):
            TrackerConfig.from_file(p)

    def test_env_override(self, tmp_path, monkeypatch):
        p = tmp_path / "c.json"
        p.write_text('{"size_lr": 0.5}')
        monkeypatch.setenv(CONFIG_ENV, str(p))
        assert TrackerConfig.default().size_lr == 0.5
        monkeypatch.delenv(CONFIG_ENV)
        assert TrackerConfig.default() == TrackerConfig()


class TestUpdateState:
    def test_size_interpolation(self):
        frames, boxes = synthetic_square_sequence(2)
        t = Tracker(toy_model())
        s = t.init(frames[0], boxes[0])
        new = update_state(s, BBox.from_center(10, 20, 80, 60), 0.3)
        assert new.box.center_form == pytest.approx((10, 20, 0.7 * 40 + 24, 0.7 * 40 + 18))


@pytest.fixture(scope="module")
def toy_run():
    frames, boxes = synthetic_square_sequence(60)
    tracker = Tracker(toy_model())
    state = tracker.init(frames[0], boxes[0])
    out = [boxes[0]]
    for f in frames[1:]:
        res = tracker.track(state, f)
        state = res.state
        out.append(res.box)
    return boxes, out, res


class TestToyTracking:
    def test_tracks_square(self, toy_run):
        gt, pred, _ = toy_run
        ious = [iou(a, b) for a, b in zip(gt, pred)]
        assert min(ious) > 0.5
        assert np.mean(ious) > 0.8

    def test_frame_result(self, toy_run):
        _, _, res = toy_run
        assert 1 <= len(res.proposals) <= 10
        assert res.proposals[0].reserved
        assert all(p.u_f is not None and p.box is not None for p in res.proposals)
        assert 0.0 <= res.score <= 1.0
        assert res.state.frame == 59

    def test_stationary_target_exact(self):
        frames, boxes = synthetic_square_sequence(1)
        tracker = Tracker(toy_model())
        state = tracker.init(frames[0], boxes[0])
        for _ in range(3):
            state = tracker.track(state, frames[0]).state
        assert iou(state.box, boxes[0]) > 0.95

    def test_template_cache_read_only(self):
        frames, boxes = synthetic_square_sequence(1)
        state = Tracker(toy_model()).init(frames[0], boxes[0])
        with pytest.raises(ValueError):
            state.template.roi[0, 0, 0] = 1.0

    def test_uninitialised_state(self):
        with pytest.raises(TypeError, match="init"):
            Tracker(toy_model()).track(None, np.zeros((3, 10, 10)))

    def test_degenerate_init_box(self):
        with pytest.raises(ValueError):
            Tracker(toy_model()).init(np.zeros((3, 50, 50)), BBox(5, 5, 5, 9))

    def test_box_stays_in_frame(self):
        frames, boxes = synthetic_square_sequence(1)
        tracker = Tracker(toy_model())
        state = tracker.init(frames[0], boxes[0])
        blank = np.full_like(frames[0], 40.0)
        for _ in range(5):
            state = tracker.track(state, blank).state
        w, h = state.image_size
        assert 0 <= state.box.cx <= w and 0 <= state.box.cy <= h
        assert state.box.w >= 4 and state.box.h >= 4
