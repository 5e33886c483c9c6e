import os

import numpy as np
import pytest

from rerankkit import data
from rerankkit.core import BoundingBox, GroundTruthObject, Proposal, Scene, iou
from rerankkit.errors import DataFormatError, InvalidArgumentError, SynthesisError
from rerankkit.features import FeatureConfig, extract_all


def tiny_scene():
    w, h = 6, 4
    mask = np.arange(w * h, dtype=np.uint8).reshape(h, w) % 3
    heights = np.arange(w * h, dtype=np.float32).reshape(h, w) / 7.0
    heights[0, 0] = np.nan
    props = (
        Proposal(box=BoundingBox(0.5, 0.5, 3.5, 3.0), generator_score=0.9, objectness=0.4),
        Proposal(box=BoundingBox(1.0, 0.0, 6.0, 4.0), generator_score=0.1, objectness=0.9),
    )
    gts = (GroundTruthObject(class_id=2, box=BoundingBox(1, 1, 4, 4), occlusion=1, truncation=0.2),)
    return Scene(id="tiny", width=w, height=h, seg_mask=mask, height_map=heights,
                 proposals=props, ground_truth=gts)


class TestBinaryFormats:
    def test_pgm_round_trip(self, tmp_path):
        mask = np.random.default_rng(0).integers(0, 20, size=(9, 13)).astype(np.uint8)
        p = str(tmp_path / "m.pgm")
        data.write_pgm(p, mask)
        np.testing.assert_array_equal(data.read_pgm(p), mask)

    def test_pgm_truncated(self, tmp_path):
        p = str(tmp_path / "bad.pgm")
        open(p, "wb").write(b"P5\n4 4\n255\n\x00\x01")
        with pytest.raises(DataFormatError):
            data.read_pgm(p)

    def test_pgm_bad_magic(self, tmp_path):
        p = str(tmp_path / "bad.pgm")
        open(p, "wb").write(b"P2\n2 2\n255\n....")
        with pytest.raises(DataFormatError):
            data.read_pgm(p)

    def test_hmap_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(1)
        arr = rng.normal(size=(5, 7)).astype(np.float32)
        arr[2, 3] = np.nan
        p = str(tmp_path / "h.hmap")
        data.write_hmap(p, arr)
        back = data.read_hmap(p)
        assert np.array_equal(arr.view(np.uint32), back.view(np.uint32))  # NaN-safe bit equality

    def test_hmap_truncated(self, tmp_path):
        p = str(tmp_path / "bad.hmap")
        open(p, "wb").write(b"HMAP" + np.array([4, 4], dtype="<u4").tobytes() + b"\x00" * 10)
        with pytest.raises(DataFormatError):
            data.read_hmap(p)


class TestCsvFormats:
    def test_proposals_round_trip(self, tmp_path):
        scene = tiny_scene()
        p = str(tmp_path / "p.csv")
        data.write_proposals_csv(p, scene.proposals)
        assert tuple(data.read_proposals_csv(p)) == scene.proposals
        assert open(p).readline().strip() == "x1,y1,x2,y2,score,objectness"

    def test_labels_round_trip(self, tmp_path):
        scene = tiny_scene()
        p = str(tmp_path / "l.csv")
        data.write_labels_csv(p, scene.ground_truth)
        assert tuple(data.read_labels_csv(p)) == scene.ground_truth

    def test_bad_header(self, tmp_path):
        p = str(tmp_path / "p.csv")
        open(p, "w").write("a,b\n1,2\n")
        with pytest.raises(DataFormatError):
            data.read_proposals_csv(p)


class TestSceneRoundTrip:
    def test_save_load_identity(self, tmp_path):
        scene = tiny_scene()
        entry = data.save_scene(scene, str(tmp_path))
        manifest = data.SceneManifest(root=str(tmp_path), class_map={"road": 1, "car": 2},
                                      entries=(entry,))
        back = data.load_scene(manifest, entry)
        assert back.id == scene.id
        np.testing.assert_array_equal(back.seg_mask, scene.seg_mask)
        assert np.array_equal(back.height_map.view(np.uint32), scene.height_map.view(np.uint32))
        assert back.proposals == scene.proposals
        assert back.ground_truth == scene.ground_truth

    def test_features_stable_across_round_trip(self, tmp_path):
        scene = tiny_scene()
        entry = data.save_scene(scene, str(tmp_path))
        manifest = data.SceneManifest(root=str(tmp_path), class_map={"road": 1}, entries=(entry,))
        back = data.load_scene(manifest, entry)
        cfg = FeatureConfig(road_class_id=1, tau=1.0)
        np.testing.assert_allclose(
            extract_all(scene, 2, cfg), extract_all(back, 2, cfg), atol=1e-12, rtol=0
        )

    def test_dimension_mismatch(self, tmp_path):
        scene = tiny_scene()
        entry = data.save_scene(scene, str(tmp_path))
        data.write_hmap(os.path.join(str(tmp_path), entry.hmap_path),
                        np.zeros((3, 3), np.float32))
        manifest = data.SceneManifest(root=str(tmp_path), class_map={}, entries=(entry,))
        with pytest.raises(DataFormatError, match="dimension mismatch"):
            data.load_scene(manifest, entry)

    def test_manifest_round_trip(self, tmp_path):
        entry = data.ManifestEntry("s0", "a.pgm", "b.hmap", "c.csv", "d.csv")
        m = data.SceneManifest(root=str(tmp_path), class_map={"road": 1, "car": 2},
                               entries=(entry,))
        p = str(tmp_path / "manifest.tsv")
        data.save_manifest(m, p)
        back = data.load_manifest(p)
        assert back.class_map == m.class_map
        assert back.entries == m.entries

    def test_class_map_must_be_injective(self):
        with pytest.raises(InvalidArgumentError):
            data.SceneManifest(root=".", class_map={"a": 1, "b": 1}, entries=())


KITTI_LINE = "Car 0.00 0 1.57 100.0 150.0 200.0 250.0 1.5 1.7 4.1 2.0 1.6 30.0 -1.2"


class TestKittiLabels:
    def test_single_car(self):
        objs, stats = data.parse_kitti_labels(KITTI_LINE, {"Car": 2})
        assert len(objs) == 1
        gt = objs[0]
        assert gt.class_id == 2
        # +1 on bottom-right converts inclusive corners to half-open
        assert (gt.box.x1, gt.box.y1, gt.box.x2, gt.box.y2) == (100.0, 150.0, 201.0, 251.0)
        assert gt.occlusion == 0 and gt.truncation == 0.0

    def test_empty(self):
        objs, stats = data.parse_kitti_labels("", {"Car": 2})
        assert objs == [] and stats.dontcare == 0

    def test_dontcare_skipped_and_counted(self):
        text = KITTI_LINE + "\nDontCare -1 -1 -10 0 0 10 10 -1 -1 -1 -1000 -1000 -1000 -10\n"
        objs, stats = data.parse_kitti_labels(text, {"Car": 2})
        assert len(objs) == 1 and stats.dontcare == 1

    def test_unmapped_type_counted(self):
        text = KITTI_LINE.replace("Car", "Van")
        objs, stats = data.parse_kitti_labels(text, {"Car": 2})
        assert objs == [] and stats.unmapped == 1

    def test_short_line_raises_with_line_number(self):
        with pytest.raises(DataFormatError, match="line 2"):
            data.parse_kitti_labels(KITTI_LINE + "\nCar 1 2\n", {"Car": 2})

    def test_non_numeric_raises(self):
        with pytest.raises(DataFormatError, match="line 1"):
            data.parse_kitti_labels(KITTI_LINE.replace("150.0", "x"), {"Car": 2})


class TestDisparityToHeight:
    CALIB = data.StereoCalibration(focal_px=721.5, baseline_m=0.54, cy_px=185.0, cam_height_m=1.65)

    def test_principal_row(self):
        disp = np.full((200, 4), 30.0)
        h = data.disparity_to_height(disp, self.CALIB)
        assert h[185, 0] == pytest.approx(1.65)

    def test_hand_case(self):
        # v=285, d=54: 1.65 - 100*0.54/54 = 0.65; cross-check via Z then Y
        disp = np.full((300, 2), 54.0)
        h = data.disparity_to_height(disp, self.CALIB)
        z = self.CALIB.focal_px * self.CALIB.baseline_m / 54.0
        y = (285 - self.CALIB.cy_px) * z / self.CALIB.focal_px
        assert h[285, 0] == pytest.approx(0.65, abs=1e-6)
        assert h[285, 0] == pytest.approx(self.CALIB.cam_height_m - y, abs=1e-6)

    def test_nonpositive_disparity_is_sentinel(self):
        disp = np.array([[0.0, -3.0, 10.0]])
        h = data.disparity_to_height(disp, self.CALIB)
        assert np.isnan(h[0, 0]) and np.isnan(h[0, 1]) and np.isfinite(h[0, 2])

    def test_above_horizon_exceeds_cam_height(self):
        rng = np.random.default_rng(2)
        disp = rng.uniform(1.0, 80.0, size=(400, 3))
        h = data.disparity_to_height(disp, self.CALIB)
        rows = np.arange(400)
        above = h[rows < self.CALIB.cy_px - 0.5]
        below = h[rows > self.CALIB.cy_px + 0.5]
        assert np.all(above > self.CALIB.cam_height_m)
        assert np.all(below < self.CALIB.cam_height_m)

    def test_dimension_check(self):
        with pytest.raises(InvalidArgumentError):
            data.disparity_to_height(np.zeros(5), self.CALIB)


class TestSynthetic:
    def test_deterministic_bytes(self, tmp_path):
        cfg = data.SynthConfig(seed=5, n_scenes=3, proposals_per_scene=60)
        outs = []
        for name in ("a", "b"):
            scenes, key = data.generate_synthetic(cfg)
            out = tmp_path / name
            data.save_dataset(scenes, key, {"road": 1, "class2": 2}, str(out))
            outs.append(out)
        files = sorted(p.name for p in outs[0].iterdir())
        assert files == sorted(p.name for p in outs[1].iterdir())
        for name in files:
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()

    def test_plants_hit_targets(self):
        cfg = data.SynthConfig(seed=6, n_scenes=4, proposals_per_scene=80)
        scenes, key = data.generate_synthetic(cfg)
        by_id = {s.id: s for s in scenes}
        assert key, "expected planted proposals"
        for rec in key:
            scene = by_id[rec.scene_id]
            gt = scene.ground_truth[rec.gt_index]
            plant = scene.proposals[rec.proposal_index]
            achieved = iou(plant.box, gt.box)
            assert achieved == pytest.approx(rec.achieved_iou, abs=1e-12)
            assert abs(achieved - rec.target_iou) <= 0.02

    def test_unit_target_is_duplicate(self):
        cfg = data.SynthConfig(seed=7, n_scenes=2, proposals_per_scene=60)
        scenes, key = data.generate_synthetic(cfg)
        by_id = {s.id: s for s in scenes}
        unit = [r for r in key if r.target_iou == 1.0]
        assert unit
        for rec in unit:
            gt = by_id[rec.scene_id].ground_truth[rec.gt_index].box
            p = by_id[rec.scene_id].proposals[rec.proposal_index].box
            assert (p.x1, p.y1, p.x2, p.y2) == (gt.x1, gt.y1, gt.x2, gt.y2)

    def test_proposal_budget_enforced(self):
        cfg = data.SynthConfig(seed=8, n_scenes=1, proposals_per_scene=5)
        with pytest.raises(SynthesisError):
            data.generate_synthetic(cfg)

    def test_scene_composition(self):
        cfg = data.SynthConfig(seed=9, n_scenes=2, proposals_per_scene=70)
        scenes, _ = data.generate_synthetic(cfg)
        for s in scenes:
            assert len(s.proposals) == 70
            assert len(s.ground_truth) >= 1
            assert (s.seg_mask == cfg.road_class_id).any()
            # object heights stay below tau; clutter exceeds it
            assert np.nanmax(s.height_map) > 2.5

    def test_answer_key_round_trip(self, tmp_path):
        cfg = data.SynthConfig(seed=10, n_scenes=2, proposals_per_scene=60)
        _, key = data.generate_synthetic(cfg)
        p = str(tmp_path / "key.csv")
        data.write_answer_key(p, key)
        assert data.read_answer_key(p) == key
