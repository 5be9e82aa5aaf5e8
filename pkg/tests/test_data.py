import numpy as np
import pytest

from facepyr import data, geometry
from facepyr.rng import substream

SAMPLE_LABELS = """\
# a.jpg
10 10 20 20 12 14 1 18 14 1 15 17 1 13 24 1 17 24 1
# b.jpg
5 5 8 8 -1 -1 -1 -1 -1 -1 -1 -1 -1 -1 -1 -1 -1 -1 -1
30 40 10 12
# empty.jpg
"""


class TestParseAnnotations:
    def test_block_with_landmarks(self):
        anns = data.parse_annotations(SAMPLE_LABELS)
        assert [a.image_path for a in anns] == ["a.jpg", "b.jpg", "empty.jpg"]
        face = anns[0].faces[0]
        np.testing.assert_allclose(face.box, [10, 10, 30, 30])
        assert face.landmark_valid.all()
        np.testing.assert_allclose(face.landmarks[0], [12, 14])

    def test_all_sentinel_landmarks_still_trainable(self):
        anns = data.parse_annotations(SAMPLE_LABELS)
        face = anns[1].faces[0]
        assert not face.landmark_valid.any()
        assert (face.landmarks == geometry.LANDMARK_SENTINEL).all()
        assert not face.invalid

    def test_box_only_line(self):
        anns = data.parse_annotations(SAMPLE_LABELS)
        face = anns[1].faces[1]
        np.testing.assert_allclose(face.box, [30, 40, 40, 52])
        assert face.landmarks is None

    def test_empty_face_list(self):
        anns = data.parse_annotations(SAMPLE_LABELS)
        assert anns[2].faces == []

    def test_malformed_line_reports_number(self):
        bad = "# a.jpg\n10 10 20\n"
        with pytest.raises(data.AnnotationError) as exc:
            data.parse_annotations(bad)
        assert exc.value.line_number == 2

    def test_face_before_header_rejected(self):
        with pytest.raises(data.AnnotationError):
            data.parse_annotations("10 10 20 20\n")

    def test_non_numeric_rejected(self):
        with pytest.raises(data.AnnotationError) as exc:
            data.parse_annotations("# a.jpg\n10 ten 20 20\n")
        assert exc.value.line_number == 2

    def test_round_trip_bit_exact(self):
        anns = data.parse_annotations(SAMPLE_LABELS)
        text = data.serialize_annotations(anns)
        again = data.serialize_annotations(data.parse_annotations(text))
        assert text == again


class TestWiderBbxGt:
    TEXT = """\
0--Parade/0_Parade_marchingband_1_849.jpg
2
449 330 122 149 0 0 0 0 0 0
78 221 7 8 2 0 0 1 2 0
0--Parade/0_Parade_Parade_0_904.jpg
0
0 0 0 0 0 0 0 0 0 0
"""

    def test_parse(self):
        anns = data.parse_wider_bbx_gt(self.TEXT)
        assert len(anns) == 2
        assert len(anns[0].faces) == 2
        np.testing.assert_allclose(anns[0].faces[0].box, [449, 330, 571, 479])
        assert anns[0].faces[1].invalid
        assert anns[0].faces[1].blur == 2
        assert anns[1].faces == []

    def test_invalid_faces_excluded_from_training(self):
        anns = data.parse_wider_bbx_gt(self.TEXT)
        assert len(anns[0].trainable_faces()) == 1


class TestWiderEvalMat:
    def test_load_synthetic_mat(self, tmp_path):
        from scipy.io import savemat

        def cell(items):
            arr = np.empty(len(items), dtype=object)
            for i, v in enumerate(items):
                arr[i] = v
            return arr.reshape(-1, 1)

        boxes = np.array([[10, 10, 20, 20], [50, 50, 5, 5]], dtype=np.float64)
        main = {
            "event_list": cell([np.array(["ev"])]),
            "file_list": cell([cell([np.array(["img1"])])]),
            "face_bbx_list": cell([cell([boxes])]),
        }
        savemat(tmp_path / "wider_face_val.mat", main)
        for name, keep in (("easy", [1]), ("medium", [1, 2]), ("hard", [1, 2])):
            savemat(
                tmp_path / f"wider_{name}_val.mat",
                {"gt_list": cell([cell([np.array(keep, dtype=np.float64).reshape(-1, 1)])])},
            )

        records = data.load_wider_eval_mat(str(tmp_path))
        rec = records["ev/img1"]
        np.testing.assert_allclose(rec["boxes"][0], [10, 10, 30, 30])
        assert rec["sets"]["easy"].tolist() == [True, False]
        assert rec["sets"]["hard"].tolist() == [True, True]


class TestRandomCrop:
    def make_image(self, h, w, value=100):
        return np.full((h, w, 3), value, dtype=np.uint8)

    def test_identity_when_window_equals_source(self):
        image = self.make_image(640, 640)
        face = data.Face(box=np.array([100.0, 100.0, 200.0, 200.0]))
        sample = data.random_crop(image, [face], substream(0, "crop", 0, 0))
        assert sample.image.shape == (640, 640, 3)
        np.testing.assert_allclose(sample.faces[0].box, face.box)

    def test_center_outside_dropped(self):
        image = self.make_image(1000, 1000)
        rng = substream(1, "crop", 0, 0)
        faces = [data.Face(box=np.array([900.0, 900.0, 980.0, 980.0]))]
        # force the window to the top-left corner by monkeypatching the rng draw
        class FixedRng:
            def integers(self, lo, hi):
                return 0

        sample = data.random_crop(image, faces, FixedRng(), crop_size=640)
        assert sample.faces == []

    def test_half_inside_clipped_by_interval_intersection(self):
        image = self.make_image(1000, 1000)

        class FixedRng:
            def integers(self, lo, hi):
                return 0

        # center (620, 100) inside the [0, 640) window, box extends past it
        faces = [data.Face(box=np.array([560.0, 60.0, 680.0, 140.0]))]
        sample = data.random_crop(image, faces, FixedRng(), crop_size=640)
        got = sample.faces[0].box
        # oracle: interval intersection with [0, 640]
        expect = [max(560, 0), max(60, 0), min(680, 640), min(140, 640)]
        np.testing.assert_allclose(got, expect)

    def test_small_image_upscaled(self):
        image = self.make_image(320, 480)
        face = data.Face(box=np.array([10.0, 10.0, 50.0, 50.0]))
        sample = data.random_crop(image, [face], substream(2, "crop", 0, 0), crop_size=640)
        assert sample.image.shape == (640, 640, 3)

    def test_coordinates_stay_in_bounds(self):
        rng_master = np.random.default_rng(3)
        for trial in range(20):
            h = int(rng_master.integers(300, 1200))
            w = int(rng_master.integers(300, 1200))
            image = self.make_image(h, w)
            faces = []
            for _ in range(5):
                x1 = float(rng_master.uniform(0, w - 30))
                y1 = float(rng_master.uniform(0, h - 30))
                bw = float(rng_master.uniform(10, 200))
                pts = np.column_stack(
                    [rng_master.uniform(x1, x1 + bw, 5), rng_master.uniform(y1, y1 + bw, 5)]
                )
                faces.append(data.Face(box=np.array([x1, y1, x1 + bw, y1 + bw]), landmarks=pts))
            sample = data.random_crop(image, faces, substream(4, "crop", 0, trial))
            for face in sample.faces:
                assert (face.box >= 0).all() and (face.box <= 640).all()
                valid_pts = face.landmarks[face.landmark_valid]
                if valid_pts.size:
                    assert (valid_pts >= 0).all() and (valid_pts <= 640).all()

    def test_deterministic_given_stream(self):
        image = (np.arange(900 * 900 * 3) % 251).astype(np.uint8).reshape(900, 900, 3)
        faces = [data.Face(box=np.array([100.0, 100.0, 300.0, 300.0]))]
        a = data.random_crop(image, faces, substream(7, "crop", 3, 9))
        b = data.random_crop(image, faces, substream(7, "crop", 3, 9))
        np.testing.assert_array_equal(a.image, b.image)


class TestSynthDataset:
    def test_deterministic(self):
        cfg = data.SynthConfig(num_images=4, image_size=128, max_face=64)
        a = data.synth_dataset(cfg, seed=5)
        b = data.synth_dataset(cfg, seed=5)
        for (img_a, ann_a), (img_b, ann_b) in zip(a, b):
            np.testing.assert_array_equal(img_a, img_b)
            assert len(ann_a.faces) == len(ann_b.faces)
            for fa, fb in zip(ann_a.faces, ann_b.faces):
                np.testing.assert_array_equal(fa.box, fb.box)

    def test_landmarks_inside_boxes(self):
        cfg = data.SynthConfig(num_images=50, image_size=160, min_faces=1, max_faces=4, max_face=80)
        for _, ann in data.synth_dataset(cfg, seed=1):
            for face in ann.faces:
                x1, y1, x2, y2 = face.box
                assert (face.landmarks[:, 0] > x1).all() and (face.landmarks[:, 0] < x2).all()
                assert (face.landmarks[:, 1] > y1).all() and (face.landmarks[:, 1] < y2).all()

    def test_exact_box_construction(self):
        # a face of side s placed at (x, y) must be annotated (x, y, x+s, y+s)
        cfg = data.SynthConfig(num_images=10, image_size=200, max_face=64)
        for image, ann in data.synth_dataset(cfg, seed=2):
            for face in ann.faces:
                x1, y1, x2, y2 = face.box
                assert x2 - x1 == y2 - y1
                assert float(x1).is_integer() and float(y1).is_integer()

    def test_small_face_floor_rejected(self):
        with pytest.raises(ValueError):
            data.SynthConfig(min_face=8)

    def test_write_and_reload(self, tmp_path):
        cfg = data.SynthConfig(num_images=3, image_size=128, max_face=48)
        label_path = data.write_synth_dataset(str(tmp_path), cfg, seed=9)
        reloaded = data.load_dataset(label_path)
        original = data.synth_dataset(cfg, seed=9)
        assert len(reloaded) == 3
        for (img_r, ann_r), (img_o, ann_o) in zip(reloaded, original):
            np.testing.assert_array_equal(img_r, img_o)
            assert len(ann_r.faces) == len(ann_o.faces)
            for fr, fo in zip(ann_r.faces, ann_o.faces):
                np.testing.assert_allclose(fr.box, fo.box)
                np.testing.assert_allclose(fr.landmarks, fo.landmarks)


class TestNormalization:
    def test_unit_range(self):
        img = np.array([[[0, 127, 255]]], dtype=np.uint8)
        out = data.normalize_image(img)
        assert out.min() >= -1.0 and out.max() <= 1.0
        assert out[0, 0, 0] == pytest.approx(-1.0)
        assert out[0, 0, 2] == pytest.approx(1.0)
