import math
import pathlib

import numpy as np
import pytest

import ptadet

FIXTURES = pathlib.Path(__file__).resolve().parent.parent / "fixtures"


def test_version():
    assert ptadet.__version__.count(".") == 2


def test_fps_matches_greedy_numpy():
    rng = np.random.default_rng(0)
    pts = rng.uniform(-5, 5, size=(40, 3))
    got = ptadet.farthest_point_sampling(pts, 10)
    chosen = [0]
    best = np.full(len(pts), np.inf)
    while len(chosen) < 10:
        best = np.minimum(best, ((pts - pts[chosen[-1]]) ** 2).sum(1))
        chosen.append(int(np.argmax(best)))
    assert list(got) == chosen


def test_knn_matches_sort():
    rng = np.random.default_rng(1)
    p = rng.uniform(size=(30, 3))
    q = rng.uniform(size=(5, 3))
    idx, d = ptadet.knn_group(q, p, 4)
    ref = ((q[:, None, :] - p[None, :, :]) ** 2).sum(-1)
    np.testing.assert_allclose(d, np.sort(ref, axis=1)[:, :4], rtol=0, atol=1e-12)
    assert idx.dtype == np.int64


def test_boxes_and_nms():
    a = ptadet.Box3D(0, 0, 0, 2, 2, 2)
    b = ptadet.Box3D(1, 0, 0, 2, 2, 2)
    assert ptadet.iou_3d(a, b) == pytest.approx(1 / 3)
    assert ptadet.iou_bev(a, a) == pytest.approx(1.0)
    assert ptadet.nms([a, b], [0.5, 0.9], 0.2) == [1]
    assert a.corners().shape == (8, 3)
    assert a.contains(np.array([0.9, 0.9, 0.9]))
    with pytest.raises(ptadet.PtadetError):
        ptadet.Box3D(0, 0, 0, 0, 1, 1)


def test_lid_round_trip():
    b = ptadet.LidBinning()
    for d in np.linspace(0.0, 70.0, 50):
        k, r, clamped = b.encode(d)
        assert not clamped
        assert b.decode(k, r) == pytest.approx(d, abs=1e-9)


def test_calib_fixture_and_velodyne():
    c = ptadet.parse_calib((FIXTURES / "calib.txt").read_text())
    assert c.p2[0, 0] == 707.0493
    p = np.array([12.5, -3.25, 0.75])
    np.testing.assert_allclose(c.camera_to_lidar(c.lidar_to_camera(p)).ravel(), p, atol=1e-9)
    coords, inten = ptadet.read_velodyne(np.array([1, 2, 3, 0.5], dtype="<f4").tobytes())
    np.testing.assert_array_equal(coords, [[1, 2, 3]])
    assert inten[0] == 0.5
    with pytest.raises(ptadet.PtadetError):
        ptadet.read_velodyne(b"\0" * 15)


def test_scene_and_eval():
    s = ptadet.generate_scene(seed=3, cars=2)
    assert s["image"].shape[2] == 3
    assert len(s["gts"]) == 2
    gt = [g["box"] for g in s["gts"]]
    ap = ptadet.average_precision_40([([(g, 0.9) for g in gt], gt)], "Car")
    assert ap == pytest.approx(1.0)
    assert ptadet.ap40_from_matches([True, False, True], 2) == pytest.approx(5 / 6)


def test_losses():
    assert ptadet.smooth_l1(0.5) == 0.125
    assert ptadet.focal_loss(0.7, True) == pytest.approx(-0.25 * 0.09 * math.log(0.7))


def test_cli_check_and_bad_key(tmp_path):
    code, out, err = ptadet.run_cli(["--out", str(tmp_path), "--set", "nope=1", "check"])
    assert code == 2
    code, out, err = ptadet.run_cli(["--out", str(tmp_path), "generate", "--count", "1"])
    assert code == 0, err
    assert (tmp_path / "manifest.jsonl").exists()
    assert (tmp_path / "scenes.csv").read_text().startswith("id,seed,points,objects")
