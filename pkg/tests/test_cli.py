import json
import os

import numpy as np
import pytest

from geoalign import io
from geoalign.cli import main


def run(capsys, *argv):
    rc = main(list(argv))
    out, err = capsys.readouterr()
    return rc, out, err


@pytest.fixture(scope="module")
def bundle(tmp_path_factory):
    d = tmp_path_factory.mktemp("bundle")
    art = '{"kind": "boundary_shift", "params": {"shift": 2}}'
    assert main(["synth", "--scene-seed", "3", "--street", "--artifact", art, "--out", str(d)]) == 0
    return d


def test_align_scale_example(capsys):
    rc, out, _ = run(capsys, "align", "--variant", "scale", "--pred", "[1,2]", "--gt", "[3,6]")
    assert rc == 0
    assert json.loads(out)["scale"] == 3.0


def test_align_other_variants(capsys, tmp_path):
    pred = [[0, 0, 1], [1, 0, 2], [0, 1, 3], [1, 1, 4.0]]
    gt = (2 * np.array(pred) + [1, -1, 3]).tolist()
    rc, out, _ = run(capsys, "align", "--variant", "scale_shift", "--pred", json.dumps(pred), "--gt", json.dumps(gt))
    r = json.loads(out)
    assert rc == 0 and abs(r["scale"] - 2.0) < 1e-12
    np.testing.assert_allclose(r["shift"], [1, -1, 3], atol=1e-12)
    rc, out, _ = run(capsys, "align", "--variant", "disparity", "--pred", "[1,2,3]", "--gt", "[2,4,6]")
    assert abs(json.loads(out)["scale"] - 2.0) < 1e-12
    (tmp_path / "p.json").write_text("[1, 2, 3]")
    rc, out, _ = run(capsys, "align", "--variant", "shift", "--pred", str(tmp_path / "p.json"), "--gt", "[6,7,8]")
    assert json.loads(out)["shift"] == 5.0


def test_eval_identity(capsys, bundle):
    d = str(bundle)
    rc, out, _ = run(capsys, "eval", "--protocol", "metric_depth", "--pred", f"{d}/depth.pfm",
                     "--gt", f"{d}/depth.pfm", "--mask", f"{d}/mask.pgm")
    r = json.loads(out)
    assert rc == 0 and (r["rel"], r["delta1"]) == (0.0, 100.0)
    rc, out, _ = run(capsys, "eval", "--protocol", "affine_inv_point", "--pred", f"{d}/pred.bin", "--gt", f"{d}/gt.bin")
    r = json.loads(out)
    assert r["rel"] <= 1e-9 and r["delta1"] == 100.0


def test_eval_suite_csv(capsys, bundle, tmp_path):
    d = str(bundle)
    out_csv = tmp_path / "s.csv"
    rc, _, _ = run(capsys, "eval", "--suite", "--pred", f"{d}/pred.bin", "--gt", f"{d}/gt.bin", "--out", str(out_csv))
    header, row = out_csv.read_text().splitlines()
    assert rc == 0 and header.startswith("image,scale_inv_point_rel,scale_inv_point_delta1")
    assert row.startswith("pred.bin,")


def test_eval_boundary_f1(capsys, bundle):
    d = str(bundle)
    rc, out, _ = run(capsys, "eval", "--protocol", "boundary_f1", "--pred", f"{d}/depth.pfm", "--gt", f"{d}/depth.pfm")
    assert rc == 0 and json.loads(out)["boundary_f1"] == 100.0


def test_eval_batch_aggregation(capsys, tmp_path):
    root = tmp_path / "in"
    for s in (1, 2):
        assert main(["synth", "--scene-seed", str(s), "--width", "32", "--height", "24", "--focal", "30",
                     "--pred-bias", "0.1", "--out", str(root / f"s{s}")]) == 0
    capsys.readouterr()
    cfg = tmp_path / "cfg.json"
    means = {}
    for mode in ("image_mean", "pixel_mean"):
        cfg.write_text(json.dumps({"aggregation": mode}))
        rc, out, _ = run(capsys, "--config", str(cfg), "eval", "--protocol", "scale_inv_point",
                         "--input-dir", str(root))
        r = json.loads(out)
        assert rc == 0 and r["aggregation"] == mode
        means[mode] = r["rel"]
        imgs = r["images"]
    per = [imgs[k]["rel"] for k in sorted(imgs)]
    ns = [imgs[k]["n_valid"] for k in sorted(imgs)]
    assert abs(means["image_mean"] - np.mean(per)) <= 1e-12
    assert abs(means["pixel_mean"] - np.dot(per, ns) / sum(ns)) <= 1e-12


def test_loss_commands(capsys, bundle):
    d = str(bundle)
    for kind in ("global", "multiscale"):
        rc, out, _ = run(capsys, "loss", kind, "--pred", f"{d}/pred.bin", "--gt", f"{d}/gt.bin")
        assert rc == 0 and json.loads(out)["value"] <= 1e-9
    rc, out, _ = run(capsys, "loss", "scale", "--log-scale", "0", "--pred", f"{d}/pred.bin", "--gt", f"{d}/gt.bin")
    assert abs(json.loads(out)["value"] - np.log(0.5) ** 2) <= 1e-12
    rc, _, err = run(capsys, "loss", "scale", "--pred", f"{d}/pred.bin", "--gt", f"{d}/gt.bin")
    assert rc == 1 and json.loads(err)["error"] == "usage"


def test_camera_recover(capsys, bundle):
    rc, out, _ = run(capsys, "camera", "recover", "--points", f"{bundle}/gt.bin")
    cam = json.loads(out)
    assert rc == 0 and abs(cam["fx"] - 60.0) <= 1e-3 * 60 and set(cam) == {"fx", "fy", "cx", "cy", "z_shift"}


def test_camera_ambiguity_exit_code(capsys, tmp_path):
    from geoalign.geometry import CameraModel, DepthMap, depth_to_points
    pm = depth_to_points(DepthMap(np.full((10, 10), 3.0)), CameraModel.centered(20, 10, 10))
    io.write_points(tmp_path / "flat.bin", pm)
    rc, _, err = run(capsys, "camera", "recover", "--points", str(tmp_path / "flat.bin"))
    assert rc == 3 and json.loads(err)["error"] == "camera_recovery"


def test_refine_bundle_report(capsys, bundle, tmp_path):
    rc, out, _ = run(capsys, "refine", "--bundle", str(bundle), "--out", str(tmp_path / "r"))
    rep = json.loads(out)
    assert rc == 0 and rep["footprint_recall"] >= 0.95
    assert rep["clean_false_positive_rate"] <= 0.05
    assert (tmp_path / "r" / "report.json").read_text() == out
    d = io.read_depth(tmp_path / "r" / "refined_depth.pfm")
    assert d.mask.all()


def test_refine_explicit_paths_with_depth_pred(capsys, bundle, tmp_path):
    b = str(bundle)
    from geoalign.geometry import DepthMap
    pred = io.read_points(f"{b}/pred.bin")
    io.write_depth(tmp_path / "pred.pfm", DepthMap(pred.points[..., 2], pred.mask))
    cam = json.loads(open(f"{b}/camera.json").read())
    # the depth prediction is unprojected with the given camera
    rc, out, _ = run(capsys, "refine", "--real-depth", f"{b}/real_depth.pfm", "--mask", f"{b}/real_mask.pgm",
                     "--pred", str(tmp_path / "pred.pfm"), "--camera", f"{b}/camera.json",
                     "--out", str(tmp_path / "o"))
    assert rc == 0 and cam["fx"] == 60.0
    assert json.loads(out)["output_valid_pixels"] == 64 * 48


def test_refine_batch_is_resumable_and_worker_independent(capsys, bundle, tmp_path):
    import shutil
    root = tmp_path / "in"
    shutil.copytree(bundle, root / "a")
    assert main(["synth", "--scene-seed", "5", "--street", "--artifact",
                 '{"kind": "hole", "params": {"pixels": 40}}', "--out", str(root / "b")]) == 0
    capsys.readouterr()
    rc, out1, _ = run(capsys, "refine", "--input-dir", str(root), "--output-dir", str(tmp_path / "o1"))
    rc2, out2, _ = run(capsys, "refine", "--input-dir", str(root), "--output-dir", str(tmp_path / "o2"),
                       "--workers", "2")
    assert rc == rc2 == 0 and out1 == out2
    for sub in ("a", "b"):
        for f in sorted(os.listdir(tmp_path / "o1" / sub)):
            assert (tmp_path / "o1" / sub / f).read_bytes() == (tmp_path / "o2" / sub / f).read_bytes()
    assert json.loads(out1)["reports"]["b"]["footprint_recall"] is None
    rc, out, _ = run(capsys, "refine", "--input-dir", str(root), "--output-dir", str(tmp_path / "o1"))
    assert json.loads(out)["processed"] == []


def test_synth_is_byte_identical(capsys, tmp_path):
    for d in ("x", "y"):
        assert main(["synth", "--scene-seed", "8", "--artifact",
                     '{"kind": "noise", "params": {"sigma": 0.1, "fraction": 0.5, "seed": 2}}',
                     "--out", str(tmp_path / d)]) == 0
    names = sorted(os.listdir(tmp_path / "x"))
    assert names == sorted(os.listdir(tmp_path / "y"))
    for n in names:
        assert (tmp_path / "x" / n).read_bytes() == (tmp_path / "y" / n).read_bytes()


def test_synth_from_spec(capsys, tmp_path):
    spec = {"width": 8, "height": 6, "focal": 5.0, "background_depth": 4.0, "seed": 0,
            "primitives": [{"type": "sphere", "center": [0, 0, 3.0], "radius": 1.0}]}
    (tmp_path / "s.json").write_text(json.dumps(spec))
    assert main(["synth", "--spec", str(tmp_path / "s.json"), "--out", str(tmp_path / "o")]) == 0
    z = io.read_depth(tmp_path / "o" / "depth.pfm").values
    assert z[0, 0] == 4.0 and z[3, 4] < 4.0


def test_error_exit_codes(capsys, tmp_path):
    rc, _, err = run(capsys, "align", "--variant", "scale")
    assert rc == 1 and json.loads(err)["error"] == "usage"
    rc, _, err = run(capsys, "eval", "--pred", str(tmp_path / "no.pfm"), "--gt", str(tmp_path / "no.pfm"))
    assert rc == 2
    rc, _, err = run(capsys, "align", "--variant", "scale", "--pred", "[0,0]", "--gt", "[1,2]")
    assert rc == 3 and json.loads(err)["error"] == "alignment"
    rc, _, err = run(capsys, "align", "--variant", "scale", "--pred", "[1,2", "--gt", "[1,2]")
    assert rc == 2
    (tmp_path / "c.json").write_text('{"bogus": 1}')
    rc, _, err = run(capsys, "--config", str(tmp_path / "c.json"), "align", "--variant", "scale",
                     "--pred", "[1]", "--gt", "[1]")
    assert rc == 2


def test_repeat_runs_byte_identical(capsys, bundle):
    cmds = [["loss", "multiscale", "--pred", f"{bundle}/pred.bin", "--gt", f"{bundle}/gt.bin"],
            ["eval", "--protocol", "local_point", "--pred", f"{bundle}/pred.bin", "--gt", f"{bundle}/gt.bin"],
            ["camera", "recover", "--points", f"{bundle}/pred.bin"]]
    for c in cmds:
        _, a, _ = run(capsys, *c)
        _, b, _ = run(capsys, *c)
        assert a == b and a


def test_selftest_quick_worker_independent(capsys):
    rc1, out1, _ = run(capsys, "selftest", "--quick")
    rc2, out2, _ = run(capsys, "selftest", "--quick", "--workers", "2")
    assert rc1 == rc2 == 0 and out1 == out2
    assert out1.splitlines()[-1] == "16/16 checks passed"
