"""Command-line entry point: ``geoalign <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 solver failure (also
used when ``selftest`` reports a failing check). Errors are printed to stderr
as one JSON object.
"""

from __future__ import annotations

import argparse
import csv
import io as _stdio
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import align as _al
from . import io
from .camera import recover_focal_shift
from .config import RunConfig
from .errors import DataError, GeoAlignError
from .geometry import CameraModel, DepthMap, PointMap, depth_to_points, inverse_depth_weights
from .losses import default_regions, loss_global, loss_multiscale, loss_scale
from .metrics import PROTOCOLS, boundary_f1, evaluate, evaluate_suite
from .refine import refine_pipeline
from . import synth


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- input helpers ------------------------------------------------------------

def _load_mask(path, shape=None):
    if path is None:
        return None
    m = io.read_mask(path)
    if shape is not None and m.shape != tuple(shape):
        raise DataError(f"{path}: mask shape {m.shape} does not match {tuple(shape)}")
    return m


def _load_map(spec, mask=None):
    """A JSON literal / .json array, a PFM scalar map, or a raw point map."""
    s = spec.strip()
    if s.startswith("["):
        try:
            return np.asarray(json.loads(s), dtype=np.float64)
        except json.JSONDecodeError as e:
            raise DataError(f"bad inline array: {e}") from e
    ext = os.path.splitext(spec)[1].lower()
    if ext == ".json":
        return np.asarray(io.read_json(spec), dtype=np.float64)
    if ext == ".pfm":
        return io.read_depth(spec, mask)
    return io.read_points(spec, mask)


def _emit(obj, out=None):
    text = io.dumps(obj)
    if out:
        io.atomic_write(out, text.encode())
    else:
        sys.stdout.write(text)


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if getattr(args, "workers", None) is not None:
        over["workers"] = args.workers
    if over:
        d = cfg.to_dict()
        d.update(over)
        cfg = RunConfig.from_dict(d)
    return cfg


# -- commands -----------------------------------------------------------------

def cmd_synth(args, cfg):
    if args.spec:
        spec = synth.SceneSpec.from_dict(io.read_json(args.spec))
    else:
        make = synth.street_scene if args.street else synth.random_scene
        spec = make(cfg.seed if args.scene_seed is None else args.scene_seed,
                    width=args.width, height=args.height, focal=args.focal)
    os.makedirs(args.out, exist_ok=True)
    depth, pm, mask, cam = synth.render(spec)
    j = lambda name: os.path.join(args.out, name)  # noqa: E731
    io.write_json(j("scene.json"), spec.to_dict())
    io.write_depth(j("depth.pfm"), depth)
    io.write_mask(j("mask.pgm"), mask)
    io.write_points(j("gt.bin"), pm)
    io.write_json(j("camera.json"), cam.to_dict())
    pred = synth.biased_prediction(pm, args.pred_scale, args.pred_bias)
    io.write_points(j("pred.bin"), pred)
    summary = {"scene": spec.to_dict(), "valid_pixels": int(mask.sum())}
    if args.artifact:
        real, rmask = depth, mask
        footprint = np.zeros(mask.shape, bool)
        arts = []
        for a in args.artifact:
            art = synth.ArtifactSpec.from_dict(json.loads(a) if a.strip().startswith("{") else io.read_json(a))
            real, rmask, fp = synth.inject(real, rmask, art)
            footprint |= fp
            arts.append(art.to_dict())
        io.write_depth(j("real_depth.pfm"), real)
        io.write_mask(j("real_mask.pgm"), rmask)
        io.write_mask(j("footprint.pgm"), footprint)
        summary["artifacts"] = arts
        summary["footprint_pixels"] = int(footprint.sum())
    _emit(summary)


def _weights_for(gt, kind):
    if kind == "uniform":
        return None
    if isinstance(gt, PointMap):
        return inverse_depth_weights(DepthMap(gt.points[..., 2], gt.mask))
    if isinstance(gt, DepthMap):
        return inverse_depth_weights(gt)
    g = np.asarray(gt, dtype=np.float64)
    z = g[:, 2] if g.ndim == 2 else g
    return inverse_depth_weights(z)


def cmd_align(args, cfg):
    pred = _load_map(args.pred)
    gt = _load_map(args.gt)
    if args.mask:
        shape = gt.shape if isinstance(gt, (PointMap, DepthMap)) else None
        m = _load_mask(args.mask, shape)
        pred = pred.with_mask(m) if isinstance(pred, PointMap) else (
            DepthMap(pred.values, pred.mask & m) if isinstance(pred, DepthMap) else pred)
    weights = args.weights or ("inverse_depth" if isinstance(gt, (PointMap, DepthMap)) else "uniform")
    variant = {"scale": "scale_only", "shift": "shift_only", "disparity": "lsq_affine"}.get(
        args.variant, args.variant)
    if variant == "lsq_affine":
        res = _al.solve_disparity_affine_lsq(pred, gt)
    else:
        w = _weights_for(gt, weights)
        if variant == "scale_only":
            res = _al.solve_scale_l1(pred, gt, w)
        elif variant == "shift_only":
            res = _al.solve_shift_l1(pred, gt, w)
        else:
            res = _al.solve_scale_shift_l1(pred, gt, w, **cfg.solver_kw())
    _emit(res.to_dict(), args.out)


def cmd_loss(args, cfg):
    gt = io.read_points(args.gt)
    pred = io.read_points(args.pred)
    mask = _load_mask(args.mask, gt.shape)
    kw = cfg.solver_kw()
    if args.kind == "global":
        rep = loss_global(pred, gt, mask, **kw)
    elif args.kind == "multiscale":
        m = gt.mask & pred.mask if mask is None else gt.mask & pred.mask & mask
        regions = default_regions(gt, m, cfg.loss_centers, cfg.loss_radius_fractions, cfg.seed)
        rep = loss_multiscale(pred, gt, m, regions, **kw)
    else:
        if args.log_scale is None:
            raise UsageError("loss scale needs --log-scale")
        rep = loss_scale(args.log_scale, pred, gt, mask, **kw)
    _emit(rep.to_dict(), args.out)


def _refine_one(job):
    """Refine one bundle; returns the report dict. Runs in worker processes."""
    paths, out_dir, cfg_dict = job
    cfg = RunConfig.from_dict(cfg_dict)
    real_mask = io.read_mask(paths["mask"])
    real = io.read_depth(paths["real_depth"], real_mask)
    cam = CameraModel.from_dict(io.read_json(paths["camera"])) if paths.get("camera") else None
    if paths["pred"].lower().endswith(".pfm"):
        if cam is None:
            raise DataError("a predicted depth map needs --camera")
        pred = depth_to_points(io.read_depth(paths["pred"]), cam)
    else:
        pred = io.read_points(paths["pred"])
    if cam is None:
        cam = recover_focal_shift(pred)
    res = refine_pipeline(real, real_mask, pred, cam, cfg.refine_config(), **cfg.solver_kw())
    report = res.to_dict()
    fp_path = paths.get("footprint")
    if fp_path and os.path.exists(fp_path):
        fp = io.read_mask(fp_path)
        flagged = res.report.union
        clean = real_mask & ~fp
        # only corrupted pixels that are still marked valid can be flagged
        target = real_mask & fp
        report["footprint_recall"] = (float((flagged & target).sum() / target.sum())
                                      if target.any() else None)
        report["clean_false_positive_rate"] = float((flagged & clean).sum() / max(int(clean.sum()), 1))
    os.makedirs(out_dir, exist_ok=True)
    io.write_depth(os.path.join(out_dir, "refined_depth.pfm"), res.depth)
    io.write_mask(os.path.join(out_dir, "refined_mask.pgm"), res.mask)
    io.write_mask(os.path.join(out_dir, "filtered_mask.pgm"), res.filtered_mask)
    io.write_json(os.path.join(out_dir, "report.json"), report)
    return report


def _bundle_paths(d):
    j = lambda n: os.path.join(d, n)  # noqa: E731
    pred = j("pred.bin") if os.path.exists(j("pred.bin")) else j("pred_depth.pfm")
    return {"real_depth": j("real_depth.pfm"), "mask": j("real_mask.pgm"), "pred": pred,
            "camera": j("camera.json") if os.path.exists(j("camera.json")) else None,
            "footprint": j("footprint.pgm")}


def cmd_refine(args, cfg):
    if args.input_dir:
        if not args.output_dir:
            raise UsageError("--input-dir needs --output-dir")
        jobs = []
        for name in sorted(os.listdir(args.input_dir)):
            src = os.path.join(args.input_dir, name)
            dst = os.path.join(args.output_dir, name)
            if not os.path.isdir(src):
                continue
            if os.path.exists(os.path.join(dst, "report.json")):
                continue
            jobs.append((name, (_bundle_paths(src), dst, cfg.to_dict())))
        if cfg.workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(cfg.workers) as ex:
                reports = list(ex.map(_refine_one, [j for _, j in jobs]))
        else:
            reports = [_refine_one(j) for _, j in jobs]
        _emit({"processed": [n for n, _ in jobs],
               "reports": {n: r for (n, _), r in zip(jobs, reports)}})
        return
    if args.bundle:
        paths = _bundle_paths(args.bundle)
    else:
        if not (args.real_depth and args.mask and args.pred):
            raise UsageError("refine needs --bundle, --input-dir, or --real-depth/--mask/--pred")
        paths = {"real_depth": args.real_depth, "mask": args.mask, "pred": args.pred,
                 "camera": args.camera, "footprint": args.footprint}
    if args.footprint:
        paths["footprint"] = args.footprint
    if not args.out:
        raise UsageError("refine needs --out")
    _emit(_refine_one((paths, args.out, cfg.to_dict())))


def cmd_camera(args, cfg):
    pm = _load_map(args.points)
    if not isinstance(pm, PointMap):
        raise DataError("camera recover needs a point map")
    cam = recover_focal_shift(pm, _load_mask(args.mask, pm.shape))
    _emit(cam.to_dict(), args.out)


def _eval_pair(pred_path, gt_path, mask_path, args, cfg):
    gt = _load_map(gt_path)
    pred = _load_map(pred_path)
    mask = _load_mask(mask_path, gt.shape) if mask_path else None
    z_max = args.z_max if args.z_max is not None else cfg.z_max
    kw = cfg.solver_kw()
    regions = None
    if args.suite:
        if not (isinstance(pred, PointMap) and isinstance(gt, PointMap)):
            raise DataError("--suite needs point maps for pred and gt")
        m = pred.mask & gt.mask if mask is None else pred.mask & gt.mask & mask
        regions = default_regions(gt, m, cfg.loss_centers, cfg.loss_radius_fractions, cfg.seed)
        return evaluate_suite(pred, gt, mask, z_max=z_max, regions=regions, **kw)
    if args.protocol == "local_point":
        m = pred.mask & gt.mask if mask is None else pred.mask & gt.mask & mask
        regions = default_regions(gt, m, cfg.loss_centers, cfg.loss_radius_fractions, cfg.seed)
    if args.protocol == "boundary_f1":
        return {"boundary_f1": boundary_f1(pred if not isinstance(pred, PointMap) else DepthMap(pred.points[..., 2], pred.mask),
                                           gt if not isinstance(gt, PointMap) else DepthMap(gt.points[..., 2], gt.mask),
                                           mask, cfg.f1_thresholds)}
    return evaluate(pred, gt, mask, args.protocol, z_max=z_max, regions=regions, **kw)


def _suite_rows(name, bundles):
    row = {"image": name}
    for proto, b in bundles.items():
        row[f"{proto}_rel"] = b.rel
        row[f"{proto}_delta1"] = b.delta1
        row[f"{proto}_n"] = b.n_valid
    return row


def _write_csv(rows, out):
    cols = list(rows[0].keys())
    buf = _stdio.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(cols)
    for r in rows:
        wr.writerow([format(v, ".17g") if isinstance(v, float) else v for v in (r[c] for c in cols)])
    if out:
        io.atomic_write(out, buf.getvalue().encode())
    else:
        sys.stdout.write(buf.getvalue())


def _aggregate(rows, protocols, mode):
    agg = {"image": f"mean({mode})"}
    for p in protocols:
        for k in ("rel", "delta1"):
            vals = np.array([r[f"{p}_{k}"] for r in rows])
            if mode == "pixel_mean":
                n = np.array([r[f"{p}_n"] for r in rows], dtype=float)
                agg[f"{p}_{k}"] = float(np.sum(vals * n) / np.sum(n))
            else:
                agg[f"{p}_{k}"] = float(np.mean(vals))
        agg[f"{p}_n"] = int(sum(r[f"{p}_n"] for r in rows))
    return agg


def cmd_eval(args, cfg):
    if args.input_dir:
        names = sorted(n for n in os.listdir(args.input_dir)
                       if os.path.isdir(os.path.join(args.input_dir, n)))
        results = []
        for n in names:
            d = os.path.join(args.input_dir, n)
            mask = os.path.join(d, "mask.pgm")
            results.append((n, _eval_pair(os.path.join(d, "pred.bin"), os.path.join(d, "gt.bin"),
                                          mask if os.path.exists(mask) else None, args, cfg)))
        if args.suite:
            rows = [_suite_rows(n, r) for n, r in results]
            protos = list(results[0][1].keys()) if results else []
            if rows:
                rows.append(_aggregate(rows, protos, cfg.aggregation))
                _write_csv(rows, args.out)
            return
        per = {n: (r.to_dict() if hasattr(r, "to_dict") else r) for n, r in results}
        out = {"images": per}
        bundles = [r for _, r in results if hasattr(r, "rel")]
        if bundles:
            if cfg.aggregation == "pixel_mean":
                n = np.array([b.n_valid for b in bundles], float)
                out["rel"] = float(np.array([b.rel for b in bundles]) @ n / n.sum())
                out["delta1"] = float(np.array([b.delta1 for b in bundles]) @ n / n.sum())
            else:
                out["rel"] = float(np.mean([b.rel for b in bundles]))
                out["delta1"] = float(np.mean([b.delta1 for b in bundles]))
            out["aggregation"] = cfg.aggregation
        _emit(out, args.out)
        return
    if not (args.pred and args.gt):
        raise UsageError("eval needs --pred and --gt (or --input-dir)")
    res = _eval_pair(args.pred, args.gt, args.mask, args, cfg)
    if args.suite:
        _write_csv([_suite_rows(os.path.basename(args.pred), res)], args.out)
    else:
        _emit(res.to_dict() if hasattr(res, "to_dict") else res, args.out)


def cmd_selftest(args, cfg):
    from .selftest import run_selftest

    results = run_selftest(quick=args.quick, workers=cfg.workers, seed=cfg.seed)
    for r in results:
        sys.stdout.write(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}\n")
    failed = [r.name for r in results if not r.passed]
    sys.stdout.write(f"{len(results) - len(failed)}/{len(results)} checks passed\n")
    return 3 if failed else 0


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="geoalign", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--seed", type=int)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="render a synthetic scene bundle")
    s.add_argument("--spec", help="scene JSON; default: a random scene")
    s.add_argument("--scene-seed", type=int)
    s.add_argument("--street", action="store_true", help="separated-object scene generator")
    s.add_argument("--width", type=int, default=64)
    s.add_argument("--height", type=int, default=48)
    s.add_argument("--focal", type=float, default=60.0)
    s.add_argument("--artifact", action="append", help="artifact JSON (file or literal); repeatable")
    s.add_argument("--pred-scale", type=float, default=2.0)
    s.add_argument("--pred-bias", type=float, default=0.0)
    s.add_argument("--out", required=True)

    a = sub.add_parser("align", help="solve one alignment problem")
    a.add_argument("--variant", required=True,
                   choices=["scale", "scale_only", "scale_shift", "shift", "shift_only", "disparity", "lsq_affine"])
    a.add_argument("--pred", required=True)
    a.add_argument("--gt", required=True)
    a.add_argument("--mask")
    a.add_argument("--weights", choices=["uniform", "inverse_depth"])
    a.add_argument("--out")

    lo = sub.add_parser("loss", help="evaluate a training objective")
    lo.add_argument("kind", choices=["global", "multiscale", "scale"])
    lo.add_argument("--pred", required=True)
    lo.add_argument("--gt", required=True)
    lo.add_argument("--mask")
    lo.add_argument("--log-scale", type=float)
    lo.add_argument("--out")

    r = sub.add_parser("refine", help="filter and complete real depth")
    r.add_argument("--bundle", help="directory with real_depth.pfm, real_mask.pgm, pred.bin, camera.json")
    r.add_argument("--real-depth")
    r.add_argument("--mask")
    r.add_argument("--pred", help="point map (.bin) or predicted depth (.pfm, needs --camera)")
    r.add_argument("--camera")
    r.add_argument("--footprint", help="optional artifact footprint PGM for scoring")
    r.add_argument("--out")
    r.add_argument("--input-dir")
    r.add_argument("--output-dir")
    r.add_argument("--workers", type=int)

    c = sub.add_parser("camera", help="camera utilities")
    csub = c.add_subparsers(dest="action", required=True, parser_class=_Parser)
    cr = csub.add_parser("recover", help="recover focal and z-shift from a point map")
    cr.add_argument("--points", required=True)
    cr.add_argument("--mask")
    cr.add_argument("--out")

    e = sub.add_parser("eval", help="evaluation metrics")
    e.add_argument("--pred")
    e.add_argument("--gt")
    e.add_argument("--mask")
    e.add_argument("--protocol", default="affine_inv_point", choices=list(PROTOCOLS) + ["boundary_f1"])
    e.add_argument("--z-max", type=float)
    e.add_argument("--suite", action="store_true", help="all protocols, CSV output")
    e.add_argument("--input-dir", help="batch: subdirectories with pred.bin, gt.bin, optional mask.pgm")
    e.add_argument("--out")

    st = sub.add_parser("selftest", help="run the oracle-equivalence checks")
    st.add_argument("--quick", action="store_true")
    st.add_argument("--workers", type=int)
    return p


COMMANDS = {"synth": cmd_synth, "align": cmd_align, "loss": cmd_loss, "refine": cmd_refine,
            "camera": cmd_camera, "eval": cmd_eval, "selftest": cmd_selftest}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = _config(args)
        rc = COMMANDS[args.command](args, cfg)
        return int(rc or 0)
    except UsageError as e:
        sys.stderr.write(io.dumps({"error": "usage", "message": str(e)}))
        return 1
    except GeoAlignError as e:
        sys.stderr.write(io.dumps(e.to_dict()))
        return e.exit_code
    except (OSError, ValueError, KeyError) as e:
        sys.stderr.write(io.dumps({"error": "data", "message": str(e)}))
        return 2


if __name__ == "__main__":
    sys.exit(main())
