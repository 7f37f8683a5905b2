"""Command-line front end: ``burstalign {synth,align,eval,fuse,sr,overlay}``.

Exit codes: 0 success, 2 input error, 3 numerical failure. Failures print
one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
from threadpoolctl import threadpool_limits

from . import fusion, io, metrics, synth
from .imgproc import psnr, resize_bilinear, to_gray
from .liegroup import RigidMotion, exp_so3, log_so3
from .pipeline import AlignmentConfig, align
from .reverseflow import reverse_flow, warp_backward
from .scene import Intrinsics

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


class InputError(Exception):
    def __init__(self, message, path=None, field=None):
        super().__init__(message)
        self.path = None if path is None else str(path)
        self.field = field


# -- burst directories ---------------------------------------------------------

@dataclass
class BurstManifest:
    root: Path
    frames: list
    intrinsics: str = "intrinsics.json"
    init_depth: str | None = None
    gt: dict = field(default_factory=dict)

    @classmethod
    def load(cls, root) -> "BurstManifest":
        """Read ``manifest.json`` if present, otherwise discover the standard file names."""
        root = Path(root)
        if not root.is_dir():
            raise InputError("burst directory does not exist", root, "path")
        mpath = root / "manifest.json"
        if mpath.exists():
            d = io.read_json(mpath)
            if not isinstance(d, dict) or "frames" not in d:
                raise InputError("manifest needs a 'frames' list", mpath, "frames")
            m = cls(root, list(d["frames"]), d.get("intrinsics", "intrinsics.json"),
                    d.get("init_depth"), dict(d.get("gt", {})))
        else:
            frames = sorted(p.name for p in root.glob("frame_*.png"))
            init = "init_depth16.pfm" if (root / "init_depth16.pfm").exists() else None
            gt = {}
            if (root / "gt_poses.csv").exists():
                gt["poses"] = "gt_poses.csv"
            if (root / "gt_depth.pfm").exists():
                gt["depth"] = "gt_depth.pfm"
            m = cls(root, frames, "intrinsics.json", init, gt)
        if len(m.frames) < 2:
            raise InputError(f"need at least 2 frames, found {len(m.frames)}", root, "frames")
        for name in m.frames + [m.intrinsics]:
            if not (root / name).exists():
                raise InputError("missing file", root / name, "path")
        return m

    def images(self):
        return [io.read_png(self.root / f) for f in self.frames]

    def K(self) -> Intrinsics:
        path = self.root / self.intrinsics
        d = io.read_json(path)
        for key in ("fx", "fy", "cx", "cy"):
            if key not in d:
                raise InputError("missing intrinsics entry", path, key)
        try:
            return Intrinsics.from_dict(d)
        except (TypeError, ValueError) as exc:
            raise InputError(str(exc), path, "fx/fy") from exc


def write_burst(gt: synth.GroundTruthBurst, out) -> None:
    out = io.ensure_dir(out)
    for k, img in enumerate(gt.images):
        io.write_png(out / f"frame_{k:04d}.png", img)
    io.write_json(out / "intrinsics.json", gt.K.to_dict())
    io.write_poses_csv(out / "gt_poses.csv", *synth.pose_rows(gt.poses))
    io.write_pfm(out / "gt_depth.pfm", gt.depth)
    for k, (fl, occ) in enumerate(zip(gt.flows, gt.occlusions), start=1):
        io.write_flo(out / f"gt_flow_{k:04d}.flo", fl)
        io.write_mask_png(out / f"gt_occ_{k:04d}.png", occ)
    io.write_pfm(out / "init_depth16.pfm", gt.init_depth16)


def poses_from_csv(path):
    rot, tr = io.read_poses_csv(path)
    return [RigidMotion(exp_so3(r), t) for r, t in zip(rot, tr)]


# -- scene description ----------------------------------------------------------

def scene_from_json(d: dict, path) -> synth.SceneSpec:
    """Either ``{"preset": name, "params": {...}}`` or an explicit plane list."""
    if "preset" in d:
        params = d.get("params", {})
        if "shape" in params:
            params["shape"] = tuple(params["shape"])
        try:
            return synth.preset(d["preset"], **params)
        except TypeError as exc:
            raise InputError(str(exc), path, "params") from exc
    if "planes" not in d or "shape" not in d:
        raise InputError("scene needs 'preset' or 'planes' and 'shape'", path, "planes")
    shape = tuple(int(v) for v in d["shape"])
    K = Intrinsics.from_dict(d["intrinsics"]) if "intrinsics" in d else \
        synth.default_intrinsics(shape, d.get("fov_deg", 60.0))
    rng = np.random.default_rng(d.get("texture_seed", 0))
    planes = []
    for i, p in enumerate(d["planes"]):
        if "normal" not in p:
            raise InputError("plane needs a 'normal'", path, f"planes[{i}].normal")
        n = np.asarray(p["normal"], dtype=float)
        if "texture" in p:
            tex = io.read_png(Path(path).parent / p["texture"])
            tex = to_gray(tex)
        else:
            tex = synth.pink_noise(int(p.get("texture_size", 512)), rng)
        texel = p.get("texel", 1.0 / (K.fx * float(np.linalg.norm(n))))
        planes.append(synth.TexturedPlane(n, tex, texel))
    poses = None
    if "poses" in d:
        poses = [RigidMotion(exp_so3(np.asarray(r[:3], float)), np.asarray(r[3:6], float)) for r in d["poses"]]
    return synth.SceneSpec(planes, K, shape, int(d.get("frames", len(poses) if poses else 5)),
                           float(d.get("trans_std", 0.02)), float(d.get("rot_std_deg", 0.1)),
                           float(d.get("noise_std", 0.0)), poses)


# -- commands -------------------------------------------------------------------

def cmd_synth(args) -> int:
    if args.preset:
        params = {}
        for item in args.set or []:
            key, _, val = item.partition("=")
            try:
                params[key] = json.loads(val)
            except json.JSONDecodeError as exc:
                raise InputError(f"value of {key!r} is not JSON", None, "--set") from exc
        d = {"preset": args.preset, "params": params}
        path = "<preset>"
    else:
        path = args.scene
        d = io.read_json(path)
    seed = args.seed if args.seed is not None else int(d.get("seed", 0))
    spec = scene_from_json(d, path)
    write_burst(synth.generate(spec, seed), args.out)
    return EXIT_OK


def build_config(args) -> AlignmentConfig:
    d = {}
    if args.config:
        d = io.read_json(args.config)
        if not isinstance(d, dict):
            raise InputError("config must be a JSON object", args.config, "root")
    if args.pixelwise:
        d["patch_radius"] = 0
    if args.no_exp_param:
        d["exp_param"] = False
    if args.no_newton:
        d["newton"] = False
    if args.raw_plane_param:
        d["plane_param"] = "raw"
    if args.reg:
        for item in args.reg.split(","):
            key, _, val = item.partition("=")
            if key.strip() not in ("tv", "det"):
                raise InputError(f"unknown regularizer {key!r}", None, "--reg")
            try:
                d[f"{key.strip()}_weight"] = float(val)
            except ValueError as exc:
                raise InputError(f"bad weight {val!r}", None, "--reg") from exc
    try:
        return AlignmentConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise InputError(str(exc), args.config, "config") from exc


def cmd_align(args) -> int:
    cfg = build_config(args)
    if args.dump_config:
        print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
        return EXIT_OK
    if not args.burst or not args.out:
        raise InputError("align needs a burst directory and --out", None, "arguments")
    m = BurstManifest.load(args.burst)
    images, K = m.images(), m.K()
    init_path = args.init_depth or (m.root / m.init_depth if m.init_depth else None)
    if init_path is None:
        raise InputError("no initial depth (init_depth16.pfm or --init-depth)", m.root, "init_depth")
    init = io.read_pfm(init_path).astype(float)
    res = align(images, K, init, cfg)
    write_result(res, args.out)
    return EXIT_OK


def write_result(res, out) -> None:
    out = io.ensure_dir(out)
    rot = [np.zeros(3)] + [log_so3(P.R) for P in res.poses]
    tr = [np.zeros(3)] + [P.t for P in res.poses]
    io.write_poses_csv(out / "poses.csv", rot, tr)
    io.write_pfm(out / "depth.pfm", res.depth)
    io.write_pfm(out / "normals.pfm", res.normals)
    io.write_pfm(out / "plane_map.pfm", res.plane_map.normals)
    for k, fl in enumerate(res.flows, start=1):
        io.write_flo(out / f"flow_{k:04d}.flo", fl)
        rf = reverse_flow(res, k - 1)
        io.write_flo(out / f"reverse_flow_{k:04d}.flo", rf.flow)
        io.write_mask_png(out / f"occ_{k:04d}.png", rf.occlusion)
    io.write_rows_csv(out / "loss_trace.csv", ["level", "round", "block", "loss"],
                      [[r["level"], r["round"], r["block"], r["loss"]] for r in res.loss_trace])
    io.write_json(out / "config.json", res.config.to_dict())
    io.write_json(out / "summary.json", {"view_losses": [float(v) for v in res.view_losses],
                                         "intrinsics": res.K.to_dict()})


def _result_files(root, prefix):
    files = sorted(Path(root).glob(f"{prefix}_*.flo"))
    if not files:
        raise InputError(f"no {prefix}_####.flo files", root, prefix)
    return files


def cmd_eval(args) -> int:
    rdir, gdir = Path(args.result), Path(args.gt)
    pred_flows = [io.read_flo(p) for p in _result_files(rdir, "flow")]
    gt_flows = [io.read_flo(p) for p in _result_files(gdir, "gt_flow")]
    if len(pred_flows) != len(gt_flows):
        raise InputError("flow count differs from ground truth", rdir, "flow")
    pred_poses = poses_from_csv(rdir / "poses.csv")[1:]
    gt_poses = poses_from_csv(gdir / "gt_poses.csv")[1:]
    depth = io.read_pfm(rdir / "depth.pfm").astype(float)
    gt_depth = io.read_pfm(gdir / "gt_depth.pfm").astype(float)
    report = metrics.evaluate(pred_flows, gt_flows, pred_poses, gt_poses, depth, gt_depth, args.depth_mode)
    if args.out:
        io.write_json(args.out, report)
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def _out_of_frame(flow):
    h, w = flow.shape[:2]
    gy, gx = np.mgrid[0:h, 0:w]
    x, y = gx + flow[..., 0], gy + flow[..., 1]
    return (x < 0) | (x > w - 1) | (y < 0) | (y > h - 1)


def cmd_fuse(args) -> int:
    m = BurstManifest.load(args.burst)
    images = m.images()
    flows = [io.read_flo(p).astype(float) for p in _result_files(args.result, "flow")]
    if len(flows) != len(images) - 1:
        raise InputError("need one flow per non-reference frame", args.result, "flow")
    out = fusion.fuse_average(images, flows, [_out_of_frame(f) for f in flows])
    io.write_png(args.out, out)
    return EXIT_OK


def cmd_sr(args) -> int:
    m = BurstManifest.load(args.burst)
    images = m.images()
    rdir = Path(args.result)
    flows = [io.read_flo(p).astype(float) for p in _result_files(rdir, "reverse_flow")]
    if len(flows) != len(images) - 1:
        raise InputError("need one reverse flow per non-reference frame", rdir, "reverse_flow")
    masks = [io.read_mask_png(rdir / f"occ_{k:04d}.png") if (rdir / f"occ_{k:04d}.png").exists() else None
             for k in range(1, len(images))]
    cfg = fusion.SRConfig(args.factor, args.iterations, args.step)
    res = fusion.super_resolve(images, flows, cfg, masks)
    io.write_png(args.out, res.image)
    report = {"step": res.step, "loss_first": res.losses[0], "loss_last": res.losses[-1],
              "iterations": len(res.losses) - 1}
    if args.gt:
        ref = io.read_png(args.gt)
        report["psnr_sr"] = psnr(res.image, ref)
        report["psnr_bilinear"] = psnr(resize_bilinear(images[0], ref.shape[:2]), ref)
    if args.report:
        io.write_json(args.report, report)
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def cmd_overlay(args) -> int:
    m = BurstManifest.load(args.burst)
    images = m.images()
    if not 1 <= args.view < len(images):
        raise InputError(f"view must be in 1..{len(images) - 1}", None, "--view")
    if args.result:
        flow = io.read_flo(Path(args.result) / f"flow_{args.view:04d}.flo").astype(float)
    else:
        flow = np.zeros(images[0].shape[:2] + (2,))
    io.write_png(args.out, fusion.make_overlay(images[0], warp_backward(images[args.view], flow)), bits=8)
    return EXIT_OK


# -- entry point -----------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="burstalign", description="Burst alignment with plane maps.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed")
    common.add_argument("--deterministic", action="store_true",
                        help="single-threaded numerics for byte-identical outputs")
    common.add_argument("--threads", type=int, default=None, help="cap on worker threads")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="render a synthetic burst")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--scene", help="scene JSON")
    g.add_argument("--preset", choices=sorted(synth.PRESETS))
    s.add_argument("--set", action="append", metavar="KEY=JSON",
                   help="preset parameter, e.g. shape=[64,64] or frames=3")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    a = sub.add_parser("align", parents=[common], help="align a burst directory")
    a.add_argument("burst", nargs="?")
    a.add_argument("--out")
    a.add_argument("--config", help="JSON config (keys of AlignmentConfig)")
    a.add_argument("--init-depth", help="PFM depth overriding the burst's init_depth16.pfm")
    a.add_argument("--dump-config", action="store_true", help="print the effective config and exit")
    a.add_argument("--pixelwise", action="store_true", help="1x1 patches")
    a.add_argument("--no-exp-param", action="store_true", help="linearized pose parameterization")
    a.add_argument("--no-newton", action="store_true", help="gradient steps instead of Gauss-Newton")
    a.add_argument("--raw-plane-param", action="store_true", help="optimize plane normals directly")
    a.add_argument("--reg", help="regularizer weights, e.g. tv=0.01,det=0.1")
    a.set_defaults(func=cmd_align)

    e = sub.add_parser("eval", parents=[common], help="compare a result with ground truth")
    e.add_argument("result")
    e.add_argument("gt")
    e.add_argument("--out")
    e.add_argument("--depth-mode", choices=("median", "affine"), default="median")
    e.set_defaults(func=cmd_eval)

    f = sub.add_parser("fuse", parents=[common], help="average the aligned frames")
    f.add_argument("burst")
    f.add_argument("result")
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fuse)

    r = sub.add_parser("sr", parents=[common], help="multi-frame super-resolution")
    r.add_argument("burst")
    r.add_argument("result")
    r.add_argument("--out", required=True)
    r.add_argument("--factor", type=int, default=2)
    r.add_argument("--iterations", type=int, default=100)
    r.add_argument("--step", type=float, default=None)
    r.add_argument("--gt", help="high-resolution reference for PSNR")
    r.add_argument("--report", help="write the JSON report here")
    r.set_defaults(func=cmd_sr)

    o = sub.add_parser("overlay", parents=[common], help="red/cyan alignment overlay")
    o.add_argument("burst")
    o.add_argument("--result", help="alignment result (omit for the unaligned overlay)")
    o.add_argument("--view", type=int, default=1)
    o.add_argument("--out", required=True)
    o.set_defaults(func=cmd_overlay)
    return p


def _fail(code, exc, path=None, field=None) -> int:
    io.eprint_json({"error": type(exc).__name__, "message": str(exc), "file": path, "field": field,
                    "exit_code": code})
    return code


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    threads = 1 if args.deterministic else args.threads
    if threads is not None:
        cv2.setNumThreads(threads)
    try:
        with threadpool_limits(limits=threads):
            return args.func(args)
    except InputError as exc:
        return _fail(EXIT_INPUT, exc, exc.path, exc.field)
    except io.FormatError as exc:
        return _fail(EXIT_INPUT, exc, exc.path, exc.field)
    except (FileNotFoundError, IsADirectoryError) as exc:
        return _fail(EXIT_INPUT, exc, getattr(exc, "filename", None), "path")
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        return _fail(EXIT_NUMERIC, exc)
    except ValueError as exc:
        return _fail(EXIT_INPUT, exc)


if __name__ == "__main__":
    sys.exit(main())
