"""Command-line interface.

Verbs: simulate (scene spec -> recording), run (recording -> predictions),
eval (predictions + ground truth -> report), plot (report -> figures),
inspect (recording summary).  Diagnostics go to stderr; exit code 0 on
success, 1 on any handled error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .data import load_predictions, load_recording
from .errors import NFlowSegError
from .evaluation import evaluate
from .geometry import MotionParams, Plane
from .pipeline import pack_predictions, run
from .sim import PlanarObject, SceneSpec, simulate


def _motion_from_dict(d) -> MotionParams:
    return MotionParams(np.asarray(d["t"], dtype=float), np.asarray(d["w"], dtype=float))


def _plane_from_dict(d) -> Plane:
    return Plane(np.asarray(d["normal"], dtype=float), float(d["dist"]))


def load_scene(path):
    """Parse a scene-spec JSON file; returns (SceneSpec, steps, seed)."""
    raw = json.loads(Path(path).read_text())
    camera = raw.get("camera", {"t": [0, 0, 0], "w": [0, 0, 0]})
    if isinstance(camera, list):
        camera = [_motion_from_dict(c) for c in camera]
    else:
        camera = _motion_from_dict(camera)
    objects = []
    for o in raw.get("objects", []):
        objects.append(PlanarObject(
            plane=_plane_from_dict(o["plane"]),
            motion=_motion_from_dict(o["motion"]),
            region=tuple(float(v) for v in o["region"]),
            event_rate=float(o.get("event_rate", 12.0)),
            appear_step=int(o.get("appear_step", 0)),
            vanish_step=(None if o.get("vanish_step") is None else int(o["vanish_step"])),
            num_anchors=int(o.get("num_anchors", 150)),
        ))
    spec = SceneSpec(
        width=int(raw.get("width", 240)),
        height=int(raw.get("height", 180)),
        focal_px=float(raw.get("focal_px", 120.0)),
        slice_dt=float(raw.get("slice_dt", 0.025)),
        camera=camera,
        background=_plane_from_dict(raw.get("background", {"normal": [0, 0, 1], "dist": 1.0})),
        objects=objects,
        event_rate=float(raw.get("event_rate", 3.5)),
        num_bg_anchors=int(raw.get("num_bg_anchors", 700)),
        flow_noise=float(raw.get("flow_noise", 0.0)),
        sign_flip_fraction=float(raw.get("sign_flip_fraction", 0.0)),
        imu_noise=float(raw.get("imu_noise", 0.0)),
        jitter_px=float(raw.get("jitter_px", 0.4)),
    )
    return spec, int(raw.get("steps", 10)), int(raw.get("seed", 0))


def write_report(report, path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), sort_keys=True,
                                     separators=(",", ":")) + "\n")


def _fmt(v, digits=4):
    return "n/a" if v is None else f"{v:.{digits}f}"


def cmd_simulate(args) -> int:
    spec, steps, seed = load_scene(args.scene)
    if args.steps is not None:
        steps = args.steps
    if args.seed is not None:
        seed = args.seed
    rec = simulate(spec, steps, seed)
    rec.save(args.out)
    print(f"wrote {args.out}: {rec.num_slices} slices, {rec.num_events} events, "
          f"{rec.num_objects} objects")
    return 0


def cmd_run(args) -> int:
    rec = load_recording(args.recording)
    cfg = PipelineConfig.from_file(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    outputs = run(rec, cfg)
    preds = pack_predictions(rec, outputs)
    preds.save(args.out)
    done = sum(1 for o in outputs if o is not None)
    print(f"wrote {args.out}: {done}/{rec.num_slices} slices processed")
    return 0


def cmd_eval(args) -> int:
    rec = load_recording(args.recording)
    preds = load_predictions(args.pred)
    report = evaluate(rec, preds)
    if args.out:
        write_report(report, args.out)
    if args.format == "csv":
        print("frame,iou")
        for i, v in enumerate(report.per_frame_iou):
            print(f"{i},{'' if v is None else f'{v:.6f}'}")
        print(f"mean,{_fmt(report.mean_iou, 6)}")
        print(f"rmse,vx={_fmt(report.rmse_vx)},vy={_fmt(report.rmse_vy)},"
              f"vz={_fmt(report.rmse_vz)}")
    else:
        print(f"{'frame':>6} {'IoU':>8}")
        for i, v in enumerate(report.per_frame_iou):
            print(f"{i:>6} {('--' if v is None else f'{v:.4f}'):>8}")
        print(f"mean IoU: {_fmt(report.mean_iou)}")
        print(f"egomotion RMSE (m/s): vx={_fmt(report.rmse_vx)} "
              f"vy={_fmt(report.rmse_vy)} vz={_fmt(report.rmse_vz)} "
              f"over {report.egomotion_frames} frames")
    return 0


def cmd_plot(args) -> int:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    report = json.loads(Path(args.report).read_text())
    frames = report.get("per_frame_iou", [])
    if not frames:
        raise NFlowSegError(f"{args.report}: report is empty, nothing to plot")
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)

    for obj in report.get("objects", []):
        gid = obj["gt_id"]
        for axis in ("dx", "dy"):
            est = obj[f"{axis}_est"]
            gt = obj[f"{axis}_gt"]
            xs = np.arange(len(gt))
            fig, ax = plt.subplots(figsize=(5, 3))
            ax.plot(xs, [np.nan if v is None else v for v in gt], "k-", label="ground truth")
            ax.plot(xs, [np.nan if v is None else v for v in est], "r--", label="estimated")
            ax.set_xlabel("frame")
            ax.set_ylabel(f"{'horizontal' if axis == 'dx' else 'vertical'} translation")
            ax.set_title(f"object {gid}")
            ax.legend()
            fig.tight_layout()
            fig.savefig(outdir / f"object{gid}_{axis}.png", dpi=120)
            plt.close(fig)

    fig, ax = plt.subplots(figsize=(5, 3))
    xs = np.arange(len(frames))
    ax.plot(xs, [np.nan if v is None else v for v in frames], "b.-")
    ax.set_xlabel("frame")
    ax.set_ylabel("IoU")
    ax.set_ylim(0, 1)
    fig.tight_layout()
    fig.savefig(outdir / "iou.png", dpi=120)
    plt.close(fig)

    if args.recording and args.pred:
        rec = load_recording(args.recording)
        preds = load_predictions(args.pred)
        cmap = plt.get_cmap("tab10")
        n_frames = min(rec.num_slices, args.max_overlays)
        for i in range(n_frames):
            sl = rec.get_slice(i)
            labels = preds.slice_labels(i)
            fig, ax = plt.subplots(figsize=(5, 5 * rec.height / max(rec.width, 1)))
            bg = labels == 0
            ax.scatter(sl.xy_px[bg, 0], sl.xy_px[bg, 1], s=1, c="lightgray")
            for tid in np.unique(labels[labels > 0]):
                m = labels == tid
                ax.scatter(sl.xy_px[m, 0], sl.xy_px[m, 1], s=1.5,
                           color=cmap(int(tid) % 10), label=f"id {tid}")
            ax.set_xlim(0, rec.width)
            ax.set_ylim(rec.height, 0)
            ax.set_title(f"frame {i}")
            if np.any(labels > 0):
                ax.legend(markerscale=6, fontsize=7)
            fig.tight_layout()
            fig.savefig(outdir / f"segmentation_{i:03d}.png", dpi=120)
            plt.close(fig)
    print(f"wrote figures to {outdir}")
    return 0


def cmd_inspect(args) -> int:
    rec = load_recording(args.recording)
    print(f"recording: {args.recording}")
    print(f"  resolution: {rec.width} x {rec.height}")
    intr = rec.intrinsics
    print(f"  intrinsics: fx={intr.fx} fy={intr.fy} cx={intr.cx} cy={intr.cy}")
    print(f"  slices: {rec.num_slices}, events: {rec.num_events}")
    if rec.num_slices:
        dts = rec.windows[:, 1] - rec.windows[:, 0]
        counts = np.diff(rec.slice_bounds)
        print(f"  slice duration: {dts.mean():.6f} s, events/slice: "
              f"min={counts.min()} mean={counts.mean():.1f} max={counts.max()}")
    if rec.gt is not None:
        print(f"  ground truth: yes ({rec.num_objects} objects)")
    else:
        print("  ground truth: no")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nflowseg",
        description="Motion segmentation and egomotion estimation from "
                    "event-based normal flow")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic recording from a scene spec")
    p.add_argument("--scene", required=True, help="scene spec JSON file")
    p.add_argument("--out", required=True, help="output recording path")
    p.add_argument("--steps", type=int, default=None, help="override slice count")
    p.add_argument("--seed", type=int, default=None, help="override RNG seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("run", help="run the segmentation pipeline on a recording")
    p.add_argument("--recording", required=True)
    p.add_argument("--out", required=True, help="output predictions path")
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--recording", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--out", default=None, help="write machine-readable report JSON here")
    p.add_argument("--format", choices=("text", "csv"), default="text")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="render comparison figures from a report")
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--recording", default=None, help="recording for segmentation overlays")
    p.add_argument("--pred", default=None, help="predictions for segmentation overlays")
    p.add_argument("--max-overlays", type=int, default=10)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("inspect", help="print a recording summary")
    p.add_argument("--recording", required=True)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NFlowSegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
