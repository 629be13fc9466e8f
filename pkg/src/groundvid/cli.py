"""Command-line entry point: ``groundvid {gen,ground,forward,eval,lr,selftest}``."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bench, guidance, model
from .config import RunConfig, load_config
from .errors import GroundVidError
from .grounding import BACKGROUND, load_grounding, save_grounding
from .pipeline import build_state
from .synthetic import gen_synthetic, load_frames, load_scene_spec, save_frames, write_ppm


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def _save_array(path, arr):
    with open(path, "wb") as fh:
        np.save(fh, np.ascontiguousarray(arr, dtype=np.float64), allow_pickle=False)


def cmd_gen(args):
    spec = load_scene_spec(args.spec)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    frames, g = gen_synthetic(spec)
    save_frames(frames, args.out_frames)
    save_grounding(g, args.out_grounding)
    if args.ppm_dir:
        out = Path(args.ppm_dir)
        out.mkdir(parents=True, exist_ok=True)
        for t, frame in enumerate(frames):
            write_ppm(frame, out / f"frame_{t:04d}.ppm")
    print(f"wrote {len(frames)} frames, {len(g.instances)} instances")
    return 0


def _prepare(args, cfg: RunConfig):
    g = load_grounding(args.grounding)
    shapes = cfg.shape_config(g)
    rng = np.random.default_rng(cfg.seed)
    state, mask = build_state(g, cfg.downscale, cfg.mask, cfg.embedder, shapes, rng,
                              timestep=cfg.timestep)
    return g, shapes, rng, state, mask


def cmd_ground(args):
    cfg = load_config(args.config)
    g, _, _, state, mask = _prepare(args, cfg)
    _save_array(args.out_mask, mask.logits)
    layout = {
        "key_frames": list(mask.key_frames),
        "grid": {"h": mask.height, "w": mask.width},
        "n_ins": mask.n_ins,
        "tokens_per_instance": mask.tokens_per_instance,
        "mask_base": cfg.mask.mask_base,
        "frames": [
            {
                "frame": frame,
                "slots": [
                    {
                        "slot": s,
                        "instance": None if inst == BACKGROUND else inst,
                        "prompt": g.background_prompt if inst == BACKGROUND else g.track(inst).prompt,
                        "rows": [s * mask.tokens_per_instance, (s + 1) * mask.tokens_per_instance],
                        "n_tokens_open": len(mask.open_tokens(k, s)),
                    }
                    for s, inst in enumerate(ids)
                ],
                "nonzero_rows": int(np.count_nonzero(np.any(state.i_tokens[k] != 0, axis=1))),
            }
            for k, (frame, ids) in enumerate(zip(mask.key_frames, mask.slots))
        ],
    }
    _write_json(args.out_layout, layout)
    print("frame\tslot\tinstance\topen_tokens")
    for entry in layout["frames"]:
        for slot in entry["slots"]:
            print(f"{entry['frame']}\t{slot['slot']}\t{slot['instance']}\t{slot['n_tokens_open']}")
    if args.figures:
        from .plotting import plot_mask
        plot_mask(mask, Path(args.figures) / "mask.png")
    return 0


def _weights_for(args, cfg: RunConfig, shapes, rng):
    if args.weights:
        return model.load_checkpoint(args.weights)
    w = model.init_weights(shapes, rng, scale=cfg.init_scale)
    blocks = w.blocks
    if cfg.m_v is not None:
        blocks = tuple(replace(b, m_v=cfg.m_v) for b in blocks)
    stape = w.stape
    if cfg.m_t is not None:
        stape = replace(stape, m_t=np.full_like(stape.m_t, cfg.m_t))
    return model.ModelWeights(blocks, stape)


def cmd_forward(args):
    cfg = load_config(args.config)
    _, shapes, rng, state, _ = _prepare(args, cfg)
    weights = _weights_for(args, cfg, shapes, rng)
    if args.save_weights:
        model.save_checkpoint(weights, args.save_weights)
    if args.no_guidance:
        out = model.forward_stack(state, weights)
    else:
        out = guidance.run_guided_step(state, weights, cfg.guidance)
    _save_array(args.out, out)
    print(f"output shape {out.shape}  mean {out.mean():.6e}  std {out.std():.6e}")
    return 0


def default_providers():
    # two slots mirroring the two image-text model columns of the instance table
    return [bench.ToyColorProvider("toy_b", (16, 16)), bench.ToyColorProvider("toy_l", (32, 32))]


def cmd_eval(args):
    gt = load_grounding(args.gt)
    pred = load_grounding(args.pred)
    frames = load_frames(args.frames)
    providers = default_providers()
    report = bench.evaluate_video(gt, pred, frames, providers, video_id=Path(args.gt).stem)
    bench.save_report(report, args.report)
    names = [p.name for p in providers]
    print("\t".join(["frame", "gt_id", "label", "area", "matched", "iou", *names]))
    for r in report.per_instance:
        sims = ["error" if r["sim"][n] is None else f"{r['sim'][n]:.6f}" for n in names]
        print("\t".join(map(str, [r["frame"], r["gt_id"], r["label"], r["area"],
                                  int(r["matched"]), f"{r['iou']:.6f}", *sims])))
    for mode in (bench.MEAN, bench.AREA_WEIGHTED):
        agg = report.aggregates[mode]
        sims = "\t".join(f"{n}={agg['sim'][n]}" for n in names)
        print(f"# {mode}\tiou={agg['iou']}\t{sims}")
    if args.figures:
        from .plotting import plot_eval_figures
        plot_eval_figures(report, gt, pred, frames, args.figures)
    return 0


def cmd_lr(args):
    schedule = guidance.LrSchedule()
    if args.steps:
        steps = [int(s) for s in args.steps.split(",")]
    else:
        steps = list(range(0, schedule.decay_end + args.every + 1, args.every))
    print("step,lr")
    for s in steps:
        print(f"{s},{guidance.lr_at(s, schedule)!r}")
    if args.plot:
        from .plotting import plot_lr_schedule
        plot_lr_schedule(args.plot, schedule)
    return 0


def cmd_selftest(args):
    from .selftest import run_all
    results = run_all()
    for name, ok in results.items():
        print(f"{'PASS' if ok else 'FAIL'}\t{name}")
    return 0 if all(results.values()) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="groundvid", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="render a synthetic scene and its exact grounding")
    p.add_argument("--spec", required=True)
    p.add_argument("--out-frames", required=True)
    p.add_argument("--out-grounding", required=True)
    p.add_argument("--ppm-dir", help="also dump per-frame PPM images here")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("ground", help="build attention masks and instance-token layout")
    p.add_argument("--config", required=True)
    p.add_argument("--grounding", required=True)
    p.add_argument("--out-mask", required=True, help=".npy array (f, n_ins, h*w)")
    p.add_argument("--out-layout", required=True, help="JSON slot/token layout")
    p.add_argument("--figures", help="directory for mask figures")
    p.set_defaults(func=cmd_ground)

    p = sub.add_parser("forward", help="run a guided model step")
    p.add_argument("--config", required=True)
    p.add_argument("--grounding", required=True)
    p.add_argument("--out", required=True, help=".npy array (f, h*w, d)")
    p.add_argument("--no-guidance", action="store_true", help="single conditional pass")
    p.add_argument("--weights", help="load a weight checkpoint instead of seeded init")
    p.add_argument("--save-weights", help="write the weights used to this checkpoint")
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("eval", help="instance-aware evaluation of generated frames")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--frames", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--figures", help="directory for IoU and box-overlay figures")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("lr", help="print the staged learning-rate schedule")
    p.add_argument("--steps", help="comma-separated steps")
    p.add_argument("--every", type=int, default=500)
    p.add_argument("--plot", help="write a schedule figure to this path")
    p.set_defaults(func=cmd_lr)

    p = sub.add_parser("selftest", help="run quick built-in property checks")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (GroundVidError, OSError, json.JSONDecodeError) as exc:
        print(f"groundvid {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
