"""Command-line entry point: ``vodgs <command> ...``."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

from vodgs.config import VARIANTS, VC_MODES, TrainConfig, load_config, save_config

LADDER = (
    ("baseline", "baseline", "off"),
    ("+matrix", "vod-s", "off"),
    ("+matrix+vc-uniform", "vod-s", "uniform"),
    ("+matrix+vc-matches", "vod-s", "matches"),
)


def _base_config(path) -> TrainConfig:
    return load_config(path) if path else TrainConfig()


def cmd_train(args) -> int:
    from vodgs.io import load_scene, save_cloud
    from vodgs.trainer import evaluate, train

    cfg = _base_config(args.config)
    over = {k: v for k, v in dict(variant=args.variant, vc=args.vc, seed=args.seed,
                                  iterations=args.iterations).items() if v is not None}
    cfg = cfg.with_(**over)
    scene = load_scene(args.scene)
    os.makedirs(args.out, exist_ok=True)
    save_config(os.path.join(args.out, "config.txt"), cfg)
    result = train(cfg, scene, checkpoint_dir=args.out)
    save_cloud(os.path.join(args.out, "cloud.ply"), result.cloud)
    with open(os.path.join(args.out, "history.csv"), "w", newline="") as fh:
        if result.history:
            w = csv.DictWriter(fh, fieldnames=list(result.history[0]))
            w.writeheader()
            w.writerows(result.history)
    if scene.test_cams:
        table = evaluate(result.cloud, scene, view_dependent=cfg.view_dependent)
        with open(os.path.join(args.out, "metrics.csv"), "w") as fh:
            fh.write(table.to_csv())
        print(f"test PSNR {table.mean_psnr:.3f} dB  SSIM {table.mean_ssim:.4f}  ({len(result.cloud)} Gaussians)")
    return 0


def cmd_evaluate(args) -> int:
    from vodgs.io import load_cloud_ex, load_scene
    from vodgs.trainer import evaluate

    loaded = load_cloud_ex(args.cloud)
    if loaded.legacy:
        logging.warning("%s has no view-opacity matrix; evaluating with scalar opacity", args.cloud)
    scene = load_scene(args.scene)
    table = evaluate(loaded.cloud, scene)
    text = table.to_csv()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    print(text, end="")
    return 0


def cmd_make_scene(args) -> int:
    from vodgs.io import save_scene
    from vodgs.scene import make_preset

    scene = make_preset(args.preset, seed=args.seed, width=args.size, height=args.size)
    save_scene(args.out, scene)
    print(f"wrote {args.preset} scene to {args.out}: {len(scene.train_cams)} train / "
          f"{len(scene.test_cams)} test views, {len(scene.gt_cloud)} Gaussians")
    return 0


def cmd_gradcheck(args) -> int:
    from vodgs.gradients import gradient_check

    limits = {"means": 1e-2}
    errs = gradient_check(args.seed, n_gaussians=args.n, size=args.size)
    ok = True
    for name, err in errs.items():
        lim = limits.get(name, 1e-3)
        good = err < lim
        ok &= good
        print(f"{name:11s} max rel err {err:.3e}  (limit {lim:.0e})  {'ok' if good else 'FAIL'}")
    return 0 if ok else 1


def run_ladder(base: TrainConfig, scene, rows=LADDER):
    """Train each ablation row from flags alone; returns ``[(label, variant, vc, psnr, ssim, n)]``."""
    from vodgs.trainer import evaluate, train

    out = []
    for label, variant, vc in rows:
        cfg = base.with_(variant=variant, vc=vc)
        res = train(cfg, scene)
        table = evaluate(res.cloud, scene, view_dependent=cfg.view_dependent)
        out.append((label, variant, vc, table.mean_psnr, table.mean_ssim, len(res.cloud)))
    return out


def format_ladder(rows) -> str:
    lines = ["| configuration | variant | vc | PSNR | SSIM | Gaussians |", "|---|---|---|---|---|---|"]
    lines += [f"| {r[0]} | {r[1]} | {r[2]} | {r[3]:.3f} | {r[4]:.4f} | {r[5]} |" for r in rows]
    return "\n".join(lines) + "\n"


def cmd_ablation(args) -> int:
    from vodgs.io import load_scene

    cfg = _base_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_(seed=args.seed)
    rows = run_ladder(cfg, load_scene(args.scene))
    text = format_ladder(rows)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vodgs", description="View-dependent-opacity Gaussian splatting on the CPU.")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="fit a cloud to a scene directory")
    t.add_argument("--config", help="key = value file with TrainConfig fields")
    t.add_argument("--scene", required=True)
    t.add_argument("--variant", choices=VARIANTS)
    t.add_argument("--vc", choices=VC_MODES)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--iterations", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="PSNR/SSIM of a cloud on a scene's test views")
    e.add_argument("--cloud", required=True)
    e.add_argument("--scene", required=True)
    e.add_argument("--out", help="CSV output path")
    e.set_defaults(func=cmd_evaluate)

    m = sub.add_parser("make-scene", help="write a synthetic scene directory")
    m.add_argument("--preset", choices=("diffuse", "specular", "mixed"), required=True)
    m.add_argument("--out", required=True)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--size", type=int, default=128)
    m.set_defaults(func=cmd_make_scene)

    g = sub.add_parser("gradcheck", help="finite-difference check of the backward pass")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n", type=int, default=16, help="number of Gaussians")
    g.add_argument("--size", type=int, default=16, help="image side in pixels")
    g.set_defaults(func=cmd_gradcheck)

    a = sub.add_parser("ablation", help="train the four ablation configurations and tabulate them")
    a.add_argument("--config")
    a.add_argument("--scene", required=True)
    a.add_argument("--out", help="Markdown table output path")
    a.add_argument("--seed", type=int)
    a.set_defaults(func=cmd_ablation)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
