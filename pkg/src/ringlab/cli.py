"""Command-line entry points.

Exit codes: 0 success, 2 configuration/usage error, 3 numerical failure.
"""
import argparse
import json
import os
import sys

import numpy as np

from ringlab import latentio, lab, report, stats, watermark
from ringlab.attacks import AttackSpec, apply_attack
from ringlab.config import ConfigError, GuidanceArm, ExperimentConfig, load_config
from ringlab.errors import InvalidArgument, NumericalDivergence, SingularityError
from ringlab.grid import RngStream, sample_gaussian
from ringlab.models import Condition

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _config(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        from dataclasses import replace
        cfg = replace(cfg, global_seed=args.seed)
    return cfg


def _dump(trajectory, directory):
    if directory is None or trajectory is None:
        return
    os.makedirs(directory, exist_ok=True)
    for i, state in enumerate(trajectory):
        latentio.save_latent(os.path.join(directory, f"step_{i:03d}.rlt"), state)


def _watermark_prefix(out):
    return os.path.splitext(out)[0] + ".wm"


def _load_latent(path, shape=None):
    x = latentio.load(path)
    if np.iscomplexobj(x):
        raise InvalidArgument(f"{path} holds a complex grid, expected a real latent")
    if shape is not None and tuple(x.shape) != tuple(shape):
        raise InvalidArgument(f"{path} has shape {x.shape}, config expects {tuple(shape)}")
    return x


def cmd_embed(args):
    cfg = _config(args)
    x = _load_latent(args.input)
    c, h, w = x.shape
    wm = cfg.watermark
    mask = watermark.make_ring_mask(h, w, wm.radius, wm.channel, wm.center, channels=c)
    key = watermark.make_ring_key(mask, RngStream(cfg.key_seed, lab.KEY_STREAM), wm.pattern)
    latentio.save_latent(args.out, watermark.embed(x, key, mask))
    prefix = args.key_prefix or _watermark_prefix(args.out)
    watermark.save_watermark(prefix, key, mask)
    print(f"wrote {args.out} and watermark files {prefix}.*")


def cmd_generate(args):
    cfg = _config(args)
    the_lab = lab.Lab(cfg)
    if args.latent:
        x_T = _load_latent(args.latent, cfg.latent_shape)
    else:
        x_T = sample_gaussian(RngStream(cfg.global_seed, 0), *cfg.latent_shape)
    if args.watermark:
        x_T = watermark.embed(x_T, the_lab.key, the_lab.mask)
        watermark.save_watermark(_watermark_prefix(args.out), the_lab.key, the_lab.mask)
        latentio.save_latent(os.path.splitext(args.out)[0] + ".xT.rlt", x_T)
    trajectory = [] if args.dump_trajectory else None
    x_0 = the_lab.generate(x_T, Condition.exact(args.prompt), trajectory)
    latentio.save_latent(args.out, x_0)
    _dump(trajectory, args.dump_trajectory)
    print(f"wrote {args.out}")


def cmd_attack(args):
    cfg = _config(args)
    if args.kind:
        spec = AttackSpec.from_dict({"kind": args.kind, "sigma": args.sigma, "kernel_radius": args.radius,
                                     "seed": args.seed or 0})
    else:
        spec = cfg.attacks[0]
    x = _load_latent(args.input)
    seed = args.seed if args.seed is not None else spec.seed
    latentio.save_latent(args.out, apply_attack(x, spec, RngStream(seed, 0)))
    print(f"wrote {args.out} ({spec.tag})")


def cmd_invert(args):
    cfg = _config(args)
    the_lab = lab.Lab(cfg)
    x_0 = _load_latent(args.input, cfg.latent_shape)
    arm = GuidanceArm.parse(args.guidance) if args.guidance else cfg.guidance[0]
    cond = arm.condition(args.prompt, the_lab.model.n_components)
    trajectory = [] if args.dump_trajectory else None
    inv = the_lab.invert(x_0, cond, trajectory)
    latentio.save_latent(args.out, inv.latent)
    _dump(trajectory, args.dump_trajectory)
    status = "converged" if inv.converged else "NOT converged"
    print(f"wrote {args.out} ({arm.tag}, {status}, max residual {inv.max_residual:.3e})")


def cmd_detect(args):
    if args.latent:
        if not args.key:
            raise ConfigError("--latent needs --key <watermark prefix>")
        key, mask = watermark.load_watermark(args.key)
        w_hat = watermark.recover_key(_load_latent(args.latent), mask)
        m = watermark.extraction_metrics(w_hat, key.masked(mask))
        print(json.dumps(m._asdict()))
        return
    if len(args.csv) != 2:
        raise ConfigError("detect needs two distance CSVs (watermarked, clean) or --latent/--key")
    wm_d = report.read_distance_csv(args.csv[0])
    cl_d = report.read_distance_csv(args.csv[1])
    rep = stats.detection_report(wm_d, cl_d, bins=args.bins)
    text = json.dumps(rep.to_dict(), indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    print(f"AUC {rep.auc!r}")
    for pt in rep.operating_points:
        print(f"TPR@{100 * pt.fpr:g}%FPR {pt.tpr:.4f} threshold {pt.threshold:.6g}")
    print(f"symmetric KLD {rep.skld:.6g}")


def cmd_experiment(args):
    cfg = _config(args)
    out = args.out or cfg.output_dir
    summary = lab.run_experiment(cfg, out, workers=args.workers)
    for s in summary:
        det = s.get("detection")
        auc = f"{det['auc']:.4f}" if det else "n/a"
        print(f"{s['attack']:>24} {s['guidance']:>16}  AUC {auc}  failed {s['failed']}")
    print(f"wrote {out}/trials.csv, histogram.csv, report.md, report.json")


def cmd_report(args):
    records = report.read_trials_csv(args.trials)
    out = args.out or os.path.dirname(os.path.abspath(args.trials))
    if args.config:
        cfg = load_config(args.config)
        report.write_report(records, out, fpr_levels=cfg.fpr_levels, bins=cfg.kld_bins)
    else:
        report.write_report(records, out, bins=args.bins)
    print(f"wrote {out}/report.md")


def build_parser():
    parser = argparse.ArgumentParser(prog="ringlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=fn)
        p.add_argument("--config", help="experiment config JSON")
        p.add_argument("--seed", type=int, help="override the global seed")
        return p

    p = add("embed", cmd_embed, "embed the tree-ring key into a latent file")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--key-prefix", help="prefix for mask/key/sidecar files (default: <out>.wm)")

    p = add("generate", cmd_generate, "sample a latent and integrate it to data")
    p.add_argument("--out", required=True)
    p.add_argument("--latent", help="initial noise latent (default: sampled from the seed)")
    p.add_argument("--prompt", type=int, default=0, help="component index used as the prompt")
    p.add_argument("--watermark", action="store_true", help="embed the key before generating")
    p.add_argument("--dump-trajectory", metavar="DIR")

    p = add("attack", cmd_attack, "apply a blur/noise attack to a latent file")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=("none", "gaussian_blur", "additive_noise"))
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--radius", type=int, default=2)

    p = add("invert", cmd_invert, "invert a generated latent back to noise")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--prompt", type=int, default=0)
    p.add_argument("--guidance", help="matched | null | adversarial | perturbed:<eta>")
    p.add_argument("--dump-trajectory", metavar="DIR")

    p = add("detect", cmd_detect, "detection statistics from distance CSVs, or a latent's key distance")
    p.add_argument("csv", nargs="*", help="watermarked.csv clean.csv")
    p.add_argument("--latent", help="latent file to score against a stored key")
    p.add_argument("--key", help="watermark file prefix written by embed/generate")
    p.add_argument("--bins", type=int, default=stats.KLD_BINS)
    p.add_argument("--out", help="write the report JSON here")

    p = add("experiment", cmd_experiment, "run the full trial pipeline from a config")
    p.add_argument("--out", help="output directory (default: config output_dir)")
    p.add_argument("--workers", type=int, help="override worker count")

    p = add("report", cmd_report, "rebuild report.md from a trials.csv")
    p.add_argument("trials")
    p.add_argument("--out")
    p.add_argument("--bins", type=int, default=stats.KLD_BINS, help="ignored when --config is given")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (NumericalDivergence, SingularityError) as exc:
        print(f"ringlab: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, InvalidArgument, OSError, ValueError) as exc:
        print(f"ringlab: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
