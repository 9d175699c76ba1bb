"""Command-line entry point: ``spermseg {segment,synth,eval,ablate,cluster}``.

Exit codes: 0 success, 2 invalid configuration, 3 I/O failure, 4 degenerate input.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import maskio
from .config import PipelineConfig, load
from .errors import ConfigError, IoError, SegmentationError

log = logging.getLogger("spermseg")

SUITES = {"cross20": ("cross", 20), "scenes10": ("scenes", 10)}


def _pipeline_config(args) -> PipelineConfig:
    cfg = load(args.config) if getattr(args, "config", None) else PipelineConfig()
    overrides = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    # dedicated flags override both the file and --set
    if getattr(args, "heads_dir", None):
        overrides["heads_dir"] = str(args.heads_dir)
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = str(args.seed)
    return cfg.with_overrides(overrides) if overrides else cfg


# --------------------------------------------------------------------------
# subcommands


def cmd_segment(args) -> int:
    from .pipeline import run_many

    cfg = _pipeline_config(args)
    src = Path(args.input)
    if src.is_dir():
        paths = maskio.list_images(src)
    elif src.exists():
        paths = [src]
    else:
        raise IoError(f"no such image or directory: {src}")
    if not paths:
        log.warning("no images found in %s", src)
    entries = run_many(paths, cfg, args.out, dump_dir=args.dump_diagnostics, jobs=args.jobs)
    for e in entries:
        print(f"{e['image']}: {e['instance_count']} instances")
    return 0


def _synth_spec(args):
    from .synthgen import SynthSpec

    fields = {}
    if args.spec:
        try:
            fields = json.loads(Path(args.spec).read_text())
        except OSError as exc:
            raise IoError(f"cannot read {args.spec}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.spec} is not valid JSON: {exc}") from exc
    for name in ("seed", "num_sperm", "num_dye_blobs", "breakpoint_prob", "force_crossings"):
        v = getattr(args, name)
        if v is not None:
            fields[name] = v
    if args.size:
        fields["image_size"] = tuple(args.size)
    known = {f.name for f in dataclasses.fields(SynthSpec)}
    unknown = sorted(set(fields) - known)
    if unknown:
        raise ConfigError(f"unknown synth spec fields: {', '.join(unknown)}")
    try:
        return SynthSpec(**fields)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def write_scene(out: Path, name: str, img, gt, spec) -> dict:
    """Write image, per-instance masks, head masks (usable as ``--heads-dir``) and dye masks."""
    maskio.write_rgb(out / f"{name}.png", img)
    files = {"image": f"{name}.png", "instances": [], "tails": [], "heads": [], "dye": []}
    for group, masks in (("instances", gt.instances), ("tails", gt.tails), ("heads", gt.heads), ("dye", gt.dye)):
        for i, m in enumerate(masks):
            rel = f"{group}/{name}/{i:02d}.png"
            (out / rel).parent.mkdir(parents=True, exist_ok=True)
            maskio.write_mask(out / rel, m)
            files[group].append(rel)
    files["crossings"] = [list(map(float, c)) for c in gt.crossings]
    files["spec"] = spec.to_dict()
    return files


def cmd_synth(args) -> int:
    from .synthgen import cross_suite_specs, generate, scene_suite_specs

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.suite:
        kind, n = SUITES[args.suite]
        specs = cross_suite_specs(n) if kind == "cross" else scene_suite_specs(n)
    else:
        specs = [_synth_spec(args)]
    manifest = []
    for spec in specs:
        img, gt = generate(spec)
        manifest.append(write_scene(out, f"synth_{spec.seed:05d}", img, gt, spec))
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(manifest)} scene(s) to {out}")
    return 0


def _mask_dir(path: Path) -> list[np.ndarray]:
    if (path / "masks").is_dir():
        path = path / "masks"
    if not path.is_dir():
        raise IoError(f"not a directory: {path}")
    return [maskio.read_mask(p) for p in sorted(path.glob("*.png"))]


def format_table(rows: list[tuple]) -> str:
    head = ("method", "mIoU", "mDice", "unmatched_truth", "unmatched_pred")
    lines = ["{:<24}{:>8}{:>8}{:>17}{:>16}".format(*head)]
    for name, miou, mdice, ut, up in rows:
        lines.append(f"{name:<24}{miou:>8.4f}{mdice:>8.4f}{ut:>17d}{up:>16d}")
    return "\n".join(lines)


def cmd_eval(args) -> int:
    from .metrics import evaluate

    truth, pred = _mask_dir(Path(args.truth)), _mask_dir(Path(args.pred))
    sc = evaluate(truth, pred)
    print(format_table([(args.name, sc.miou, sc.mdice, sc.unmatched_truth, sc.unmatched_pred)]))
    if args.json:
        Path(args.json).write_text(json.dumps({"method": args.name, **sc.to_json()}, indent=2) + "\n")
    return 0


def cmd_ablate(args) -> int:
    from .baselines import METHODS, ablation_suite
    from .synthgen import cross_suite_specs

    cfg = _pipeline_config(args)
    kind, n = SUITES[args.suite]
    if kind != "cross":
        raise ConfigError("ablation runs on crossing fixtures only (use --suite cross20)")
    ccfg = dataclasses.replace(cfg.con2dis, seed=cfg.seed)
    res = ablation_suite(cross_suite_specs(n), ccfg)
    lines = [f"{'method':<24}{'label_accuracy':>16}"]
    lines += [f"{m:<24}{res['mean'][m]:>16.4f}" for m in METHODS]
    print("\n".join(lines))
    if args.json:
        Path(args.json).write_text(json.dumps(res, indent=2) + "\n")
    return 0


def cmd_cluster(args) -> int:
    from .con2dis import con2dis

    cfg = _pipeline_config(args)
    ccfg = dataclasses.replace(cfg.con2dis, seed=cfg.seed)
    mask = maskio.read_mask(args.mask)
    res = con2dis(mask, ccfg, args.k)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for c, m in enumerate(res.masks):
        maskio.write_mask(out / f"cluster{c:02d}.png", m)
    maskio.write_mask(out / "skeleton.png", res.points.skeleton)
    (out / "diagnostics.json").write_text(json.dumps(res.diagnostics, indent=2, sort_keys=True) + "\n")
    print(f"{res.k} clusters, {res.diagnostics['multi_assigned_pixels']} multi-assigned pixels")
    return 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spermseg", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        sp.add_argument("--seed", type=int)

    sp = sub.add_parser("segment", help="segment an image or a directory of images")
    sp.add_argument("input")
    sp.add_argument("--out", required=True)
    sp.add_argument("--heads-dir", help="directory of head mask PNGs (per-image subdirectories allowed)")
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--dump-diagnostics", metavar="DIR")
    with_config(sp)
    sp.set_defaults(func=cmd_segment)

    sp = sub.add_parser("synth", help="render synthetic scenes with ground truth")
    sp.add_argument("--out", required=True)
    sp.add_argument("--suite", choices=sorted(SUITES))
    sp.add_argument("--spec", help="JSON file of generator settings")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--num-sperm", dest="num_sperm", type=int)
    sp.add_argument("--num-dye", dest="num_dye_blobs", type=int)
    sp.add_argument("--breakpoint-prob", dest="breakpoint_prob", type=float)
    sp.add_argument("--crossings", dest="force_crossings", type=int)
    sp.add_argument("--size", type=int, nargs=2, metavar=("W", "H"))
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("eval", help="score predicted instance masks against ground truth")
    sp.add_argument("truth")
    sp.add_argument("pred")
    sp.add_argument("--name", default="prediction")
    sp.add_argument("--json")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate", help="compare con2dis with the baseline clusterers")
    sp.add_argument("--suite", choices=["cross20"], default="cross20")
    sp.add_argument("--json")
    with_config(sp)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("cluster", help="run con2dis alone on a tail-mask PNG")
    sp.add_argument("mask")
    sp.add_argument("--out", required=True)
    sp.add_argument("--k", type=int)
    with_config(sp)
    sp.set_defaults(func=cmd_cluster)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except SegmentationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return IoError.exit_code


if __name__ == "__main__":
    sys.exit(main())
