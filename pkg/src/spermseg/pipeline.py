"""End-to-end segmentation: preprocess, head/dye removal, tail clustering, splicing."""

from __future__ import annotations

import colorsys
import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import maskio
from .con2dis import Con2DisResult, con2dis
from .config import PipelineConfig, serialize
from .errors import DegenerateAffinity, DegenerateMask, TooFewPoints
from .head_filter import HeadMaskProvider, HeadSplit, provide_heads
from .preprocess import normalize
from .raster import fit_ellipse_moments, thin_to_skeleton
from .splice import SpermInstance, assemble, extract_endpoints, match_endpoints

log = logging.getLogger(__name__)


@dataclass
class PipelineResult:
    name: str
    instances: list[SpermInstance]
    split: HeadSplit
    clusters: Con2DisResult | None
    k: int
    timings: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @property
    def masks(self) -> list[np.ndarray]:
        return [s.full_mask for s in self.instances]

    def report(self, mask_names: list[str] | None = None) -> dict:
        names = mask_names or [None] * len(self.instances)
        return {
            "image": self.name,
            "instance_count": len(self.instances),
            "heads": len(self.split.heads),
            "dye_blocks": len(self.split.dye),
            "tail_clusters": self.k,
            "instances": [s.to_json(n) for s, n in zip(self.instances, names)],
        }


def _heads_dir_for(heads_dir, stem: str):
    if heads_dir is None:
        return None
    base = Path(heads_dir)
    # a per-image subdirectory wins over a shared directory
    return base / stem if (base / stem).is_dir() else base


def choose_k(cfg: PipelineConfig, n_heads: int) -> tuple[int | None, int]:
    """``(k, k_min)`` for tail clustering.

    An explicit ``con2dis.num_clusters`` wins. Mode ``heads`` uses one cluster
    per head; mode ``spectral`` lets the spectrum decide but never goes below
    the head count (broken tails then come back as several clusters that the
    splicer rejoins).
    """
    if cfg.con2dis.num_clusters is not None:
        return cfg.con2dis.num_clusters, 1
    if cfg.cluster_count == "heads" and n_heads > 0:
        return n_heads, 1
    return None, max(1, n_heads)


def _cluster_tails(tail_image: np.ndarray, cfg: PipelineConfig, k: int | None, k_min: int):
    ccfg = dataclasses.replace(cfg.con2dis, seed=cfg.seed)
    try:
        res = con2dis(tail_image, ccfg, k, k_min)
    except (TooFewPoints, DegenerateAffinity) as exc:
        # too little tail left to cluster: keep it as a single tail
        log.warning("tail clustering skipped: %s", exc)
        return None, [tail_image.copy()], [thin_to_skeleton(tail_image)]
    return res, res.masks, res.cluster_skeletons()


def segment_image(img: np.ndarray, cfg: PipelineConfig = PipelineConfig(), name: str = "image") -> PipelineResult:
    """Run the full pipeline on one RGB array."""
    timings = {}
    t0 = time.perf_counter()
    img_n = normalize(img, cfg.preprocess)
    timings["preprocess"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    provider = HeadMaskProvider(heads_dir=_heads_dir_for(cfg.heads_dir, name))
    split = provide_heads(img_n, provider, cfg.filter, cfg.preprocess)
    timings["head_filter"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    res, tails, skels = None, [], []
    k = 0
    if split.tail_image.any():
        res, tails, skels = _cluster_tails(split.tail_image, cfg, *choose_k(cfg, len(split.heads)))
        k = len(tails)
    else:
        log.warning("%s: no tail pixels after head/dye removal", name)
    timings["con2dis"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    ellipses = []
    for h in split.heads:
        try:
            ellipses.append(fit_ellipse_moments(h))
        except DegenerateMask:
            ellipses.append(None)
    eps = extract_endpoints(ellipses, skels, cfg.splice.n_slope, cfg.splice.spur_len)
    matches = match_endpoints(eps, cfg.splice)
    instances = assemble(split.heads, tails, skels, matches, shape=img.shape[:2])
    dye = np.zeros(img.shape[:2], dtype=bool)
    for d in split.dye:
        dye |= d
    for s in instances:
        s.full_mask &= ~dye
    instances = [s for s in instances if s.full_mask.any()]
    timings["splice"] = time.perf_counter() - t0

    diag = {
        "candidates": [{"class": c.value, "shape_index": si, "color_index": ci} for c, si, ci in split.candidates],
        "matches": [
            {"a": list(m.a.owner), "b": list(m.b.owner), "angle": m.angle, "distance": m.distance} for m in matches
        ],
    }
    if res is not None:
        diag["con2dis"] = res.diagnostics
    return PipelineResult(name, instances, split, res, k, timings, diag)


def overlay(img: np.ndarray, instances: list[SpermInstance]) -> np.ndarray:
    """Colour each instance with its own hue; pixels shared by instances get the mean colour."""
    base = (0.35 * img.astype(float) + 0.65 * 255.0)
    acc = np.zeros(img.shape[:2] + (3,))
    cnt = np.zeros(img.shape[:2])
    for i, s in enumerate(instances):
        hue = (i * 0.618033988749895) % 1.0
        rgb = np.array(colorsys.hsv_to_rgb(hue, 0.85, 0.9)) * 255.0
        acc[s.full_mask] += rgb
        cnt[s.full_mask] += 1
    out = base
    hit = cnt > 0
    out[hit] = acc[hit] / cnt[hit, None]
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def write_outputs(result: PipelineResult, img: np.ndarray, out_dir, dump_dir=None) -> dict:
    """Write masks/, overlays/ and (optionally) diagnostics; return the image's report entry."""
    out = Path(out_dir)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    (out / "overlays").mkdir(parents=True, exist_ok=True)
    names = []
    for i, s in enumerate(result.instances):
        rel = f"masks/{result.name}_inst{i:02d}.png"
        maskio.write_mask(out / rel, s.full_mask)
        names.append(rel)
    maskio.write_rgb(out / "overlays" / f"{result.name}.png", overlay(img, result.instances))
    if dump_dir is not None:
        d = Path(dump_dir) / result.name
        d.mkdir(parents=True, exist_ok=True)
        (d / "diagnostics.json").write_text(json.dumps(result.diagnostics, indent=2, sort_keys=True))
        if result.clusters is not None:
            maskio.write_mask(d / "skeleton.png", result.clusters.points.skeleton)
            for c, m in enumerate(result.clusters.masks):
                maskio.write_mask(d / f"cluster{c:02d}.png", m)
    return result.report(names)


def run_pipeline(image_path, cfg: PipelineConfig = PipelineConfig(), out_dir=None, dump_dir=None) -> PipelineResult:
    """Segment one image file; when ``out_dir`` is given, write its masks, overlay and report."""
    path = Path(image_path)
    img = maskio.read_rgb(path)
    result = segment_image(img, cfg, name=path.stem)
    if out_dir is not None:
        entry = write_outputs(result, img, out_dir, dump_dir)
        write_report(out_dir, [entry], cfg, [result.timings])
    return result


def _run_one(args):
    path, cfg, out_dir, dump_dir = args
    img = maskio.read_rgb(path)
    result = segment_image(img, cfg, name=Path(path).stem)
    return write_outputs(result, img, out_dir, dump_dir), result.timings


def run_many(paths, cfg: PipelineConfig, out_dir, dump_dir=None, jobs: int = 1) -> list[dict]:
    """Segment several images, up to ``jobs`` at a time; the report is ordered by file name."""
    paths = sorted(Path(p) for p in paths)
    work = [(p, cfg, out_dir, dump_dir) for p in paths]
    if jobs > 1 and len(work) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, work))
    else:
        results = [_run_one(w) for w in work]
    entries = [r[0] for r in results]
    write_report(out_dir, entries, cfg, [r[1] for r in results])
    return entries


def write_report(out_dir, entries: list[dict], cfg: PipelineConfig, timings: list[dict]) -> None:
    """``report.json`` holds only deterministic content; wall-clock timings go to ``timings.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = {
        "images": entries,
        "instance_count": sum(e["instance_count"] for e in entries),
        "config": serialize(cfg).splitlines(),
    }
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    stamped = [{"image": e["image"], **{k: round(v, 6) for k, v in t.items()}} for e, t in zip(entries, timings)]
    (out / "timings.json").write_text(json.dumps(stamped, indent=2) + "\n")


__all__ = ["PipelineResult", "choose_k", "overlay", "run_many", "run_pipeline", "segment_image", "write_outputs"]
