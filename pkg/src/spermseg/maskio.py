"""Reading and writing images and masks (PNG and run-length JSON)."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import IoError

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


def read_rgb(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    except (OSError, ValueError) as exc:
        raise IoError(f"cannot read image {path}: {exc}") from exc


def write_rgb(path, img: np.ndarray) -> None:
    Image.fromarray(np.asarray(img, dtype=np.uint8), mode="RGB").save(path, format="PNG")


def read_mask(path) -> np.ndarray:
    """Load a mask PNG; any nonzero pixel counts as foreground."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"))
    except (OSError, ValueError) as exc:
        raise IoError(f"cannot read mask {path}: {exc}") from exc
    return arr > 0


def write_mask(path, mask: np.ndarray) -> None:
    arr = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path, format="PNG")


def list_images(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise IoError(f"not a directory: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def mask_to_rle(mask: np.ndarray) -> dict:
    """Row-major run lengths, alternating background/foreground, background first."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    flat = mask.ravel()
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat.size and flat[0]:
        runs = [0] + runs
    return {"w": int(w), "h": int(h), "rle": [int(r) for r in runs]}


def rle_to_mask(obj: dict) -> np.ndarray:
    w, h, runs = int(obj["w"]), int(obj["h"]), obj["rle"]
    if sum(runs) != w * h:
        raise IoError(f"run lengths sum to {sum(runs)}, expected {w * h}")
    values = np.arange(len(runs)) % 2 == 1
    return np.repeat(values, runs).reshape(h, w)


def dump_rle(path, mask: np.ndarray) -> None:
    Path(path).write_text(json.dumps(mask_to_rle(mask)))


def load_rle(path) -> np.ndarray:
    try:
        return rle_to_mask(json.loads(Path(path).read_text()))
    except (OSError, ValueError, KeyError) as exc:
        raise IoError(f"cannot read RLE mask {path}: {exc}") from exc
