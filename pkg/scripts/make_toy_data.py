#!/usr/bin/env python3
"""Synthesize a small infrared/visible pair directory for smoke tests.

Infrared frames get hot Gaussian blobs on a dim background; visible frames
get stripe and gradient texture that carries most of the fine detail.  The
two never share structure, so fused outputs are easy to judge by eye.

    python3 scripts/make_toy_data.py --out data/toy --pairs 5 --size 96
"""

import argparse
from pathlib import Path

import numpy as np

from graphfusion import write_image


def infrared_frame(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32) / (size - 1)
    img = 0.08 + 0.1 * yy
    for _ in range(int(rng.integers(2, 5))):
        cy, cx = rng.uniform(0.15, 0.85, size=2)
        width = rng.uniform(0.01, 0.05)
        img = img + rng.uniform(0.4, 0.8) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / width)
    img = img + rng.normal(0.0, 0.01, size=img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def visible_frame(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32) / (size - 1)
    fx, fy = rng.integers(2, 6, size=2)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    img = (
        0.45
        + 0.2 * xx
        + 0.22 * np.sin(2.0 * np.pi * fx * xx + phase) * np.cos(2.0 * np.pi * fy * yy)
    )
    # A dark occluder the infrared channel sees through.
    cy, cx = rng.uniform(0.3, 0.7, size=2)
    img = img - 0.3 * ((np.abs(yy - cy) < 0.12) & (np.abs(xx - cx) < 0.2))
    img = img + rng.normal(0.0, 0.01, size=img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def tint(gray: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    gains = rng.uniform(0.7, 1.0, size=3).astype(np.float32)
    return np.clip(gray[:, :, None] * gains[None, None, :], 0.0, 1.0)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, required=True, help="directory for ir/ and vis/")
    parser.add_argument("--pairs", type=int, default=5)
    parser.add_argument("--size", type=int, default=96)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--color", action="store_true", help="write visible frames as P6")
    args = parser.parse_args()

    ir_dir = args.out / "ir"
    vis_dir = args.out / "vis"
    ir_dir.mkdir(parents=True, exist_ok=True)
    vis_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    for i in range(args.pairs):
        stem = f"pair{i:03d}"
        write_image(ir_dir / f"{stem}.pgm", infrared_frame(rng, args.size))
        vis = visible_frame(rng, args.size)
        if args.color:
            write_image(vis_dir / f"{stem}.ppm", tint(vis, rng))
        else:
            write_image(vis_dir / f"{stem}.pgm", vis)
    print(f"wrote {args.pairs} pairs under {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
