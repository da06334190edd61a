#!/usr/bin/env python3
"""Render a gallery sheet of every glyph family plus a few composed scenes.

Usage:
    python scripts/render_glyph_gallery.py --out gallery.png [--seed 0]
"""

from __future__ import annotations

import argparse

import numpy as np
from PIL import Image

from chrnet.synth import (
    Scene,
    build_scene,
    compose,
    default_glyph_library,
    render_glyph,
)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="gallery.png")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--canvas", type=int, default=96)
    args = parser.parse_args()

    hw = (args.canvas, args.canvas)
    library = default_glyph_library()
    tiles = []
    for spec in library:
        rng = np.random.default_rng([args.seed, spec.class_id])
        sub, _ = render_glyph(spec, rng, hw, center=(hw[1] / 2, hw[0] / 2))
        tiles.append(sub)
    for i in range(4):
        rng = np.random.default_rng([args.seed, 100 + i])
        tiles.append(compose(build_scene(rng, library, positive=(i % 2 == 0), canvas_hw=hw)))

    cols = 4
    rows = (len(tiles) + cols - 1) // cols
    sheet = np.zeros((rows * args.canvas, cols * args.canvas, 3), dtype=np.float32)
    for i, tile in enumerate(tiles):
        r, c = divmod(i, cols)
        sheet[r * args.canvas : (r + 1) * args.canvas, c * args.canvas : (c + 1) * args.canvas] = tile
    Image.fromarray((np.clip(sheet, 0, 1) * 255).astype(np.uint8)).save(args.out)
    print(f"wrote {args.out} ({len(library)} glyphs + 4 scenes)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
