"""Built-in solid target silhouettes (heart, circle, hexagon and friends).

The three benchmark masks ship as PGM assets; running this module as a
script regenerates them from the parametric outlines below, so the assets
are reproducible byte for byte:

    python -m quadkiri.targets [out_dir]
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

from .raster import RasterConfig, SilhouetteMask, rasterize_polygon, read_pgm, write_pgm

__all__ = [
    "BUILTIN_TARGETS",
    "heart_outline",
    "circle_outline",
    "hexagon_outline",
    "star_outline",
    "ellipse_outline",
    "render_target",
    "builtin_target",
]

ASSET_DIR = Path(__file__).parent / "assets"


def heart_outline(samples: int = 256) -> np.ndarray:
    t = np.linspace(0.0, 2.0 * np.pi, samples, endpoint=False)
    x = 16.0 * np.sin(t) ** 3
    y = 13.0 * np.cos(t) - 5.0 * np.cos(2 * t) - 2.0 * np.cos(3 * t) - np.cos(4 * t)
    return np.column_stack([x, y])


def circle_outline(samples: int = 180) -> np.ndarray:
    t = np.linspace(0.0, 2.0 * np.pi, samples, endpoint=False)
    return np.column_stack([np.cos(t), np.sin(t)])


def hexagon_outline() -> np.ndarray:
    t = np.arange(6) * np.pi / 3.0
    return np.column_stack([np.cos(t), np.sin(t)])


def star_outline(points: int = 5, inner: float = 0.45) -> np.ndarray:
    t = np.arange(2 * points) * np.pi / points + np.pi / 2.0
    r = np.where(np.arange(2 * points) % 2 == 0, 1.0, inner)
    return np.column_stack([r * np.cos(t), r * np.sin(t)])


def ellipse_outline(a: float = 1.5, b: float = 0.9, samples: int = 180) -> np.ndarray:
    t = np.linspace(0.0, 2.0 * np.pi, samples, endpoint=False)
    return np.column_stack([a * np.cos(t), b * np.sin(t)])


BUILTIN_TARGETS = {
    "heart": heart_outline,
    "circle": circle_outline,
    "hexagon": hexagon_outline,
}


def render_target(name: str, raster: RasterConfig | None = None) -> SilhouetteMask:
    """Rasterize one named outline at the configured resolution."""
    if name not in BUILTIN_TARGETS:
        raise KeyError(f"unknown target {name!r}; available: {sorted(BUILTIN_TARGETS)}")
    cfg = raster or RasterConfig()
    return rasterize_polygon(BUILTIN_TARGETS[name](), cfg)


def builtin_target(name: str) -> SilhouetteMask:
    """Load a shipped target mask, falling back to procedural rendering."""
    path = ASSET_DIR / f"{name}.pgm"
    if path.exists():
        return read_pgm(path)
    return render_target(name)


def _main(argv: list[str]) -> int:
    out = Path(argv[0]) if argv else ASSET_DIR
    out.mkdir(parents=True, exist_ok=True)
    for name in BUILTIN_TARGETS:
        write_pgm(render_target(name), out / f"{name}.pgm")
        print(f"wrote {out / f'{name}.pgm'}")
    return 0


if __name__ == "__main__":
    raise SystemExit(_main(sys.argv[1:]))
