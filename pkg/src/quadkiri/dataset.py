"""Dataset generation: Sobol sampling in log-ratio space, feasibility
filtering, rasterization, split manifests and re-render verification.

Layout on disk (one directory per split, everything diff-able):

    <root>/manifest.json
    <root>/<split>/x_000042.txt     row-major, space-separated, 17 sig digits
    <root>/<split>/y_000042.pgm     binary PGM silhouette

The generator is fully determined by (seed, config); every split draws from
its own Sobol index block so splits are disjoint by construction.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.stats import qmc

from .geometry import (
    GridShape,
    RatioField,
    check_feasible,
    default_anchors,
    march_decode,
)
from .raster import RasterConfig, SilhouetteMask, mask_iou, read_pgm, simulate, write_pgm

__all__ = [
    "GenConfig",
    "SplitManifest",
    "GenerationStallError",
    "VerificationError",
    "sobol_stream",
    "sample_passes_filters",
    "z_to_ratio",
    "generate_split",
    "verify_dataset",
    "save_field",
    "load_field",
]

_SOBOL_BLOCK = 1 << 20   # points reserved per seed
_SOBOL_MAXDIM = 21201    # direction-number table limit


class GenerationStallError(RuntimeError):
    """Acceptance rate collapsed; generation cannot finish."""


class VerificationError(RuntimeError):
    """Stored samples no longer re-render to their stored masks."""


@dataclass(frozen=True)
class GenConfig:
    grid: GridShape = GridShape(10, 10)
    phi: float = math.pi / 3
    raster: RasterConfig = field(default_factory=RasterConfig)
    tau_ov: float = 0.02
    seed: int = 0
    # topology gates on the rasterized silhouette
    min_fg_fraction: float = 0.02
    max_fg_fraction: float = 0.95
    # stall guard
    stall_window: int = 10_000
    stall_rate: float = 0.01

    def config_hash(self) -> str:
        payload = {
            "grid": [self.grid.m, self.grid.n],
            "phi": self.phi,
            "raster": [self.raster.width, self.raster.height, self.raster.fill_fraction],
            "tau_ov": self.tau_ov,
            "seed": self.seed,
            "fg": [self.min_fg_fraction, self.max_fg_fraction],
        }
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class SplitManifest:
    splits: dict[str, list[str]]
    counts: dict[str, int]
    config_hash: str
    phi: float
    grid: list[int]
    seed: int
    acceptance: dict[str, float] = field(default_factory=dict)
    sobol_seeds: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SplitManifest":
        return cls(**json.loads(text))


_SPLIT_SEED_OFFSET = {"train": 0, "val": 1, "test": 2}


def sobol_stream(dim: int, count: int, seed: int) -> np.ndarray:
    """Unscrambled base-2 Sobol points mapped to [-1, 1]^dim.

    Deterministic: the same seed always yields the same stream. Each seed
    addresses a disjoint block of the underlying sequence, so different seeds
    give independent streams. The initial all-zeros point of the raw sequence
    is not part of any stream; the first point of seed 0 is the all-0.5 point
    (0.0 after mapping).
    """
    if dim < 1 or dim > _SOBOL_MAXDIM:
        raise ValueError(f"sobol dimension {dim} outside supported range 1..{_SOBOL_MAXDIM}")
    if count < 0:
        raise ValueError("count must be nonnegative")
    if count > _SOBOL_BLOCK:
        raise ValueError(f"at most {_SOBOL_BLOCK} points per stream")
    if seed < 0 or seed >= (1 << 30) // _SOBOL_BLOCK:
        raise ValueError("seed outside the addressable block range")
    eng = qmc.Sobol(d=dim, scramble=False)
    eng.fast_forward(1 + seed * _SOBOL_BLOCK)
    if count == 0:
        return np.empty((0, dim))
    return 2.0 * eng.random(count) - 1.0


def z_to_ratio(z: np.ndarray) -> RatioField:
    """Map log10-space entries in [-1, 1] to ratios in [1/10, 10]."""
    z = np.asarray(z, dtype=float)
    if np.any(z < -1.0) or np.any(z > 1.0) or not np.all(np.isfinite(z)):
        raise ValueError("log-ratio entries must lie in [-1, 1]")
    return RatioField(10.0 ** z)


def sample_passes_filters(layout, mask: SilhouetteMask, cfg: GenConfig) -> bool:
    """The full candidate filter: geometric feasibility plus mask topology.

    Topology gates: foreground fraction within bounds and a single
    8-connected component (deployed voids touch at shared corner vertices,
    which rasterize to diagonal pixel adjacency).
    """
    if not check_feasible(layout, cfg.tau_ov):
        return False
    frac = mask.pixels.mean()
    if frac < cfg.min_fg_fraction or frac > cfg.max_fg_fraction:
        return False
    _, n = ndimage.label(mask.pixels, structure=np.ones((3, 3), dtype=bool))
    return n == 1


def save_field(x: RatioField, path: Path) -> None:
    rows = [" ".join(f"{v:.17g}" for v in row) for row in x.values]
    Path(path).write_text("\n".join(rows) + "\n")


def load_field(path: Path) -> RatioField:
    rows = [
        [float(tok) for tok in line.split()]
        for line in Path(path).read_text().strip().splitlines()
    ]
    return RatioField(np.array(rows, dtype=float))


def generate_split(
    count: int,
    cfg: GenConfig,
    out_dir: Path,
    split: str = "train",
) -> SplitManifest:
    """Draw Sobol candidates, keep the feasible ones, write them to disk.

    A candidate is discarded on decode failure, any invalid void, overlap
    ratio above the threshold, or a failed mask topology check. Raises
    GenerationStallError if acceptance over a sliding window collapses.
    """
    if split not in _SPLIT_SEED_OFFSET:
        raise ValueError(f"unknown split {split!r}")
    out_dir = Path(out_dir)
    split_dir = out_dir / split
    split_dir.mkdir(parents=True, exist_ok=True)
    stream_seed = cfg.seed * 4 + _SPLIT_SEED_OFFSET[split]
    dim = cfg.grid.cells
    anchors = default_anchors(cfg.grid, cfg.phi)

    ids: list[str] = []
    accepted = 0
    drawn = 0
    window_hits: list[bool] = []
    block = 256
    while accepted < count:
        z = sobol_stream(dim, drawn + block, stream_seed)[drawn:]
        for k in range(block):
            sobol_index = drawn
            drawn += 1
            ok = False
            x = z_to_ratio(z[k].reshape(cfg.grid.m, cfg.grid.n))
            layout = march_decode(x, cfg.phi, anchors)
            if not layout.feasibility.decode_failed:
                mask = simulate(layout, cfg.raster)
                if sample_passes_filters(layout, mask, cfg):
                    sid = f"{split}-{sobol_index:06d}"
                    save_field(x, split_dir / f"x_{sobol_index:06d}.txt")
                    write_pgm(mask, split_dir / f"y_{sobol_index:06d}.pgm")
                    ids.append(sid)
                    accepted += 1
                    ok = True
            window_hits.append(ok)
            if len(window_hits) > cfg.stall_window:
                window_hits.pop(0)
            if accepted >= count:
                break
        if (
            len(window_hits) >= cfg.stall_window
            and sum(window_hits) / len(window_hits) < cfg.stall_rate
        ):
            raise GenerationStallError(
                f"acceptance below {cfg.stall_rate:.0%} over the last "
                f"{cfg.stall_window} candidates"
            )

    acceptance = accepted / drawn if drawn else 0.0
    manifest = _update_manifest(out_dir, cfg, split, ids, acceptance, stream_seed)
    return manifest


def _update_manifest(
    out_dir: Path,
    cfg: GenConfig,
    split: str,
    ids: list[str],
    acceptance: float,
    stream_seed: int,
) -> SplitManifest:
    path = out_dir / "manifest.json"
    if path.exists():
        manifest = SplitManifest.from_json(path.read_text())
        if manifest.config_hash != cfg.config_hash():
            raise ValueError(
                "existing dataset was generated with a different configuration"
            )
    else:
        manifest = SplitManifest(
            splits={},
            counts={},
            config_hash=cfg.config_hash(),
            phi=cfg.phi,
            grid=[cfg.grid.m, cfg.grid.n],
            seed=cfg.seed,
        )
    manifest.splits[split] = ids
    manifest.counts[split] = len(ids)
    manifest.acceptance[split] = acceptance
    manifest.sobol_seeds[split] = stream_seed
    path.write_text(manifest.to_json())
    return manifest


def verify_dataset(
    root: Path,
    sample_count: int = 128,
    rng_seed: int = 0,
) -> dict[str, float]:
    """Re-render random stored samples and demand raw-mask IoU >= 0.999.

    Returns minimum IoU per split; raises VerificationError listing the
    offending sample ids otherwise.
    """
    root = Path(root)
    manifest = SplitManifest.from_json((root / "manifest.json").read_text())
    grid = GridShape(*manifest.grid)
    anchors = default_anchors(grid, manifest.phi)
    rng = np.random.default_rng(rng_seed)
    report: dict[str, float] = {}
    bad: list[str] = []
    for split, ids in manifest.splits.items():
        if not ids:
            report[split] = float("nan")
            continue
        pick = rng.choice(len(ids), size=min(sample_count, len(ids)), replace=False)
        worst = 1.0
        for k in pick:
            sid = ids[int(k)]
            index = sid.split("-")[-1]
            x = load_field(root / split / f"x_{index}.txt")
            stored = read_pgm(root / split / f"y_{index}.pgm")
            layout = march_decode(x, manifest.phi, anchors)
            if layout.feasibility.decode_failed:
                bad.append(sid)
                worst = 0.0
                continue
            fresh = simulate(layout, RasterConfig(stored.width, stored.height))
            v = mask_iou(fresh, stored)
            worst = min(worst, v)
            if v < 0.999:
                bad.append(sid)
        report[split] = worst
    if bad:
        raise VerificationError(f"re-render IoU below 0.999 for: {', '.join(bad)}")
    return report
