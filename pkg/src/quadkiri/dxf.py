"""Cutter-ready DXF export: void outlines as cut paths, connector markers at
shared vertices, and local trimming of cuts around each connector.

The writer emits a minimal R12 ASCII dialect (POLYLINE/VERTEX/SEQEND on layer
CUT, CIRCLE on layer CONNECTOR) with fixed 6-decimal coordinates, so output
is deterministic and round-trips exactly at the 1e-6 mm level. The matching
reader exists for verification and refuses anything it did not write.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Layout

__all__ = [
    "ConnectorConfig",
    "CutPlan",
    "DxfParseError",
    "UnsupportedEntityError",
    "plan_cuts",
    "write_dxf",
    "read_dxf",
]


class DxfParseError(ValueError):
    """Malformed DXF input; carries the offending line number."""


class UnsupportedEntityError(DxfParseError):
    """The reader met an entity type outside the minimal written dialect."""


@dataclass(frozen=True)
class ConnectorConfig:
    radius: float | None = None        # model units; None -> fraction of min edge
    radius_fraction: float = 0.02      # default: 2% of the shortest void edge


@dataclass
class CutPlan:
    """Cut paths (model units), connector markers and a trim audit list."""

    paths: list[np.ndarray]            # each (k, 2); see `closed`
    closed: list[bool]
    connectors: list[tuple[np.ndarray, float]]
    trimmed_segments: list[np.ndarray] = field(default_factory=list)


def _shortest_edge(layout: Layout) -> float:
    q = layout.quads
    edges = np.stack([
        q[..., 1, :] - q[..., 0, :],
        q[..., 2, :] - q[..., 1, :],
        q[..., 3, :] - q[..., 2, :],
        q[..., 0, :] - q[..., 3, :],
    ])
    lengths = np.hypot(edges[..., 0], edges[..., 1])
    return float(np.nanmin(lengths))


def _shared_vertices(layout: Layout) -> list[np.ndarray]:
    """Vertices referenced by two or more voids; exact coordinate match.

    Shared seeds are copied bitwise by the decoder, so no tolerance is needed.
    """
    counts: dict[tuple[float, float], int] = {}
    for q in layout.quads.reshape(-1, 4, 2):
        for k in range(4):
            key = (float(q[k, 0]), float(q[k, 1]))
            counts[key] = counts.get(key, 0) + 1
    out = [np.array(key) for key, c in sorted(counts.items()) if c >= 2]
    return out


def _circle_hits(a: np.ndarray, b: np.ndarray, center: np.ndarray, r: float):
    """Parameter interval of segment a->b lying inside the disk, or None."""
    d = b - a
    f = a - center
    A = float(d @ d)
    if A == 0.0:
        return None
    B = 2.0 * float(f @ d)
    C = float(f @ f) - r * r
    disc = B * B - 4.0 * A * C
    if disc <= 0.0:
        return None
    root = math.sqrt(disc)
    t0 = (-B - root) / (2.0 * A)
    t1 = (-B + root) / (2.0 * A)
    lo, hi = max(t0, 0.0), min(t1, 1.0)
    if lo >= hi:
        return None
    return lo, hi


def plan_cuts(layout: Layout, connector_cfg: ConnectorConfig | None = None) -> CutPlan:
    """One closed outline per void, markers at shared vertices, cuts trimmed
    wherever they pass within the connector radius of a marker."""
    if layout.feasibility.decode_failed:
        raise ValueError("cannot plan cuts for a failed decode")
    cfg = connector_cfg or ConnectorConfig()
    min_edge = _shortest_edge(layout)
    r_c = cfg.radius if cfg.radius is not None else cfg.radius_fraction * min_edge
    if r_c < 0:
        raise ValueError("connector radius must be nonnegative")
    if r_c > 0.5 * min_edge:
        raise ValueError(
            f"connector radius {r_c:.4g} exceeds half the shortest void edge "
            f"({0.5 * min_edge:.4g}); cuts would lose their meaning"
        )
    centers = _shared_vertices(layout) if r_c > 0 else []
    if r_c > 0:
        shared_all = _shared_vertices(layout)
        for i in range(len(shared_all)):
            for j in range(i + 1, len(shared_all)):
                if np.hypot(*(shared_all[i] - shared_all[j])) < 2.0 * r_c:
                    raise ValueError(
                        "connector disks overlap; reduce the connector radius"
                    )
        centers = shared_all
    connectors = [(c, r_c) for c in centers]

    paths: list[np.ndarray] = []
    closed: list[bool] = []
    trimmed: list[np.ndarray] = []
    for q in layout.quads.reshape(-1, 4, 2):
        outline = np.vstack([q, q[:1]])
        if r_c <= 0 or not connectors:
            paths.append(q.copy())
            closed.append(True)
            continue
        pieces, removed = _trim_outline(outline, centers, r_c)
        trimmed.extend(removed)
        if len(pieces) == 1 and np.allclose(pieces[0][0], pieces[0][-1]):
            paths.append(pieces[0][:-1])
            closed.append(True)
        else:
            for p in pieces:
                paths.append(p)
                closed.append(False)
    return CutPlan(paths=paths, closed=closed, connectors=connectors,
                   trimmed_segments=trimmed)


def _trim_outline(outline: np.ndarray, centers: list[np.ndarray], r_c: float):
    """Split a closed outline into kept sub-polylines, removing disk interiors."""
    kept_runs: list[list[np.ndarray]] = []
    removed: list[np.ndarray] = []
    run: list[np.ndarray] = []

    def close_run() -> None:
        nonlocal run
        if len(run) >= 2:
            kept_runs.append(run)
        run = []

    for k in range(len(outline) - 1):
        a, b = outline[k], outline[k + 1]
        intervals = []
        for c in centers:
            hit = _circle_hits(a, b, c, r_c)
            if hit is not None:
                intervals.append(hit)
        intervals.sort()
        merged: list[list[float]] = []
        for lo, hi in intervals:
            if merged and lo <= merged[-1][1]:
                merged[-1][1] = max(merged[-1][1], hi)
            else:
                merged.append([lo, hi])
        t = 0.0
        d = b - a
        for lo, hi in merged:
            if lo > t:
                seg_start = a + t * d
                seg_end = a + lo * d
                if not run:
                    run = [seg_start]
                run.append(seg_end)
                close_run()
            else:
                close_run()
            removed.append(np.vstack([a + lo * d, a + hi * d]))
            t = hi
        if t < 1.0:
            start = a + t * d
            if not run:
                run = [start]
            run.append(b.copy())
    close_run()
    # wrap-around: if the outline start was not trimmed, first and last runs join
    if len(kept_runs) >= 2:
        first, last = kept_runs[0], kept_runs[-1]
        if np.allclose(first[0], outline[0]) and np.allclose(last[-1], outline[-1]):
            kept_runs = [last[:-1] + first] + kept_runs[1:-1]
    return [np.vstack(r) for r in kept_runs], removed


def write_dxf(plan: CutPlan, scale_mm: float, path: str | Path) -> None:
    """ASCII R12 subset: $INSUNITS=4 (mm), POLYLINE paths on CUT, CIRCLE
    markers on CONNECTOR, 6-decimal fixed formatting, deterministic order."""
    if scale_mm <= 0:
        raise ValueError("scale must be positive millimeters per model unit")
    lines: list[str] = []
    push = lines.extend
    push(["0", "SECTION", "2", "HEADER"])
    push(["9", "$ACADVER", "1", "AC1009"])
    push(["9", "$INSUNITS", "70", "4"])
    push(["0", "ENDSEC"])
    push(["0", "SECTION", "2", "TABLES", "0", "TABLE", "2", "LAYER", "70", "2"])
    push(["0", "LAYER", "2", "CUT", "70", "0", "62", "1", "6", "CONTINUOUS"])
    push(["0", "LAYER", "2", "CONNECTOR", "70", "0", "62", "3", "6", "CONTINUOUS"])
    push(["0", "ENDTAB", "0", "ENDSEC"])
    push(["0", "SECTION", "2", "ENTITIES"])
    for pts, is_closed in zip(plan.paths, plan.closed):
        push(["0", "POLYLINE", "8", "CUT", "66", "1", "70", "1" if is_closed else "0"])
        for p in pts:
            push([
                "0", "VERTEX", "8", "CUT",
                "10", f"{p[0] * scale_mm:.6f}",
                "20", f"{p[1] * scale_mm:.6f}",
                "30", "0.000000",
            ])
        push(["0", "SEQEND"])
    connectors = sorted(plan.connectors, key=lambda cr: (cr[0][0], cr[0][1]))
    for center, radius in connectors:
        push([
            "0", "CIRCLE", "8", "CONNECTOR",
            "10", f"{center[0] * scale_mm:.6f}",
            "20", f"{center[1] * scale_mm:.6f}",
            "30", "0.000000",
            "40", f"{radius * scale_mm:.6f}",
        ])
    push(["0", "ENDSEC", "0", "EOF"])
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_dxf(path: str | Path) -> CutPlan:
    """Parse a file written by write_dxf back into a CutPlan (mm coordinates).

    Raises DxfParseError with a line number on malformed group codes and
    UnsupportedEntityError on entity types outside the written dialect.
    """
    text = Path(path).read_text(encoding="ascii")
    raw = text.splitlines()
    if len(raw) % 2 != 0:
        raise DxfParseError(f"line {len(raw)}: dangling group code without a value")
    pairs: list[tuple[int, str, int]] = []
    for k in range(0, len(raw), 2):
        try:
            code = int(raw[k].strip())
        except ValueError as exc:
            raise DxfParseError(f"line {k + 1}: bad group code {raw[k]!r}") from exc
        pairs.append((code, raw[k + 1].strip(), k + 1))

    paths: list[np.ndarray] = []
    closed: list[bool] = []
    connectors: list[tuple[np.ndarray, float]] = []
    in_entities = False
    current: list[list[float]] | None = None
    current_closed = False
    circle: dict[str, float] | None = None
    vertex: list[float] | None = None
    saw_eof = False

    def flush_vertex() -> None:
        nonlocal vertex
        if vertex is not None and current is not None:
            current.append(vertex)
        vertex = None

    def flush_circle() -> None:
        nonlocal circle
        if circle is not None:
            connectors.append(
                (np.array([circle.get("x", 0.0), circle.get("y", 0.0)]),
                 circle.get("r", 0.0))
            )
        circle = None

    known = {"POLYLINE", "VERTEX", "SEQEND", "CIRCLE"}
    sections_seen = 0
    for code, value, line_no in pairs:
        if code == 0 and value == "SECTION":
            sections_seen += 1
            continue
        if code == 2 and value == "ENTITIES":
            in_entities = True
            continue
        if code == 0 and value == "ENDSEC":
            in_entities = False
            continue
        if code == 0 and value == "EOF":
            saw_eof = True
            continue
        if not in_entities:
            continue
        if code == 0:
            flush_vertex()
            flush_circle()
            if value == "POLYLINE":
                current = []
                current_closed = False
            elif value == "VERTEX":
                if current is None:
                    raise DxfParseError(f"line {line_no}: VERTEX outside POLYLINE")
                vertex = [0.0, 0.0]
            elif value == "SEQEND":
                if current is not None:
                    paths.append(np.array(current))
                    closed.append(current_closed)
                current = None
            elif value == "CIRCLE":
                circle = {}
            elif value not in known:
                raise UnsupportedEntityError(
                    f"line {line_no}: unsupported entity {value!r}"
                )
            continue
        try:
            num = float(value)
        except ValueError as exc:
            if code in (10, 20, 30, 40, 70):
                raise DxfParseError(f"line {line_no}: bad numeric value {value!r}") from exc
            continue
        if vertex is not None:
            if code == 10:
                vertex[0] = num
            elif code == 20:
                vertex[1] = num
        elif circle is not None:
            if code == 10:
                circle["x"] = num
            elif code == 20:
                circle["y"] = num
            elif code == 40:
                circle["r"] = num
        elif current is not None and code == 70:
            current_closed = bool(int(num) & 1)
    flush_vertex()
    flush_circle()
    if not saw_eof:
        raise DxfParseError(f"line {len(raw)}: missing EOF marker (truncated file)")
    return CutPlan(paths=paths, closed=closed, connectors=connectors)
