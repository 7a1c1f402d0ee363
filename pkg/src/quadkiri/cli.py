"""Command-line entry point: dataset generation, inverse solving, evaluation,
GRPO demo training, benchmarking, DXF export.

Exit codes: 0 success, 2 configuration error, 3 generation stall,
4 verification failure, 5 infeasible input design.

Every subcommand echoes its effective configuration as JSON next to its
outputs, so a run is reproducible from the echo file alone. Report paths
write figures alongside the delimited output.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (
    GenConfig,
    GenerationStallError,
    SplitManifest,
    VerificationError,
    generate_split,
    load_field,
    save_field,
    verify_dataset,
)
from .dxf import ConnectorConfig, plan_cuts, write_dxf
from .genmodel import GrpoEnv, MeanFieldPolicy, run_grpo_training
from .geometry import GridShape, check_feasible, default_anchors, march_decode
from .metrics import EvalResult, MetricError, RewardConfig, is_success, reward, siou, total_variation
from .raster import RasterConfig, read_pgm, simulate
from .solvers import InverseObjective, SOLVER_IDS, StopRule, best_of_k, grid_sweep_bench
from .targets import BUILTIN_TARGETS, builtin_target

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STALL = 3
EXIT_VERIFY = 4
EXIT_INFEASIBLE = 5


class ConfigError(ValueError):
    pass


class InfeasibleDesignError(RuntimeError):
    pass


def _parse_grid(text: str) -> GridShape:
    if "x" in text:
        m, n = text.lower().split("x")
        return GridShape(int(m), int(n))
    g = int(text)
    return GridShape(g, g)


def _echo_config(path: Path, command: str, params: dict) -> None:
    payload = {"command": command, "version": __version__, "params": params}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=str))


def _load_config_file(path: str | None) -> dict[str, str]:
    """Optional key=value config file; flags override its entries."""
    if not path:
        return {}
    entries: dict[str, str] = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"bad config line (need key=value): {line!r}")
        key, value = line.split("=", 1)
        entries[key.strip().replace("-", "_")] = value.strip()
    return entries


def _target_mask(spec: str):
    if spec in BUILTIN_TARGETS:
        return builtin_target(spec)
    path = Path(spec)
    if not path.exists():
        raise ConfigError(f"target {spec!r} is neither a builtin name nor a file")
    return read_pgm(path)


# ---------------------------------------------------------------- gen

def _cmd_gen(args) -> int:
    if args.out is None:
        raise ConfigError("--out is required")
    grid = _parse_grid(args.grid)
    count = args.count
    if count is None:
        count = {"train": 200, "val": 20, "test": 20}[args.split] if args.profile == "desk" \
            else {"train": 5000, "val": 500, "test": 500}[args.split]
    cfg = GenConfig(grid=grid, phi=args.phi, seed=args.seed,
                    raster=RasterConfig(args.raster, args.raster))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = generate_split(count, cfg, out, split=args.split)
    acc = manifest.acceptance[args.split]
    print(f"generated {count} samples for split {args.split!r} "
          f"(acceptance rate {acc:.1%})")
    report = verify_dataset(out, sample_count=args.verify_samples)
    for split, worst in report.items():
        print(f"verify {split}: min re-render IoU = {worst:.6f}")
    _echo_config(out / f"config_gen_{args.split}.json", "gen", {
        "count": count, "split": args.split, "seed": args.seed, "phi": args.phi,
        "grid": f"{grid.m}x{grid.n}", "raster": args.raster, "out": str(out),
        "tau_ov": cfg.tau_ov, "config_hash": cfg.config_hash(),
    })
    return EXIT_OK


# ---------------------------------------------------------------- solve

def _cmd_solve(args) -> int:
    if args.dataset is None or args.out is None:
        raise ConfigError("--dataset and --out are required")
    root = Path(args.dataset)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise ConfigError(f"no manifest at {manifest_path}")
    manifest = SplitManifest.from_json(manifest_path.read_text())
    if args.split not in manifest.splits:
        raise ConfigError(f"split {args.split!r} not present in the dataset")
    ids = manifest.splits[args.split]
    if args.targets:
        wanted = set(args.targets.split(","))
        ids = [i for i in ids if i in wanted or i.split("-")[-1] in wanted]
        if not ids:
            raise ConfigError("no requested target ids found in the split")
    limit = args.limit if args.limit else (20 if args.profile == "desk" else len(ids))
    ids = ids[:limit]
    grid = GridShape(*manifest.grid)
    stop = StopRule(max_evals=args.max_evals)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    records = []
    for idx, sid in enumerate(ids):
        index = sid.split("-")[-1]
        target = read_pgm(root / args.split / f"y_{index}.pgm")

        def make_obj(t=target):
            return InverseObjective(t, grid, manifest.phi)

        seeds = [args.seed + 100 * idx + j for j in range(args.k)]
        result = best_of_k(args.method, make_obj, args.k, seeds, stop)
        run = result.best
        rec = {
            "method": args.method,
            "seed": run.seed,
            "grid": f"{grid.m}x{grid.n}",
            "target_id": sid,
            "siou": run.best_siou,
            "success": bool(run.best_siou >= 0.85 and run.best_x is not None),
            "evals": result.total_forward,
            "evals_total": result.total_evals,
            "seconds": sum(r.seconds for r in result.runs),
            "stop_reason": run.stop_reason,
        }
        records.append(rec)
        print(f"{sid}: sIoU={rec['siou']:.4f} success={rec['success']} "
              f"#F={rec['evals']} ({rec['seconds']:.1f}s)")

    jsonl = out / f"solve_{args.method}.jsonl"
    with open(jsonl, "a") as f:
        for rec in records:
            f.write(json.dumps(rec) + "\n")
    if records:
        mean_siou = float(np.mean([r["siou"] for r in records]))
        success_rate = float(np.mean([r["success"] for r in records]))
        mean_f = float(np.mean([r["evals"] for r in records]))
        print(f"split mean: sIoU={mean_siou:.4f}  "
              f"p_succ={success_rate:.1%}  mean #F={mean_f:.1f}")
    from .plots import solve_figure
    solve_figure(records, out / f"solve_{args.method}.png")
    _echo_config(out / f"config_solve_{args.method}.json", "solve", vars(args))
    return EXIT_OK


# ---------------------------------------------------------------- eval

def _cmd_eval(args) -> int:
    if args.target is None:
        raise ConfigError("--target is required")
    target = _target_mask(args.target)
    record: dict = {}
    if args.field:
        x = load_field(Path(args.field))
        grid = x.shape
        layout = march_decode(x, args.phi, default_anchors(grid, args.phi))
        feas = layout.feasibility
        siou_val = None
        if not feas.decode_failed:
            pred = simulate(layout, RasterConfig(target.width, target.height))
            try:
                siou_val = siou(pred, target)
            except MetricError:
                siou_val = None
        cfg = RewardConfig()
        r = reward(x, feas, siou_val, cfg)
        result = EvalResult(siou=siou_val, tv=total_variation(x), reward=r,
                            success=False, feasibility=feas)
        record = {
            "siou": siou_val,
            "tv": result.tv if args.report_tv else None,
            "reward": r,
            "success": is_success(result, cfg),
            "n_inv": feas.invalid_count,
            "r_ov": feas.overlap_ratio,
            "decode_failed": feas.decode_failed,
        }
    elif args.pred:
        pred = read_pgm(args.pred)
        if (pred.width, pred.height) != (target.width, target.height):
            raise ConfigError(
                f"resolution mismatch: {pred.width}x{pred.height} vs "
                f"{target.width}x{target.height}"
            )
        record = {"siou": siou(pred, target)}
    else:
        raise ConfigError("provide --pred (mask) or --field (stored design)")
    line = json.dumps({k: v for k, v in record.items() if v is not None})
    print(line)
    if args.out:
        with open(args.out, "a") as f:
            f.write(line + "\n")
    return EXIT_OK


# ---------------------------------------------------------------- grpo

def _cmd_grpo(args) -> int:
    if args.target is None or args.out is None:
        raise ConfigError("--target and --out are required")
    mode_map = {
        "accuracy": RewardConfig(mode="accuracy", lambda_tv=0.0),
        "regularity": RewardConfig(mode="regularity_only", lambda_tv=args.lambda_tv),
        "hybrid": RewardConfig(mode="hybrid"),
    }
    if args.mode not in mode_map:
        raise ConfigError(f"unknown mode {args.mode!r}")
    calls = args.calls if args.calls else (2000 if args.profile == "desk" else 10000)
    if calls % args.group != 0:
        raise ConfigError("--calls must be a multiple of --group")
    grid = _parse_grid(args.grid)
    target = _target_mask(args.target)
    env = GrpoEnv.create(target, grid, args.phi, reward_cfg=mode_map[args.mode])
    rng = np.random.default_rng(args.seed)
    if args.init == "zeros":
        mean_z = np.zeros((grid.m, grid.n))
    else:
        mean_z = rng.uniform(-0.5, 0.5, (grid.m, grid.n))
    policy = MeanFieldPolicy(mean_z, noise_scale=args.noise, learning_rate=args.lr)
    policy, trace = run_grpo_training(policy, env, calls, group_size=args.group,
                                      temperature=args.temp, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trace_dicts = [asdict(t) for t in trace]
    with open(out / "grpo_trace.jsonl", "w") as f:
        for t in trace_dicts:
            f.write(json.dumps(t) + "\n")
    from .dataset import save_field
    from .geometry import RatioField
    save_field(RatioField(10.0 ** np.clip(policy.mean_z, -1, 1)), out / "policy_ratio.txt")
    np.savetxt(out / "policy_mean_z.txt", policy.mean_z, fmt="%.17g")
    from .plots import grpo_figure
    grpo_figure(trace_dicts, out / "grpo_trace.png")
    first = trace_dicts[: max(len(trace_dicts) // 10, 1)]
    last = trace_dicts[-max(len(trace_dicts) // 10, 1):]
    print(f"groups: {len(trace)}  calls: {trace[-1].call_count}")
    print(f"mean reward first decile {np.mean([t['mean_reward'] for t in first]):.4f} "
          f"-> last decile {np.mean([t['mean_reward'] for t in last]):.4f}")
    _echo_config(out / "config_grpo.json", "grpo", vars(args))
    return EXIT_OK


# ---------------------------------------------------------------- bench

def _cmd_bench(args) -> int:
    if args.out is None:
        raise ConfigError("--out is required")
    grids = [int(g) for g in args.grids.split(",")]
    for g in grids:
        if not (6 <= g <= 24):
            raise ConfigError(f"grid {g} outside the supported range 6..24")
    methods = args.methods.split(",")
    for m in methods:
        if m not in SOLVER_IDS:
            raise ConfigError(f"unknown method {m!r}")
    names = args.targets.split(",")
    targets = {name: _target_mask(name) for name in names}
    stop = StopRule(max_evals=args.max_evals)
    rows = grid_sweep_bench(grids, targets, methods, stop, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "bench.csv"
    header = "run_id,grid,method,target,seconds,evals\n"
    run_id = 0
    if csv_path.exists():
        lines = csv_path.read_text().strip().splitlines()[1:]
        if lines:
            run_id = max(int(line.split(",")[0]) for line in lines) + 1
    else:
        csv_path.write_text(header)
    with open(csv_path, "a") as f:
        for r in rows:
            f.write(f"{run_id},{r['grid']},{r['method']},{r['target']},"
                    f"{r['seconds']:.4f},{r['evals']}\n")
    from .plots import bench_figure
    bench_figure(rows, out / "bench.png")
    for r in rows:
        print(f"grid={r['grid']:>2} {r['method']:>7} {r['target']:>8}: "
              f"{r['seconds']:7.2f}s  #F={r['evals']}")
    _echo_config(out / "config_bench.json", "bench", vars(args))
    return EXIT_OK


# ---------------------------------------------------------------- export

def _cmd_export(args) -> int:
    if args.field is None or args.out is None:
        raise ConfigError("--field and --out are required")
    x = load_field(Path(args.field))
    layout = march_decode(x, args.phi, default_anchors(x.shape, args.phi))
    if not check_feasible(layout, args.tau_ov):
        f = layout.feasibility
        print(
            f"refusing export: infeasible decode "
            f"(failed={f.decode_failed}, invalid={f.invalid_count}, "
            f"overlap={f.overlap_ratio:.4f} > {args.tau_ov})",
            file=sys.stderr,
        )
        raise InfeasibleDesignError
    cfg = ConnectorConfig(radius=args.connector_radius)
    plan = plan_cuts(layout, cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dxf(plan, args.scale_mm, out)
    print(f"wrote {out}: {len(plan.paths)} cut paths, "
          f"{len(plan.connectors)} connectors")
    _echo_config(out.with_suffix(out.suffix + ".config.json"), "export", vars(args))
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="quadkiri",
        description="Inverse design of parallelogram quad kirigami",
    )
    p.add_argument("--version", action="version", version=f"quadkiri {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="optional key=value config file")
        sp.add_argument("--profile", choices=["desk", "paper"], default="desk")
        sp.add_argument("--seed", type=int, default=0)

    g = sub.add_parser("gen", help="generate a dataset split")
    common(g)
    g.add_argument("--count", type=int, default=None)
    g.add_argument("--split", choices=["train", "val", "test"], default="train")
    g.add_argument("--phi", type=float, default=math.pi / 3)
    g.add_argument("--grid", default="10x10")
    g.add_argument("--raster", type=int, default=128)
    g.add_argument("--verify-samples", type=int, default=128)
    g.add_argument("--out")
    g.set_defaults(func=_cmd_gen)

    s = sub.add_parser("solve", help="solver-based inverse design over a split")
    common(s)
    s.add_argument("--method", choices=list(SOLVER_IDS), default="cmaes")
    s.add_argument("--k", type=int, default=1)
    s.add_argument("--dataset")
    s.add_argument("--split", default="test")
    s.add_argument("--targets", help="comma-separated sample ids (default: all)")
    s.add_argument("--limit", type=int, default=None)
    s.add_argument("--max-evals", type=int, default=1000)
    s.add_argument("--out")
    s.set_defaults(func=_cmd_solve)

    e = sub.add_parser("eval", help="score a stored mask or design field")
    common(e)
    e.add_argument("--pred", help="predicted silhouette (PGM)")
    e.add_argument("--field", help="stored ratio-field text file")
    e.add_argument("--target", help="target mask path or builtin name")
    e.add_argument("--phi", type=float, default=math.pi / 3)
    e.add_argument("--report-tv", action="store_true")
    e.add_argument("--out")
    e.set_defaults(func=_cmd_eval)

    r = sub.add_parser("grpo", help="preference-align the reference policy")
    common(r)
    r.add_argument("--mode", choices=["accuracy", "regularity", "hybrid"],
                   default="accuracy")
    r.add_argument("--calls", type=int, default=None)
    r.add_argument("--group", type=int, default=4)
    r.add_argument("--temp", type=float, default=0.2)
    r.add_argument("--lambda-tv", type=float, default=1.0)
    r.add_argument("--target", help="target mask path or builtin name")
    r.add_argument("--grid", default="10x10")
    r.add_argument("--phi", type=float, default=math.pi / 3)
    r.add_argument("--lr", type=float, default=0.3)
    r.add_argument("--noise", type=float, default=0.15)
    r.add_argument("--init", choices=["zeros", "random"], default="random")
    r.add_argument("--out")
    r.set_defaults(func=_cmd_grpo)

    b = sub.add_parser("bench", help="grid-size timing sweep")
    common(b)
    b.add_argument("--grids", default="6,12,18,24")
    b.add_argument("--methods", default=",".join(SOLVER_IDS))
    b.add_argument("--targets", default="heart,circle,hexagon")
    b.add_argument("--max-evals", type=int, default=1000)
    b.add_argument("--out")
    b.set_defaults(func=_cmd_bench)

    x = sub.add_parser("export", help="write a cutter-ready DXF")
    common(x)
    x.add_argument("--field", help="stored ratio-field text file")
    x.add_argument("--phi", type=float, default=math.pi / 3)
    x.add_argument("--scale-mm", type=float, default=10.0)
    x.add_argument("--connector-radius", type=float, default=None,
                   help="model units; 0 disables trimming")
    x.add_argument("--tau-ov", type=float, default=0.02)
    x.add_argument("--out")
    x.set_defaults(func=_cmd_export)
    return p


def _expand_config(argv: list[str]) -> list[str]:
    """Turn `--config FILE` entries into flags placed before the explicit
    ones, so command-line flags override the file (argparse last-wins)."""
    if "--config" not in argv:
        return argv
    i = argv.index("--config")
    entries = _load_config_file(argv[i + 1])
    extra: list[str] = []
    for key, value in entries.items():
        flag = f"--{key.replace('_', '-')}"
        if value.lower() in ("true", "false", "yes", "no"):
            if value.lower() in ("true", "yes"):
                extra.append(flag)
        else:
            extra.extend([flag, value])
    rest = argv[:i] + argv[i + 2 :]
    return rest[:1] + extra + rest[1:]


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        argv = _expand_config(argv)
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else 0
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GenerationStallError as exc:
        print(f"error: generation stalled: {exc}", file=sys.stderr)
        return EXIT_STALL
    except VerificationError as exc:
        print(f"error: verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except InfeasibleDesignError:
        return EXIT_INFEASIBLE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
