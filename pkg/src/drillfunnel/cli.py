"""Command line front end: run presets or config files, write CSV traces and summaries.

Verbs::

    drillfunnel preset l1 --out results/
    drillfunnel run my.yaml --engine both
    drillfunnel validate my.yaml
    drillfunnel sweep 'configs/*.yaml' --out results/

Exit codes: 0 success, 1 invalid config or engine failure, 2 funnel violation.
"""

from __future__ import annotations

import argparse
import csv
import glob
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .config import ExperimentConfig, config_to_dict, load_config, load_preset
from .errors import DrillStringError
from .fdsolver import TRACE_COLUMNS, SimTrace, run_closed_loop
from .monotone import run_implicit

log = logging.getLogger("drillfunnel")

EXIT_OK, EXIT_FAILURE, EXIT_VIOLATION = 0, 1, 2


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    results: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    @property
    def violated(self) -> bool:
        return any(r.violation is not None for r in self.results.values())


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Run the engine(s) selected by ``cfg.engine`` and collect a summary.

    With ``engine="both"`` the implicit run uses the explicit run's step, so
    both traces share a time grid and the reported cross-engine deviation is
    ``max |y_explicit - y_implicit|`` over it.
    """
    out = ExperimentResult(cfg)
    engines = ["explicit", "implicit"] if cfg.engine == "both" else [cfg.engine]
    for name in engines:
        t0 = time.perf_counter()
        if name == "explicit":
            res = run_closed_loop(cfg)
        else:
            dt = out.results["explicit"].dt if "explicit" in out.results else None
            res = run_implicit(cfg, dt=dt)
        out.results[name] = res
        out.summary[name] = {**res.summary, "wall_time_s": time.perf_counter() - t0}
        if res.violation is not None:
            log.error("%s engine: funnel violation at t=%.6g (e=%.6g)", name, res.violation.t, res.violation.e)
    if len(out.results) == 2:
        a, b = out.results["explicit"].raw, out.results["implicit"].raw
        n = min(len(a), len(b))
        out.summary["cross_engine_max_abs_dy"] = float(np.max(np.abs(a.y[:n] - b.y[:n]))) if n else math.nan
    out.summary["theorem_gains"] = cfg.theorem_gains()
    if not out.summary["theorem_gains"]["matches_theorem"]:
        log.info("gains alpha=%g beta=%g differ from the theorem's alpha=%g beta=%g",
                 cfg.funnel.alpha, cfg.funnel.beta,
                 out.summary["theorem_gains"]["alpha_theorem"], out.summary["theorem_gains"]["beta_theorem"])
    return out


def _fmt(x: float) -> str:
    return repr(float(x))


def write_csv(trace: SimTrace, path) -> Path:
    """Write ``trace`` with round-trip exact floats; an empty trace gives a header-only file."""
    path = Path(path)
    cols = trace.columns()
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for i in range(len(trace)):
            writer.writerow([_fmt(cols[c][i]) for c in TRACE_COLUMNS])
    return path


def read_csv(path) -> SimTrace:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header != list(TRACE_COLUMNS):
        raise DrillStringError(f"{path}: unexpected header {header}")
    data = np.array([[float(v) for v in r] for r in body], dtype=float).reshape(len(body), len(header))
    return SimTrace(**{c: data[:, j].copy() for j, c in enumerate(header)})


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"not serializable: {type(obj).__name__}")


def save_outputs(result: ExperimentResult, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = result.config.name
    written = []
    for engine, res in result.results.items():
        written.append(write_csv(res.trace, out_dir / f"{stem}_{engine}.csv"))
    cfg_path = out_dir / f"{stem}_config.yaml"
    cfg_path.write_text(yaml.safe_dump(config_to_dict(result.config), sort_keys=False))
    sum_path = out_dir / f"{stem}_summary.json"
    sum_path.write_text(json.dumps(result.summary, indent=2, sort_keys=True, default=_json_default) + "\n")
    return written + [cfg_path, sum_path]


def _report(result: ExperimentResult, stream) -> None:
    cfg = result.config
    print(f"[{cfg.name}] ell={cfg.params.ell} N={cfg.n_points} T={cfg.time.t_end} "
          f"e_mode={cfg.e_mode} alpha={cfg.funnel.alpha} beta={cfg.funnel.beta}", file=stream)
    for engine, res in result.results.items():
        s = res.summary
        status = "ok" if res.violation is None else f"FUNNEL VIOLATION at t={res.violation.t:.6g}"
        print(f"  {engine:9s} {status}: min margin {s['min_funnel_margin']:.4g}, max|e| {s['max_abs_e']:.4g}, "
              f"max|v| {s['max_abs_v']:.4g}, max|u| {s['max_abs_u']:.4g}, max|I| {s['max_abs_I']:.4g}, "
              f"|y-yref|(T) {s['terminal_tracking_error']:.3g}, dt {res.dt:.4g}", file=stream)
    if "cross_engine_max_abs_dy" in result.summary:
        print(f"  cross-engine max|dy| {result.summary['cross_engine_max_abs_dy']:.4g}", file=stream)


def _apply_flags(cfg: ExperimentConfig, args) -> ExperimentConfig:
    changes = {}
    if args.engine:
        changes["engine"] = args.engine
    if args.e_mode:
        changes["e_mode"] = args.e_mode
    if args.seed is not None:
        changes["seed"] = args.seed
    return replace(cfg, **changes) if changes else cfg


def _execute(cfg: ExperimentConfig, args) -> int:
    cfg = _apply_flags(cfg, args)
    print(yaml.safe_dump({"config": config_to_dict(cfg)}, sort_keys=False), end="")
    result = run_experiment(cfg)
    _report(result, sys.stdout)
    if args.out:
        for p in save_outputs(result, args.out):
            log.info("wrote %s", p)
    return EXIT_VIOLATION if result.violated else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drillfunnel", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="verb", required=True)

    def run_flags(p):
        p.add_argument("--engine", choices=["explicit", "implicit", "both"])
        p.add_argument("--e-mode", dest="e_mode", choices=["direct", "measured"])
        p.add_argument("--out", help="directory for CSV traces, config echo and summary")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("run", help="run a YAML config")
    p.add_argument("config")
    run_flags(p)
    p = sub.add_parser("preset", help="run a built-in experiment")
    p.add_argument("name", choices=["l1", "l10"])
    run_flags(p)
    p = sub.add_parser("validate", help="check a config and print it fully resolved")
    p.add_argument("config")
    p = sub.add_parser("sweep", help="run every config matching a glob")
    p.add_argument("pattern")
    run_flags(p)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.verb == "validate":
            cfg = load_config(args.config)
            print(yaml.safe_dump(config_to_dict(cfg), sort_keys=False), end="")
            return EXIT_OK
        if args.verb == "preset":
            return _execute(load_preset(args.name), args)
        if args.verb == "run":
            return _execute(load_config(args.config), args)
        paths = sorted(glob.glob(args.pattern))
        if not paths:
            print(f"no configs match {args.pattern!r}", file=sys.stderr)
            return EXIT_FAILURE
        codes = []
        for path in paths:
            codes.append(_execute(load_config(path), args))
        return max(codes)
    except DrillStringError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
