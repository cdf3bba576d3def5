"""Command-line front end.

Subcommands:
    generate      write a synthetic benchmark stream and its labels as CSV
    run           replay CSV streams through the detector and write score CSVs
    eval          NAB evaluation of a score CSV against a label file
    suggest-rank  hard-threshold rank suggestion for an embedded window

Run settings come from a flat ``key = value`` config file (section ``[run]``)
and are overridden by flags. Every run writes the resolved configuration as
JSON next to its scores.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime
from pathlib import Path
from typing import List, Optional

import numpy as np

from .datagen import StepsSpec, TwoTankSpec, gen_steps, simulate_two_tanks
from .engine import CpdConfig, CpdDmd
from .errors import ConfigError, CpdError, DataError, NumericalError, StateError
from .evaluation import (PROFILES, default_window, nab_scores, sweep_threshold,
                         write_results)
from .rank import suggest_rank
from .stream import HankelConfig, RawBatch, WindowLayout, hankelize, polynomial_lift

log = logging.getLogger("dmdcpd")

OUTPUT_ENV = "DMDCPD_OUTPUT_DIR"
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4
SCORE_HEADER = ["k", "timestamp", "E_B", "E_T", "Q_ratio", "Q_diff", "alarm"]


@dataclass
class RunConfig:
    """Everything a replay needs; mirrors the ``[run]`` config section."""

    inputs: List[str] = field(default_factory=list)
    state_cols: List[str] = field(default_factory=list)
    control_cols: List[str] = field(default_factory=list)
    timestamp_col: str = "timestamp"
    a: int = 100
    b: int = 0
    c: int = 100
    d: int = 300
    h: int = 0
    hd: int = 1
    control_h: Optional[int] = None
    control_hd: Optional[int] = None
    p: int = 2
    q: int = 0
    threshold: float = 0.0
    score_mode: str = "both"
    rho: float = 1e4
    poly_degree: int = 1
    min_learn: Optional[int] = None
    batch_size: int = 1
    output: Optional[str] = None
    jobs: int = 1
    seed: int = 0

    def engine_config(self) -> CpdConfig:
        ctrl = None
        if self.control_h is not None or self.control_hd is not None:
            ctrl = HankelConfig(self.control_h or 0, self.control_hd or 1)
        return CpdConfig(
            layout=WindowLayout(self.a, self.b, self.c, self.d),
            hankel=HankelConfig(self.h, self.hd), control_hankel=ctrl,
            p=self.p, q=self.q, threshold=self.threshold, score_mode=self.score_mode,
            rho=self.rho, min_learn=self.min_learn)


_LIST_KEYS = {"inputs", "state_cols", "control_cols"}


def _coerce(name, raw):
    kinds = {f.name: f.type for f in fields(RunConfig)}
    if name not in kinds:
        raise ConfigError(f"unknown config key {name!r}")
    if name in _LIST_KEYS:
        return [s.strip() for s in str(raw).split(",") if s.strip()] if isinstance(raw, str) else list(raw)
    if raw is None or (isinstance(raw, str) and raw.strip().lower() in ("", "none")):
        return None
    kind = kinds[name]
    try:
        if "int" in kind:
            return int(raw)
        if "float" in kind:
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc
    return str(raw)


def load_run_config(path: Optional[str], overrides: dict) -> RunConfig:
    """Read ``[run]`` from ``path`` (if any) and apply non-``None`` overrides."""
    values = {}
    if path:
        parser = configparser.ConfigParser()
        if not parser.read(path):
            raise ConfigError(f"cannot read config file {path}")
        if not parser.has_section("run"):
            raise ConfigError(f"config file {path} has no [run] section")
        values = {k: _coerce(k, v) for k, v in parser.items("run")}
    for k, v in overrides.items():
        if v is not None and v != []:
            values[k] = _coerce(k, v)
    cfg = RunConfig(**values)
    if cfg.batch_size < 1 or cfg.batch_size > cfg.c:
        raise ConfigError(f"batch size must be in [1, c={cfg.c}], got {cfg.batch_size}")
    if cfg.poly_degree < 1:
        raise ConfigError("poly_degree must be at least 1")
    return cfg


def _parse_time(raw, row):
    try:
        return float(int(raw))
    except ValueError:
        pass
    try:
        return datetime.fromisoformat(raw).timestamp()
    except ValueError as exc:
        raise DataError(f"row {row}: timestamp {raw!r} is neither an integer nor ISO-8601") from exc


def read_stream(path, state_cols=(), control_cols=(), timestamp_col="timestamp"):
    """Read a CSV stream.

    Returns:
        ``(states m x n, controls l x n or None, times, raw timestamps)``.
        Without explicit state columns every column that is neither the
        timestamp, a control nor ``label`` is a state.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: missing header row")
        header = [h.strip() for h in header]
        has_time = timestamp_col in header
        states = list(state_cols) or [h for h in header if h not in
                                      {timestamp_col, "label", *control_cols}]
        for name in [*states, *control_cols]:
            if name not in header:
                raise DataError(f"{path}: no column named {name!r}")
        si = [header.index(s) for s in states]
        ci = [header.index(s) for s in control_cols]
        ti = header.index(timestamp_col) if has_time else None
        xs, us, ts, raw_ts = [], [], [], []
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {row_no} has {len(row)} fields, expected {len(header)}")
            try:
                xs.append([float(row[i]) for i in si])
                us.append([float(row[i]) for i in ci])
            except ValueError as exc:
                raise DataError(f"{path}: row {row_no}: {exc}") from exc
            if ti is not None:
                raw_ts.append(row[ti])
                ts.append(_parse_time(row[ti], row_no))
            else:
                raw_ts.append(str(len(raw_ts)))
                ts.append(float(len(ts)))
    x = np.array(xs, dtype=float).reshape(-1, len(si)).T
    u = np.array(us, dtype=float).reshape(-1, len(ci)).T if ci else None
    ts = np.array(ts)
    if ts.size > 1 and not np.all(np.diff(ts) > 0):
        bad = int(np.argmin(np.diff(ts) > 0)) + 3
        raise DataError(f"{path}: timestamps must increase strictly (row {bad})")
    if not np.all(np.isfinite(x)) or (u is not None and not np.all(np.isfinite(u))):
        raise DataError(f"{path}: non-finite values")
    return x, u, ts, raw_ts


def output_dir(explicit: Optional[str]) -> Path:
    out = Path(explicit or os.environ.get(OUTPUT_ENV) or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def run_stream(path: str, cfg: RunConfig) -> Path:
    """Replay one CSV stream and write ``<stem>.scores.csv`` and ``<stem>.config.json``."""
    x, u, _, raw_ts = read_stream(path, cfg.state_cols, cfg.control_cols, cfg.timestamp_col)
    if cfg.poly_degree > 1 and x.shape[1]:
        x = polynomial_lift(x, cfg.poly_degree)
    out = output_dir(cfg.output)
    stem = Path(path).stem
    scores_path = out / f"{stem}.scores.csv"
    engine_cfg = cfg.engine_config()
    with open(out / f"{stem}.config.json", "w") as fh:
        json.dump({"run": asdict(cfg), "engine": engine_cfg.to_dict()}, fh, indent=2, default=str)
    scores = []
    if x.shape[1] >= 2:
        eng = CpdDmd(engine_cfg, x.shape[0], 0 if u is None else u.shape[0])
        # the engine sees row numbers; the original timestamps are restored on output
        batch = RawBatch.from_series(x, u, np.arange(x.shape[1]))
        scores = eng.run(batch, cfg.batch_size)
    with open(scores_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SCORE_HEADER)
        for s in scores:
            w.writerow([s.k, raw_ts[int(s.timestamp)], repr(s.base_error), repr(s.test_error),
                        repr(s.ratio), repr(s.difference), int(s.alarm)])
    return scores_path


def read_scores(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    k = np.array([int(r["k"]) for r in rows], dtype=int)
    ratio = np.array([float(r["Q_ratio"]) for r in rows])
    diff = np.array([float(r["Q_diff"]) for r in rows])
    return k, ratio, diff


def read_labels(path) -> np.ndarray:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    try:
        return np.array([int(float(v)) for v in lines], dtype=int)
    except ValueError as exc:
        raise DataError(f"{path}: labels must be one integer index per line") from exc


def _write_labels(path, labels):
    with open(path, "w") as fh:
        fh.writelines(f"{int(v)}\n" for v in labels)


def cmd_generate(args) -> int:
    out = output_dir(args.output)
    if args.kind == "steps":
        spec = StepsSpec(n_total=args.n or StepsSpec.n_total, noise=args.noise, seed=args.seed)
        x, labels = gen_steps(spec)
        cols, data = ["x1"], x[np.newaxis, :]
    else:
        spec = TwoTankSpec(n=args.n or TwoTankSpec.n, seed=args.seed,
                           faults=not args.no_faults)
        obs, q, labels = simulate_two_tanks(spec)
        cols, data = ["h1", "h2", "q"], np.vstack([obs, q])
    name = args.name or args.kind
    with open(out / f"{name}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", *cols])
        for i in range(data.shape[1]):
            w.writerow([i, *(repr(float(v)) for v in data[:, i])])
    _write_labels(out / f"{name}.labels.csv", labels)
    with open(out / f"{name}.spec.json", "w") as fh:
        json.dump(asdict(spec), fh, indent=2)
    print(out / f"{name}.csv")
    return EXIT_OK


def cmd_run(args) -> int:
    overrides = {f.name: getattr(args, f.name, None) for f in fields(RunConfig)}
    cfg = load_run_config(args.config, overrides)
    if not cfg.inputs:
        raise ConfigError("no input files given")
    if cfg.jobs > 1 and len(cfg.inputs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            paths = list(pool.map(run_stream, cfg.inputs, [cfg] * len(cfg.inputs)))
    else:
        paths = [run_stream(p, cfg) for p in cfg.inputs]
    for p in paths:
        print(p)
    return EXIT_OK


def cmd_eval(args) -> int:
    k, ratio, diff = read_scores(args.scores)
    labels = read_labels(args.labels)
    stat = diff if args.stat == "difference" else ratio
    n_total = args.n_total or (int(k.max()) if k.size else 0)
    length = args.window or default_window(max(n_total, 1), len(labels))
    if args.sweep:
        best, grid, curve = sweep_threshold(k, stat, labels, length, args.profile)
        print(f"best threshold {best:.6g}: {args.profile} {curve.max():.2f}")
        threshold = best
    else:
        threshold = args.threshold
    result = nab_scores(k[stat > threshold], labels, length)
    print("profile,score")
    for name in PROFILES:
        print(f"{name},{result[name]:.2f}")
    if args.results:
        write_results(args.results, [(args.name, result)])
    return EXIT_OK


def cmd_suggest_rank(args) -> int:
    x, u, _, _ = read_stream(args.data, args.state_cols, args.control_cols, args.timestamp_col)
    if args.poly_degree > 1:
        x = polynomial_lift(x, args.poly_degree)
    emb, _ = hankelize(x, HankelConfig(args.h, args.hd))
    if u is not None:
        ctrl, _ = hankelize(u, HankelConfig(args.control_h or 0, args.control_hd or 1))
        n = min(emb.shape[1], ctrl.shape[1])
        emb = np.vstack([emb[:, -n:], ctrl[:, -n:]])
    start = args.start or 0
    window = emb[:, start:start + args.a]
    if window.shape[1] < args.a:
        raise DataError(f"only {window.shape[1]} embedded columns available, need a={args.a}")
    res = suggest_rank(window)
    print(f"rank {res.rank}")
    print(f"threshold {res.threshold:.6g}")
    print(f"kept_energy {res.kept_energy:.4f}")
    return EXIT_OK


def _add_run_flags(p):
    p.add_argument("inputs", nargs="*", help="CSV streams to replay")
    p.add_argument("--config", help="config file with a [run] section")
    for name in ("state_cols", "control_cols"):
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=lambda s: s.split(","),
                       help="comma-separated column names")
    p.add_argument("--timestamp-col", dest="timestamp_col")
    for name in ("a", "b", "c", "d", "h", "hd", "control_h", "control_hd", "p", "q",
                 "poly_degree", "min_learn", "batch_size", "jobs", "seed"):
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--rho", type=float)
    p.add_argument("--score-mode", dest="score_mode", choices=("ratio", "difference", "both"))
    p.add_argument("-o", "--output", help=f"output directory (default ${OUTPUT_ENV} or .)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dmdcpd", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic stream")
    g.add_argument("kind", choices=("steps", "two-tank"))
    g.add_argument("--n", type=int)
    g.add_argument("--noise", type=float, default=StepsSpec.noise)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--no-faults", action="store_true")
    g.add_argument("--name")
    g.add_argument("-o", "--output")
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="replay streams through the detector")
    _add_run_flags(r)
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("eval", help="NAB evaluation of a score file")
    e.add_argument("scores")
    e.add_argument("labels")
    e.add_argument("--profile", default="standard", choices=sorted(PROFILES))
    e.add_argument("--stat", default="ratio", choices=("ratio", "difference"))
    e.add_argument("--threshold", type=float, default=0.0)
    e.add_argument("--sweep", action="store_true", help="pick the best threshold on a grid")
    e.add_argument("--window", type=int, help="scoring window length")
    e.add_argument("--n-total", dest="n_total", type=int, help="span used for the default window")
    e.add_argument("--results", help="write a results table CSV here")
    e.add_argument("--name", default="dmdcpd", help="algorithm name in the results table")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("suggest-rank", help="hard-threshold rank suggestion")
    s.add_argument("data")
    s.add_argument("--a", type=int, required=True, help="window length in embedded columns")
    s.add_argument("--start", type=int, help="first embedded column of the window")
    s.add_argument("--h", type=int, default=0)
    s.add_argument("--hd", type=int, default=1)
    s.add_argument("--control-h", dest="control_h", type=int)
    s.add_argument("--control-hd", dest="control_hd", type=int)
    s.add_argument("--poly-degree", dest="poly_degree", type=int, default=1)
    s.add_argument("--state-cols", dest="state_cols", type=lambda v: v.split(","), default=[])
    s.add_argument("--control-cols", dest="control_cols", type=lambda v: v.split(","), default=[])
    s.add_argument("--timestamp-col", dest="timestamp_col", default="timestamp")
    s.set_defaults(func=cmd_suggest_rank)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, StateError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CpdError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
