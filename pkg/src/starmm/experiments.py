"""Monte Carlo power sweep over the transmission schemes, plus its CLI.

Every trial draws one channel instance from a child seed of the master seed
(spawn key ``(trial, 0)``) and one initialization stream (``(trial, 1)``);
both are shared by all schemes and power points of that trial, so scheme
comparisons are paired.  Cells run in any order and on any number of worker
processes; the table is sorted before it is written, so the output depends
on the master seed alone.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
import yaml

from .ao_optimizer import SCHEMES, AOOptions, get_scheme, optimize
from .channel_model import ScenarioConfig, generate_network, make_rng
from .fbl_rates import FblParams

log = logging.getLogger(__name__)

COLUMNS = ("scheme", "power_dBm", "trial", "maxmin_rate_bps_hz", "iters", "wall_s")
SUMMARY_COLUMNS = ("scheme", "power_dBm", "n_ok", "n_failed", "mean", "stderr")
FORMATS = ("csv", "jsonl")
AGG_TRIAL = "mean"


class ConfigError(ValueError):
    pass


def parse_power_range(spec: str) -> list:
    """``"start:step:stop"`` in dBm, stop included."""
    try:
        start, step, stop = (float(x) for x in spec.split(":"))
    except ValueError:
        raise ConfigError(f"power range must be start:step:stop, got {spec!r}") from None
    if step <= 0 or stop < start:
        raise ConfigError(f"empty or backwards power range {spec!r}")
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + i * step, 10) for i in range(n)]


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    eps: float = 1e-5
    blocklength: float = 256
    schemes: tuple = tuple(SCHEMES)
    power_dbm: tuple = (0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0)
    trials: int = 25
    seed: int = 0
    max_outer: int = 50
    tol: float = 1e-4
    out: str = "results.csv"
    format: str = "csv"
    workers: int = 1
    record_timing: bool = True

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not self.schemes:
            raise ConfigError("at least one scheme is required")
        if not self.power_dbm:
            raise ConfigError("the power grid is empty")
        for s in self.schemes:
            if s not in SCHEMES:
                raise ConfigError(f"unknown scheme {s!r}; choose from {', '.join(SCHEMES)}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.format not in FORMATS:
            raise ConfigError(f"format must be one of {FORMATS}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        try:
            self.fbl
            self.ao_options
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def fbl(self) -> FblParams:
        return FblParams.uniform(self.scenario.K, self.eps, self.blocklength)

    @property
    def ao_options(self) -> AOOptions:
        return AOOptions(max_outer=self.max_outer, tol=self.tol)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schemes"] = list(self.schemes)
        d["power_dbm"] = list(self.power_dbm)
        sc = d["scenario"]
        for k, v in sc.items():
            if isinstance(v, tuple):
                sc[k] = [list(x) if isinstance(x, tuple) else x for x in v]
        return d

    @classmethod
    def from_dict(cls, d: dict | None) -> "ExperimentConfig":
        d = dict(d or {})
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        sc = d.pop("scenario", None) or {}
        sc_known = {f.name for f in fields(ScenarioConfig)}
        bad = set(sc) - sc_known
        if bad:
            raise ConfigError(f"unknown scenario keys: {', '.join(sorted(bad))}")
        sc = {k: tuple(map(tuple, v)) if k == "user_positions" and v is not None
              else tuple(v) if isinstance(v, list) else v for k, v in sc.items()}
        if isinstance(d.get("power_dbm"), str):
            d["power_dbm"] = parse_power_range(d["power_dbm"])
        for key in ("schemes", "power_dbm"):
            if key in d:
                d[key] = tuple(d[key])
        try:
            return cls(scenario=ScenarioConfig(**sc), **d)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigError("config file must hold a mapping")
    return ExperimentConfig.from_dict(data)


@dataclass(frozen=True)
class ResultRow:
    scheme: str
    power_dBm: float
    trial: int
    rate: float           # bits/s/Hz, nan for a failed cell
    iters: int
    wall_s: float
    ok: bool = True
    instance_hash: str = ""
    error: str = ""


@dataclass(frozen=True)
class AggregateRow:
    scheme: str
    power_dBm: float
    n_ok: int
    n_failed: int
    mean: float
    stderr: float
    mean_iters: float = 0.0
    mean_wall_s: float = 0.0


@dataclass
class ResultsTable:
    rows: list
    aggregates: list


def trial_seeds(master: int, trial: int):
    """(channel seed, initialization seed) of one trial."""
    return (np.random.SeedSequence(master, spawn_key=(trial, 0)),
            np.random.SeedSequence(master, spawn_key=(trial, 1)))


def _run_cell(cfg: ExperimentConfig, scheme: str, power: float, trial: int) -> ResultRow:
    ch_seed, init_seed = trial_seeds(cfg.seed, trial)
    t0 = time.perf_counter()
    fp = ""
    try:
        inst = generate_network(cfg.scenario, ch_seed)
        fp = inst.fingerprint()
        P = 10.0 ** (power / 10.0) / 1000.0
        tr = optimize(inst, get_scheme(scheme), cfg.fbl, P, cfg.ao_options, rng=make_rng(init_seed))
        wall = time.perf_counter() - t0 if cfg.record_timing else 0.0
        return ResultRow(scheme, power, trial, float(tr.objective), tr.iterations, wall,
                         instance_hash=fp)
    except Exception as exc:  # a failed cell must not stop the sweep
        log.warning("cell %s @ %g dBm trial %d failed: %s", scheme, power, trial, exc)
        wall = time.perf_counter() - t0 if cfg.record_timing else 0.0
        return ResultRow(scheme, power, trial, float("nan"), 0, wall, ok=False,
                         instance_hash=fp, error=f"{type(exc).__name__}: {exc}")


def _run_cell_args(args):
    return _run_cell(*args)


def _sort_key(cfg):
    order = {s: i for i, s in enumerate(cfg.schemes)}
    return lambda r: (order[r.scheme], r.power_dBm, r.trial)


def run_power_sweep(cfg: ExperimentConfig, write: bool = True) -> ResultsTable:
    """Run every (scheme, power, trial) cell and aggregate.

    Writes the table to ``cfg.out`` when ``write`` is set.
    """
    cells = [(cfg, s, float(p), t) for t in range(cfg.trials)
             for s in cfg.schemes for p in cfg.power_dbm]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            rows = list(ex.map(_run_cell_args, cells, chunksize=1))
    else:
        rows = [_run_cell(*c) for c in cells]
    rows.sort(key=_sort_key(cfg))
    table = ResultsTable(rows, aggregate(rows))
    if write:
        emit(table, cfg.out, cfg.format)
    return table


def aggregate(rows) -> list:
    """Mean and standard error of the rate per (scheme, power), successful cells only."""
    groups: dict = {}
    for r in rows:
        groups.setdefault((r.scheme, r.power_dBm), []).append(r)
    out = []
    for (scheme, power), grp in groups.items():
        ok = [r for r in grp if r.ok]
        if not ok:
            log.warning("no successful trials for %s @ %g dBm; aggregate omitted", scheme, power)
            continue
        v = np.array([r.rate for r in ok])
        se = float(np.std(v, ddof=1) / np.sqrt(len(v))) if len(v) > 1 else 0.0
        out.append(AggregateRow(scheme, power, len(ok), len(grp) - len(ok), float(np.mean(v)), se,
                                float(np.mean([r.iters for r in ok])),
                                float(np.mean([r.wall_s for r in ok]))))
    return out


def _g(x) -> str:
    return f"{x:.6g}"


def _records(table: ResultsTable):
    for r in table.rows:
        yield [r.scheme, _g(r.power_dBm), str(r.trial), _g(r.rate), str(r.iters), _g(r.wall_s)]
    for a in table.aggregates:
        yield [a.scheme, _g(a.power_dBm), AGG_TRIAL, _g(a.mean), _g(a.mean_iters), _g(a.mean_wall_s)]


def _summary_records(table: ResultsTable):
    for a in table.aggregates:
        yield [a.scheme, _g(a.power_dBm), str(a.n_ok), str(a.n_failed), _g(a.mean), _g(a.stderr)]


def summary_path(path) -> str:
    root, ext = os.path.splitext(str(path))
    return f"{root}.summary{ext or '.csv'}"


def _render(header, records, fmt: str) -> str:
    buf = io.StringIO()
    if fmt == "csv":
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(records)
    else:
        for rec in records:
            buf.write(json.dumps(dict(zip(header, rec))) + "\n")
    return buf.getvalue()


def _atomic_write(path, text: str):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def emit(table: ResultsTable, path, fmt: str = "csv"):
    """Write the per-cell table (plus one aggregate row per group, trial
    ``"mean"``) to ``path`` and the per-group statistics to
    :func:`summary_path`.  Numbers carry 6 significant digits."""
    if fmt not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}")
    _atomic_write(path, _render(COLUMNS, _records(table), fmt))
    _atomic_write(summary_path(path), _render(SUMMARY_COLUMNS, _summary_records(table), fmt))


def _read_records(path, fmt):
    with open(path, encoding="utf-8", newline="") as fh:
        if fmt == "csv":
            rd = csv.DictReader(fh)
            return list(rd)
        return [json.loads(line) for line in fh if line.strip()]


def read_table(path, fmt: str = "csv") -> ResultsTable:
    """Parse files written by :func:`emit` back into a table."""
    rows, means = [], {}
    for rec in _read_records(path, fmt):
        key = (rec["scheme"], float(rec["power_dBm"]))
        if rec["trial"] == AGG_TRIAL:
            means[key] = rec
            continue
        rate = float(rec["maxmin_rate_bps_hz"])
        rows.append(ResultRow(rec["scheme"], key[1], int(rec["trial"]), rate,
                              int(rec["iters"]), float(rec["wall_s"]), ok=not math.isnan(rate)))
    aggs = []
    spath = summary_path(path)
    if os.path.exists(spath):
        for rec in _read_records(spath, fmt):
            key = (rec["scheme"], float(rec["power_dBm"]))
            m = means.get(key, {})
            aggs.append(AggregateRow(key[0], key[1], int(rec["n_ok"]), int(rec["n_failed"]),
                                     float(rec["mean"]), float(rec["stderr"]),
                                     float(m.get("iters", 0)), float(m.get("wall_s", 0))))
    return ResultsTable(rows, aggs)


# ---------------------------------------------------------------- CLI

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _u64(text):
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="starmm-sweep",
                description="Max-min rate power sweep over STAR-RIS / RSMA schemes.")
    p.add_argument("--config", help="YAML experiment config (required unless --print-defaults)")
    p.add_argument("--seed", type=_u64)
    p.add_argument("--trials", type=int)
    p.add_argument("--power", help='power grid in dBm, "start:step:stop"')
    p.add_argument("--schemes", help="comma-separated scheme labels")
    p.add_argument("--out")
    p.add_argument("--max-outer", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--format", choices=FORMATS)
    p.add_argument("--workers", type=int)
    p.add_argument("--no-timing", action="store_true",
                   help="write wall_s as 0 so that reruns are byte-identical")
    p.add_argument("--print-defaults", action="store_true")
    return p


def _apply_overrides(cfg: ExperimentConfig, a) -> ExperimentConfig:
    upd = {}
    if a.seed is not None:
        upd["seed"] = a.seed
    if a.trials is not None:
        upd["trials"] = a.trials
    if a.power is not None:
        upd["power_dbm"] = tuple(parse_power_range(a.power))
    if a.schemes is not None:
        upd["schemes"] = tuple(s.strip() for s in a.schemes.split(",") if s.strip())
    if a.out is not None:
        upd["out"] = a.out
    if a.max_outer is not None:
        upd["max_outer"] = a.max_outer
    if a.tol is not None:
        upd["tol"] = a.tol
    if a.format is not None:
        upd["format"] = a.format
    if a.workers is not None:
        upd["workers"] = a.workers
    if a.no_timing:
        upd["record_timing"] = False
    try:
        return replace(cfg, **upd)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if a.print_defaults:
        yaml.safe_dump(ExperimentConfig().to_dict(), sys.stdout, sort_keys=False)
        return 0
    if a.config is None:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: --config is required", file=sys.stderr)
        return 1
    try:
        cfg = _apply_overrides(load_config(a.config), a)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        table = run_power_sweep(cfg)
    except Exception as exc:
        print(f"sweep failed: {exc}", file=sys.stderr)
        return 2
    n_bad = sum(not r.ok for r in table.rows)
    print(f"wrote {len(table.rows)} rows ({n_bad} failed) to {cfg.out}", file=sys.stderr)
    return 0


def main():
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
