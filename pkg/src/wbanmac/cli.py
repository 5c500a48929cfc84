"""Command line front end: config parsing, experiment runs and CSV export.

Exit codes: 0 success, 2 configuration error, 3 simulation error,
4 output file already exists.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import re
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .analysis import default_sweep, verify_lemma1
from .channel import MarkovChannel, horizon_steps, is_stable, matrix_power
from .engine import substream
from .errors import OutputExists, ParseError, WbanError
from .metrics import MetricsFrame
from .model import KNOWN_FIELDS, REQUIRED_FIELDS, ScenarioConfig, Scheme, validate_scenario
from .protocols.schemes import RunResult, simulate

OUT_ENV = "WBANMAC_OUT_DIR"

TIMESERIES_HEADER = ("frame", "time_s", "avg_sinr_db", "running_mean_sinr_db", "eq6_residual",
                     "cum_energy_j", "delivered", "collisions", "outage")
SUMMARY_HEADER = ("scheme", "seed", "frames", "final_energy_j", "mean_throughput_msg_s",
                  "outage_estimate", "final_running_mean_sinr_db", "delivered", "no_stable_channel")
LEMMA1_HEADER = ("is_size", "distribution", "threshold", "trials", "p_original", "p_original_lo",
                 "p_original_hi", "p_probabilistic", "p_probabilistic_lo", "p_probabilistic_hi",
                 "expected_residual", "realized_residual", "verdict", "strict")


def fmt(x) -> str:
    """Fixed 6-significant-digit text so files are byte-stable."""
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    return f"{float(x):.6g}"


# -- config -----------------------------------------------------------------

_LINE = re.compile(r"line (\d+)")


def _key_lines(text: str) -> dict[str, int]:
    lines = {}
    for i, line in enumerate(text.splitlines(), start=1):
        m = re.match(r"\s*([A-Za-z_][A-Za-z0-9_]*)\s*=", line)
        if m and m.group(1) not in lines:
            lines[m.group(1)] = i
    return lines


def parse_text(text: str) -> dict[str, Any]:
    """Parse TOML scenario text into a raw mapping (no range checks)."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = _LINE.search(str(exc))
        raise ParseError("<file>", str(exc), int(m.group(1)) if m else None) from None
    where = _key_lines(text)
    for key in raw:
        if key not in KNOWN_FIELDS:
            raise ParseError(key, "unknown key", where.get(key))
    for key in REQUIRED_FIELDS:
        if key not in raw:
            raise ParseError(key, "required field is missing")
    if "nodes" in raw:
        nodes = raw["nodes"]
        if not isinstance(nodes, list) or not all(isinstance(n, dict) for n in nodes):
            raise ParseError("nodes", "expected [[nodes]] tables", where.get("nodes"))
        for n in nodes:
            extra = set(n) - {"role", "x", "y"}
            if extra:
                raise ParseError("nodes", f"unknown node key {sorted(extra)[0]!r}")
        raw["nodes"] = tuple((n.get("role"), n.get("x"), n.get("y")) for n in nodes)
    return raw


def parse_config(path: str | os.PathLike) -> dict[str, Any]:
    p = Path(path)
    if not p.is_file():
        raise ParseError("<file>", f"config file {str(p)!r} not found")
    return parse_text(p.read_text(encoding="utf-8"))


def default_config_text() -> str:
    return resources.files("wbanmac.data").joinpath("baseline.toml").read_text(encoding="utf-8")


def load_scenario(path: str | os.PathLike | None = None, **overrides) -> ScenarioConfig:
    raw = parse_config(path) if path else parse_text(default_config_text())
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return validate_scenario(raw)


# -- experiments --------------------------------------------------------------

@dataclass
class RunManifest:
    config_path: str | None
    schemes: tuple[Scheme, ...]
    seeds: tuple[int, ...]
    out_dir: Path
    overwrite: bool = False
    duration_s: float | None = None
    trace: bool = False
    csv_paths: dict[tuple[str, int], Path] = field(default_factory=dict)

    def __post_init__(self):
        self.out_dir = Path(self.out_dir)
        self.schemes = tuple(Scheme(s) if not isinstance(s, Scheme) else s for s in self.schemes)
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.schemes or not self.seeds:
            raise ValueError("need at least one scheme and one seed")
        self.csv_paths = {(s.value, seed): self.out_dir / f"timeseries_{s.value}_seed{seed}.csv"
                          for s in self.schemes for seed in self.seeds}

    @property
    def summary_path(self) -> Path:
        return self.out_dir / "summary.csv"

    def trace_path(self, scheme: Scheme, seed: int) -> Path:
        return self.out_dir / f"trace_{scheme.value}_seed{seed}.jsonl"

    def outputs(self) -> list[Path]:
        paths = list(self.csv_paths.values()) + [self.summary_path]
        if self.trace:
            paths += [self.trace_path(s, seed) for s in self.schemes for seed in self.seeds]
        return paths

    def check_outputs(self) -> None:
        if self.overwrite:
            return
        for p in self.outputs():
            if p.exists():
                raise OutputExists(f"{p} exists; pass --overwrite to replace it")


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in row])


def timeseries_rows(frames: Sequence[MetricsFrame]):
    for f in frames:
        yield (f.frame_index, f.time, f.avg_sinr_db, f.running_mean_sinr_db, f.eq6_residual,
               f.cumulative_energy_j, f.delivered_count, f.collision_count, bool(f.outage_indicator))


def write_timeseries(path: Path, frames: Sequence[MetricsFrame]) -> None:
    _write_csv(path, TIMESERIES_HEADER, timeseries_rows(frames))


def summary_row(result: RunResult) -> tuple:
    return (result.scheme.value, result.seed, len(result.frames), result.final_energy(),
            result.mean_throughput(), result.outage(), result.final_running_sinr(),
            len(result.deliveries), result.no_stable_channel)


def write_trace(path: Path, trace) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t, seq, kind, rec in trace:
            fh.write(json.dumps({"t": round(t, 9), "seq": seq, "kind": kind, **_jsonable(rec)},
                                sort_keys=True) + "\n")


def _jsonable(rec: dict) -> dict:
    out = {}
    for k, v in rec.items():
        if isinstance(v, dict):
            v = {str(a): b for a, b in v.items()}
        elif isinstance(v, (set, frozenset)):
            v = sorted(v)
        out[str(k)] = v
    return out


def run_experiment(manifest: RunManifest, cfg: ScenarioConfig | None = None) -> list[RunResult]:
    """Run every scheme for every seed; seeds are shared across schemes."""
    if cfg is None:
        cfg = load_scenario(manifest.config_path, sim_duration=manifest.duration_s)
    elif manifest.duration_s is not None:
        cfg = cfg.replace(sim_duration=manifest.duration_s)
    manifest.check_outputs()
    manifest.out_dir.mkdir(parents=True, exist_ok=True)
    results = []
    for seed in manifest.seeds:
        for scheme in manifest.schemes:
            try:
                res = simulate(cfg.replace(scheme=scheme), seed, record_trace=manifest.trace)
            except WbanError as exc:
                exc.args = (f"{scheme.value} seed {seed}: {exc}",)
                raise
            write_timeseries(manifest.csv_paths[(scheme.value, seed)], res.frames)
            if manifest.trace:
                write_trace(manifest.trace_path(scheme, seed), res.trace)
            results.append(res)
    _write_csv(manifest.summary_path, SUMMARY_HEADER, (summary_row(r) for r in results))
    return results


def paired_differences(results: Sequence[RunResult], a: Scheme, b: Scheme, metric) -> list[float]:
    by = {(r.scheme, r.seed): r for r in results}
    seeds = sorted({r.seed for r in results})
    return [metric(by[(a, s)]) - metric(by[(b, s)]) for s in seeds if (a, s) in by and (b, s) in by]


# -- argument handling ----------------------------------------------------------

def _seeds(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        if "-" in part.strip()[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    if any(s < 0 or s >= 2 ** 64 for s in out):
        raise argparse.ArgumentTypeError("seeds must fit in an unsigned 64-bit integer")
    return out


def _floats(text: str) -> list[float]:
    return [float(v) for v in re.split(r"[,\s]+", text.strip()) if v]


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="scenario TOML file (default: bundled 45-minute scenario)")
    p.add_argument("--duration-s", type=float, help="override the simulated duration")
    p.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or ./out)")
    p.add_argument("--overwrite", action="store_true", help="replace existing output files")
    p.add_argument("--trace", action="store_true", help="also write a JSON-lines event trace")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wbanmac", description="WBAN MAC simulator (CFTIM, OR, TDMA)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one scheme for one seed")
    _add_run_flags(p)
    p.add_argument("--scheme", choices=[s.value for s in Scheme], default="cftim")
    p.add_argument("--seed", type=_seeds, default=[0], help="seed, or list like 1,2,5-9")

    p = sub.add_parser("compare", help="paired-seed comparison of several schemes")
    _add_run_flags(p)
    p.add_argument("--schemes", default="cftim,or,tdma")
    p.add_argument("--seed", "--seeds", dest="seed", type=_seeds, default=list(range(1, 11)))

    p = sub.add_parser("lemma1", help="Monte-Carlo check of probabilistic channel assignment")
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the table as CSV to this file")
    p.add_argument("--overwrite", action="store_true")

    p = sub.add_parser("stability", help="channel persistence test for a transition matrix")
    p.add_argument("--matrix", type=_floats, help="9 numbers, row-major (default: built-in chain)")
    p.add_argument("--state", type=int, choices=(1, 2, 3), required=True)
    p.add_argument("--slots-ahead", type=int, default=1, help="K, slots until transmission ends")
    p.add_argument("--slot-s", type=float, default=0.002, help="slot length T")
    p.add_argument("--data-s", type=float, default=384e-6, help="data airtime")
    p.add_argument("--scans", type=int, default=1, help="channels sensed so far (x)")
    p.add_argument("--tau-s", type=float, default=0.0002, help="sensing time per channel")
    p.add_argument("--step-s", type=float, help="Markov step length (default: slot length)")
    p.add_argument("--p-thr", type=float, default=0.9)
    return ap


def _out_dir(arg: str | None) -> Path:
    return Path(arg or os.environ.get(OUT_ENV) or "out")


def _cmd_run(args, schemes) -> int:
    manifest = RunManifest(args.config, tuple(schemes), tuple(args.seed), _out_dir(args.out),
                           args.overwrite, args.duration_s, args.trace)
    results = run_experiment(manifest)
    print("scheme  seed  energy_J  throughput_msg_s  outage  running_sinr_dB")
    for r in results:
        print(f"{r.scheme.value:<6} {r.seed:>5}  {r.final_energy():8.3f}  {r.mean_throughput():16.3f}"
              f"  {r.outage():6.3f}  {r.final_running_sinr():15.2f}")
    if len(manifest.schemes) > 1:
        base = manifest.schemes[0]
        for other in manifest.schemes[1:]:
            d = paired_differences(results, base, other, lambda r: r.final_running_sinr())
            wins = sum(x > 0 for x in d)
            print(f"{base.value} - {other.value}: mean dSINR {np.mean(d):+.2f} dB, "
                  f"positive in {wins}/{len(d)} seeds")
    print(f"wrote {len(manifest.csv_paths)} timeseries files and {manifest.summary_path}")
    return 0


def _cmd_lemma1(args) -> int:
    out = Path(args.out) if args.out else None
    if out and out.exists() and not args.overwrite:
        raise OutputExists(f"{out} exists; pass --overwrite to replace it")
    rng = substream(args.seed, "lemma1")
    rows = []
    for sc in default_sweep(trials=args.trials):
        r = verify_lemma1(sc, rng)
        rows.append((sc.is_size, sc.label(), sc.threshold, r.trials, r.p_original, *r.ci_original,
                     r.p_probabilistic, *r.ci_probabilistic, r.expected_residual,
                     r.realized_residual, r.verdict, r.strict))
        print(f"IS={sc.is_size:<2} {sc.label():<16} P_orig={r.p_original:.4f} "
              f"[{r.ci_original[0]:.4f},{r.ci_original[1]:.4f}]  P_prob={r.p_probabilistic:.4f} "
              f"[{r.ci_probabilistic[0]:.4f},{r.ci_probabilistic[1]:.4f}]  "
              f"{'holds' if r.holds else 'FAILS'}")
    if out:
        _write_csv(out, LEMMA1_HEADER, rows)
    return 0 if all(row[-2] for row in rows) else 3


def _cmd_stability(args) -> int:
    from .model import DEFAULT_MARKOV
    flat = args.matrix if args.matrix is not None else [v for row in DEFAULT_MARKOV for v in row]
    if len(flat) != 9:
        raise ParseError("matrix", "needs 9 numbers, row-major")
    P = np.array(flat).reshape(3, 3)
    step = args.step_s or args.slot_s
    ch = MarkovChannel(0, args.state, tuple(map(tuple, P)), step)
    n = horizon_steps(args.slots_ahead, args.slot_s, args.data_s, args.scans, args.tau_s, step)
    M = matrix_power(P, n)
    i = args.state
    below = M[i - 1, i - 2] if i > 1 else 0.0
    stable = is_stable(ch, args.slots_ahead, args.slot_s, args.data_s, args.scans, args.tau_s, args.p_thr)
    print(f"steps n = {n}")
    print(f"P^n(i,i) = {fmt(M[i - 1, i - 1])}  P^n(i,i-1) = {fmt(below)}")
    print(f"stable = {stable} (threshold {fmt(args.p_thr)})")
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args, [args.scheme])
        if args.command == "compare":
            return _cmd_run(args, [s.strip() for s in args.schemes.split(",") if s.strip()])
        if args.command == "lemma1":
            return _cmd_lemma1(args)
        return _cmd_stability(args)
    except WbanError as exc:
        kind = {2: "config", 3: "simulation", 4: "output"}.get(exc.exit_code, "error")
        print(f"wbanmac: {kind} error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"wbanmac: config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
