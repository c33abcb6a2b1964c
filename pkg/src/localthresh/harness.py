"""Parameter sweeps, CSV output and the command-line entry point."""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import statistics
import sys
from dataclasses import fields
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

from .metrics import RunRecord
from .simulator import ConfigError, SimConfig, run

log = logging.getLogger(__name__)

CONFIG_COLUMNS = [
    "topology", "n", "realized_avg_degree", "drop_rate", "k", "d", "bias", "std",
    "noise_ppmc", "churn_ppmc", "beta", "ell", "policy",
]
METRIC_COLUMNS = [
    "cycles_to_95", "cycles_to_100", "messages_per_link", "avg_accuracy",
    "normalized_messaging", "quiesced",
]
COLUMNS = ["run_id", "seed"] + CONFIG_COLUMNS + METRIC_COLUMNS

# keys a sweep or config file may set; ``sources`` is only reachable from code
SWEEP_KEYS = tuple(k for k in SimConfig.keys() if k != "sources")
_TYPES = {f.name: f.type for f in fields(SimConfig)}


def parse_value(key: str, text: str) -> Any:
    """Convert ``text`` to the type of config field ``key``."""
    if key not in SWEEP_KEYS:
        raise ConfigError(f"unknown parameter {key!r}")
    kind = _TYPES[key]
    text = text.strip()
    if kind in ("int", "Optional[int]"):
        if kind == "Optional[int]" and text.lower() in ("", "none"):
            return None
        value = float(text)
        if value != int(value):
            raise ConfigError(f"{key} must be an integer, got {text!r}")
        return int(value)
    if kind == "float":
        return float(text)
    return text


def read_config_file(path: str | Path) -> dict[str, Any]:
    """Parse a flat ``key=value`` file; blank lines and ``#`` comments are ignored."""
    out: dict[str, Any] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        key = key.strip().replace("-", "_")
        out[key] = int(value) if key == "repeats" else parse_value(key, value)
    return out


def fmt(value: Any) -> str:
    """Fixed CSV formatting: 9 significant digits, empty for undefined."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return f"{value:.9g}"
    return str(value)


def record_row(run_id: int, config: SimConfig, rec: RunRecord) -> dict[str, Any]:
    row: dict[str, Any] = {"run_id": run_id, "seed": config.seed}
    for key in CONFIG_COLUMNS:
        row[key] = rec.realized_avg_degree if key == "realized_avg_degree" else getattr(config, key)
    for key in METRIC_COLUMNS:
        row[key] = getattr(rec, key)
    return row


def _summarise(rows: Sequence[dict[str, Any]], label: str) -> list[dict[str, Any]]:
    """Mean and sample standard deviation rows over ``rows`` (one sweep point)."""
    mean_row: dict[str, Any] = {"run_id": f"mean:{label}", "seed": None}
    std_row: dict[str, Any] = {"run_id": f"std:{label}", "seed": None}
    for key in CONFIG_COLUMNS + METRIC_COLUMNS:
        vals = [r[key] for r in rows]
        if key in CONFIG_COLUMNS and key != "realized_avg_degree":
            shared = vals[0] if all(v == vals[0] for v in vals) else None
            mean_row[key] = std_row[key] = shared
            continue
        nums = [float(v) for v in vals if v is not None]
        mean_row[key] = statistics.fmean(nums) if nums else None
        std_row[key] = statistics.stdev(nums) if len(nums) > 1 else (0.0 if nums else None)
    return [mean_row, std_row]


def sweep(
    base: SimConfig,
    parameter: Optional[str],
    values: Sequence[Any],
    repeats: int = 1,
    engine: str = "auto",
) -> tuple[list[dict[str, Any]], list[dict[str, Any]]]:
    """Run ``repeats`` seeds for every value of ``parameter``.

    Repeat ``r`` uses seed ``base.seed + r``. Returns the data rows and the
    summary rows (mean then standard deviation per value), both in sweep order.
    Without a parameter the base configuration alone is repeated.
    """
    if repeats < 1:
        raise ConfigError("repeats must be >= 1")
    if parameter is None:
        points = [(None, base)]
    else:
        if parameter not in SWEEP_KEYS or parameter == "seed":
            raise ConfigError(f"unknown parameter {parameter!r}")
        points = [(v, base.with_(**{parameter: v})) for v in values]
    data: list[dict[str, Any]] = []
    summary: list[dict[str, Any]] = []
    run_id = 0
    for value, cfg in points:
        group = []
        for r in range(repeats):
            c = cfg.with_(seed=base.seed + r)
            rec, _ = run(c, engine=engine)
            log.info("run %d %s=%s seed=%d done in %d cycles", run_id, parameter, value, c.seed, rec.cycles)
            row = record_row(run_id, c, rec)
            group.append(row)
            data.append(row)
            run_id += 1
        label = "base" if parameter is None else f"{parameter}={fmt(value)}"
        summary.extend(_summarise(group, label))
    return data, summary


def to_csv(rows: Iterable[dict[str, Any]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for row in rows:
        writer.writerow([fmt(row.get(c)) for c in COLUMNS])
    return buf.getvalue()


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="localthresh",
        description="Simulate local source selection over a peer-to-peer overlay and emit a CSV of run metrics.",
    )
    p.add_argument("--config", help="flat key=value file; command-line flags override it")
    p.add_argument("--topology", choices=("ba", "chord", "grid"))
    p.add_argument("--n", type=int)
    p.add_argument("--ba-m", type=int)
    p.add_argument("--grid-rows", type=int)
    p.add_argument("--grid-cols", type=int)
    p.add_argument("--drop-rate", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--bias", type=float)
    p.add_argument("--std", type=float)
    p.add_argument("--noise-ppmc", type=float)
    p.add_argument("--churn-ppmc", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--ell", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--max-cycles", type=int)
    p.add_argument("--policy", choices=("uniform", "selective"))
    p.add_argument("--repeats", type=int, default=None, help="seeds per sweep point (default 1)")
    p.add_argument("--sweep", metavar="KEY=V1,V2,...", help="vary one parameter")
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.add_argument("--trace", action="store_true", help="log every protocol event to stderr")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def parse_sweep(text: str) -> tuple[str, list[Any]]:
    if "=" not in text:
        raise ConfigError("--sweep expects key=v1,v2,...")
    key, vals = text.split("=", 1)
    key = key.strip().replace("-", "_")
    values = [parse_value(key, v) for v in vals.split(",") if v.strip()]
    if not values:
        raise ConfigError("--sweep needs at least one value")
    return key, values


def config_from_args(args: argparse.Namespace) -> tuple[SimConfig, int]:
    settings: dict[str, Any] = {}
    if args.config:
        settings.update(read_config_file(args.config))
    for key in SWEEP_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    repeats = settings.pop("repeats", None)
    if args.repeats is not None:
        repeats = args.repeats
    return SimConfig(**settings), int(repeats or 1)


def _run_traced(config: SimConfig) -> list[dict[str, Any]]:
    rec, world = run(config, trace=True, engine="python")
    for line in world.trace:
        print(line, file=sys.stderr)
    return [record_row(0, config, rec)]


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        config, repeats = config_from_args(args)
        if args.trace:
            if args.sweep or repeats != 1:
                raise ConfigError("--trace records a single run")
            rows = _run_traced(config)
        else:
            parameter, values = parse_sweep(args.sweep) if args.sweep else (None, [])
            data, summary = sweep(config, parameter, values, repeats)
            rows = data + summary
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    text = to_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
