"""Latency rows, percentile summaries and their CSV / JSON / table renderings."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

CSV_HEADER = ("scenario", "repetition", "operation", "start_s", "end_s", "latency_s", "outcome")
SUMMARY_STATS = ("count", "mean", "p50", "p90", "p95")
OK = "ok"


@dataclass(frozen=True)
class LatencyRow:
    scenario: str
    repetition: int
    operation: str
    start: float
    end: float | None
    outcome: str

    @property
    def latency(self) -> float | None:
        return None if self.end is None else self.end - self.start


@dataclass
class Metrics:
    rows: list[LatencyRow] = field(default_factory=list)
    # discovery-node count per scenario name, for the table layout
    n_by_scenario: dict[str, int] = field(default_factory=dict)

    def extend(self, other: Metrics) -> None:
        self.rows.extend(other.rows)
        self.n_by_scenario.update(other.n_by_scenario)

    def samples(self, operation: str, scenario: str | None = None) -> list[float]:
        return [
            r.latency
            for r in self.rows
            if r.operation == operation and r.outcome == OK and r.latency is not None and (scenario is None or r.scenario == scenario)
        ]

    def operations(self) -> list[str]:
        return sorted({r.operation for r in self.rows})

    def scenarios(self) -> list[str]:
        return sorted({r.scenario for r in self.rows} | set(self.n_by_scenario))

    def summary(self) -> dict:
        out: dict = {}
        for scen in self.scenarios():
            ops = {}
            for op in sorted({r.operation for r in self.rows if r.scenario == scen}):
                rows = [r for r in self.rows if r.scenario == scen and r.operation == op]
                stats = summarize(self.samples(op, scen))
                stats["attempts"] = len(rows)
                ops[op] = stats
            out[scen] = {"n": self.n_by_scenario.get(scen), "operations": ops}
        return out


def percentile(sorted_values: list[float], q: float) -> float:
    """Nearest-rank percentile of an already sorted sample."""
    if not sorted_values:
        raise ValueError("empty sample")
    rank = max(1, math.ceil(q / 100 * len(sorted_values)))
    return sorted_values[rank - 1]


def summarize(samples: list[float]) -> dict:
    if not samples:
        return {"count": 0, "mean": None, "p50": None, "p90": None, "p95": None}
    s = sorted(samples)
    return {
        "count": len(s),
        "mean": math.fsum(s) / len(s),
        "p50": percentile(s, 50),
        "p90": percentile(s, 90),
        "p95": percentile(s, 95),
    }


def _fmt(x: float | None) -> str:
    return "" if x is None else f"{x:.6f}"


def to_csv(metrics: Metrics) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in metrics.rows:
        w.writerow([r.scenario, r.repetition, r.operation, _fmt(r.start), _fmt(r.end), _fmt(r.latency), r.outcome])
    return buf.getvalue()


def to_json(metrics: Metrics) -> str:
    return json.dumps(metrics.summary(), sort_keys=True, indent=2) + "\n"


def to_table(metrics: Metrics) -> str:
    """One block per operation, one row per scenario, columns mean/p50/p90/p95 in seconds."""
    lines = []
    for op in metrics.operations():
        lines.append(op)
        lines.append(f"  {'scenario':<24}{'n':>4}{'mean':>10}{'p50':>10}{'p90':>10}{'p95':>10}")
        for scen in metrics.scenarios():
            stats = summarize(metrics.samples(op, scen))
            if stats["count"] == 0:
                continue
            n = metrics.n_by_scenario.get(scen)
            cells = "".join(f"{stats[k]:>10.3f}" for k in ("mean", "p50", "p90", "p95"))
            lines.append(f"  {scen:<24}{'' if n is None else n:>4}{cells}")
        lines.append("")
    return "\n".join(lines)


RENDERERS = {"csv": (to_csv, "metrics.csv"), "json": (to_json, "summary.json"), "table": (to_table, "table.txt")}


def emit_report(metrics: Metrics, fmt: str, out_dir: str | Path) -> Path:
    if fmt not in RENDERERS:
        raise ValueError(f"unknown report format {fmt!r}")
    render, name = RENDERERS[fmt]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(render(metrics))
    return path
