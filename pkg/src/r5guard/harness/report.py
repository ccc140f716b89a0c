"""Stable JSON reports and plain-text summary tables."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping, Sequence

from ..hpc import EVENT_NAMES


class ReportIoError(OSError):
    pass


def build_report(*, scenarios: Sequence = (), hpc: Sequence = (), overhead: Mapping | None = None,
                 size_series: Sequence[dict] = (), interrupts: Sequence = (), fairness=None) -> dict:
    """Collect result objects (anything with ``to_json``) into one document."""
    return {
        "scenarios": [s.to_json() for s in scenarios],
        "hpc": [e.to_json() for e in hpc],
        "overhead": {k: v.to_json() for k, v in sorted((overhead or {}).items())},
        "size_series": list(size_series),
        "interrupts": [r.to_json() for r in interrupts],
        "fairness": fairness.to_json() if fairness is not None else None,
    }


def dumps(report: Mapping) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def _table(header: list[str], rows: list[list]) -> str:
    cells = [header] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def summary(report: Mapping) -> str:
    parts = []
    if report.get("scenarios"):
        rows = [[s["name"], s["expectation"], s["outcome"], "ok" if s["matched"] else "MISMATCH"]
                for s in report["scenarios"]]
        parts.append(_table(["scenario", "expected", "outcome", ""], rows))
    for exp in report.get("hpc", []):
        rows = [[r["label"]] + [f"{r['deviation_pct'].get(n, float('nan')):.1f}" for n in EVENT_NAMES]
                + ["ALARM" if r["monitor_alarm"] else "-"] for r in exp["rows"]]
        parts.append(f"deviation from signature (%), {exp['bench']}\n"
                     + _table(["run"] + list(EVENT_NAMES) + ["verdict"], rows))
    if report.get("overhead"):
        rows = [[name, f"{o['size_pct']:.2f}", f"{o['retired_instr_pct']:.2f}", f"{o['cycle_pct']:.2f}"]
                for name, o in report["overhead"].items()]
        parts.append(_table(["program", "size %", "retired %", "cycles %"], rows))
    if report.get("size_series"):
        rows = [[r["labeled_functions"], r["baseline_bytes"], r["instrumented_bytes"], f"{r['size_pct']:.2f}"]
                for r in report["size_series"]]
        parts.append(_table(["labels", "base bytes", "instr bytes", "size %"], rows))
    if report.get("interrupts"):
        rows = [[r["period"] or "none", "on" if r["accounting"] else "off", r["interrupts"],
                 "ALARM" if r["alarm"] else "-", ",".join(r["alarm_events"])] for r in report["interrupts"]]
        parts.append(_table(["irq period", "accounting", "irqs", "verdict", "events"], rows))
    if report.get("fairness"):
        f = report["fairness"]
        parts.append(f"fairness: monitoring zone {f['monitor_cycles']} of {f['total_cycles']} cycles "
                     f"over {f['rotations']} rotations (expected {f['expected_monitor_cycles']:.0f})")
    return "\n\n".join(parts) + "\n" if parts else "(no results)\n"


def emit_report(report: Mapping, json_path: str | Path | None = None) -> str:
    """Write the JSON document if a path is given; return the summary text."""
    if json_path is not None:
        try:
            Path(json_path).write_text(dumps(report))
        except OSError as err:
            raise ReportIoError(f"cannot write report to {json_path}: {err}") from err
    return summary(report)
