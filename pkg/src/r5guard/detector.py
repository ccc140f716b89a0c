"""Per-zone HPC signatures: offline training and deviation matching.

Deviations are computed from the integer sum of the training counts rather
than a rounded mean, so scaling every count by a constant leaves every
deviation (and therefore every alarm) bit-for-bit unchanged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .hpc import EVENT_NAMES

MARGIN = 1.5
FLOOR_PCT = 1.0


class DetectorError(Exception):
    pass


class InsufficientRuns(DetectorError):
    pass


class MissingEvent(DetectorError):
    pass


def _dev(observed: int, total: int, n: int) -> float:
    """|observed - total/n| / (total/n) * 100 without forming the mean."""
    return 100 * abs(n * int(observed) - total) / total


@dataclass(frozen=True)
class EventEnvelope:
    total: int
    runs: int
    max_train_dev_pct: float
    threshold_pct: float

    @property
    def mean(self) -> float:
        return self.total / self.runs

    def deviation(self, observed: int) -> float:
        return _dev(observed, self.total, self.runs)


@dataclass
class HpcSignature:
    zone_id: int
    training_runs: int
    events: dict[str, EventEnvelope]
    degenerate: list[str] = field(default_factory=list)
    margin: float = MARGIN
    floor_pct: float = FLOOR_PCT

    def to_json(self) -> dict:
        return {
            "zone_id": self.zone_id,
            "runs": self.training_runs,
            "margin": self.margin,
            "floor_pct": self.floor_pct,
            "degenerate": list(self.degenerate),
            "events": {
                name: {"mean": env.mean, "sum": env.total, "max_dev_pct": env.max_train_dev_pct,
                       "threshold_pct": env.threshold_pct}
                for name, env in sorted(self.events.items())
            },
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> HpcSignature:
        runs = int(obj["runs"])
        events = {}
        for name, e in obj["events"].items():
            total = int(e["sum"]) if "sum" in e else round(float(e["mean"]) * runs)
            events[name] = EventEnvelope(total, runs, float(e["max_dev_pct"]), float(e["threshold_pct"]))
        return cls(int(obj["zone_id"]), runs, events, list(obj.get("degenerate", [])),
                   float(obj.get("margin", MARGIN)), float(obj.get("floor_pct", FLOOR_PCT)))

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=2) + "\n"


@dataclass(frozen=True)
class EventVerdict:
    observed: int
    deviation_pct: float
    threshold_pct: float
    alarm: bool


@dataclass
class DetectionVerdict:
    events: dict[str, EventVerdict]
    degenerate: list[str] = field(default_factory=list)

    @property
    def overall_alarm(self) -> bool:
        return any(v.alarm for v in self.events.values())

    @property
    def alarm_events(self) -> list[str]:
        return [name for name, v in self.events.items() if v.alarm]

    def max_event(self) -> str | None:
        if not self.events:
            return None
        return max(self.events, key=lambda n: (self.events[n].deviation_pct, n))

    def to_json(self) -> dict:
        return {
            "alarm": self.overall_alarm,
            "degenerate": list(self.degenerate),
            "events": {n: {"observed": v.observed, "deviation_pct": round(v.deviation_pct, 6),
                           "threshold_pct": round(v.threshold_pct, 6), "alarm": v.alarm}
                       for n, v in sorted(self.events.items())},
        }


def train(runs: Sequence[Mapping[str, int]], zone_id: int = 0, *, margin: float = MARGIN,
          floor_pct: float = FLOOR_PCT, events: Iterable[str] | None = None) -> HpcSignature:
    """Learn mean and tolerance per event from at least two benign runs."""
    runs = list(runs)
    if len(runs) < 2:
        raise InsufficientRuns(f"training needs at least 2 runs, got {len(runs)}")
    names = list(events) if events is not None else [n for n in EVENT_NAMES if n in runs[0]]
    n = len(runs)
    envelopes, degenerate = {}, []
    for name in names:
        counts = [int(r[name]) for r in runs]
        total = sum(counts)
        if total == 0:
            degenerate.append(name)
            continue
        max_dev = max(_dev(c, total, n) for c in counts)
        envelopes[name] = EventEnvelope(total, n, max_dev, max(margin * max_dev, floor_pct))
    return HpcSignature(zone_id, n, envelopes, degenerate, margin, floor_pct)


def match(sig: HpcSignature, observed: Mapping[str, int]) -> DetectionVerdict:
    out = {}
    for name, env in sig.events.items():
        if name not in observed:
            raise MissingEvent(f"observation lacks event {name}")
        dev = env.deviation(observed[name])
        out[name] = EventVerdict(int(observed[name]), dev, env.threshold_pct, dev > env.threshold_pct)
    return DetectionVerdict(out, list(sig.degenerate))


@dataclass(frozen=True)
class EventUtility:
    min_attack_dev_pct: float | None
    max_benign_dev_pct: float | None
    threshold_pct: float | None
    separable: bool


def evaluate_event_utility(sig: HpcSignature, labeled_runs: Iterable[tuple[str, Mapping[str, int]]]
                           ) -> dict[str, EventUtility]:
    """Per event: does the signature's threshold split benign runs from attack runs?

    ``labeled_runs`` yields ``("benign" | "attack", counts)`` pairs.
    """
    pairs = list(labeled_runs)
    benign = [r for label, r in pairs if label == "benign"]
    attack = [r for label, r in pairs if label == "attack"]
    report = {}
    for name in EVENT_NAMES:
        env = sig.events.get(name)
        if env is None:
            report[name] = EventUtility(None, None, None, False)
            continue
        b = max((env.deviation(r[name]) for r in benign), default=None)
        a = min((env.deviation(r[name]) for r in attack), default=None)
        sep = a is not None and b is not None and b <= env.threshold_pct < a
        report[name] = EventUtility(a, b, env.threshold_pct, sep)
    return report
