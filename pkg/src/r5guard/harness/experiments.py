"""HPC deviation experiments, the interrupt false-positive case, overhead and fairness runs."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .. import monitor as M
from ..cfi import OverheadReport, measure_overhead
from ..detector import HpcSignature, evaluate_event_utility, match, train
from ..hpc import EVENT_NAMES
from ..image import Image
from . import build as B
from . import corpus as C

TRAIN_SEED_BASE = 1000


def run_counts(image: Image, **kw) -> dict:
    """Run one image alone; return its zone report."""
    system = B.single_zone(image, **kw)
    report = system.run()
    if not B.conserved(system):
        raise AssertionError("per-zone event tallies diverge from the core totals")
    return report["zones"]["1"]


def training_params(bench: C.BenchmarkProgram, k: int) -> dict:
    """The first input with its training parameter re-drawn."""
    params = dict(next(iter(bench.inputs.values())))
    params[bench.train_param] = TRAIN_SEED_BASE + k
    return params


def train_signature(bench: C.BenchmarkProgram, n_runs: int, zone_id: int = 1) -> HpcSignature:
    runs = []
    for k in range(n_runs):
        image = B.build_image(bench.build(variant="baseline", **training_params(bench, k)), 0)
        runs.append(run_counts(image)["hpc"])
    return train(runs, zone_id)


@dataclass
class DeviationRow:
    label: str
    variant: str
    input: str
    counts: dict
    deviations: dict
    alarm_events: list
    monitor_alarm: bool
    outputs_match_baseline: bool | None = None

    @property
    def max_event(self) -> str | None:
        if not self.deviations:
            return None
        return max(self.deviations, key=lambda n: (self.deviations[n], n))

    def to_json(self) -> dict:
        return {"label": self.label, "variant": self.variant, "input": self.input, "counts": self.counts,
                "deviation_pct": {k: round(v, 4) for k, v in self.deviations.items()},
                "alarm_events": self.alarm_events, "monitor_alarm": self.monitor_alarm,
                "max_event": self.max_event}


@dataclass
class HpcExperiment:
    bench: str
    signature: HpcSignature
    rows: list[DeviationRow] = field(default_factory=list)
    utility: dict = field(default_factory=dict)

    def row(self, label: str) -> DeviationRow:
        return next(r for r in self.rows if r.label == label)

    def benign_rows(self) -> list[DeviationRow]:
        return [r for r in self.rows if r.variant == "baseline"]

    def to_json(self) -> dict:
        return {"bench": self.bench, "signature": self.signature.to_json(),
                "rows": [r.to_json() for r in self.rows],
                "utility": {k: vars(v) for k, v in sorted(self.utility.items())}}


def run_hpc_experiment(bench: C.BenchmarkProgram, inputs: Sequence[str] | None = None, n_runs: int = 1000,
                       variants: Sequence[str] | None = None, signature: HpcSignature | None = None) -> HpcExperiment:
    """Train on baseline runs, then score each benign input and each modified variant.

    Modified variants run on the first listed input. Scoring goes through the
    monitoring zone, so ``monitor_alarm`` is the system's own verdict.
    """
    sig = signature or train_signature(bench, n_runs)
    inputs = list(inputs or bench.inputs)
    variants = [v for v in (variants or bench.variants) if v != "baseline"]
    exp = HpcExperiment(bench.name, sig)
    cases = [(f"{bench.name}-{i}", "baseline", i) for i in inputs]
    cases += [(f"{bench.name}-{v}", v, inputs[0]) for v in variants]
    labeled = []
    for label, variant, inp in cases:
        image = B.build_image(bench.source(variant, inp), 0)
        zr = run_counts(image, with_monitor=True, signatures={1: sig})
        verdict = match(sig, zr["hpc"])
        devs = {n: verdict.events[n].deviation_pct for n in EVENT_NAMES if n in verdict.events}
        exp.rows.append(DeviationRow(label, variant, inp, zr["hpc"], devs, verdict.alarm_events,
                                     zr["detector"]["alarm"]))
        labeled.append(("benign" if variant == "baseline" else "attack", zr["hpc"]))
    if any(k == "attack" for k, _ in labeled):
        exp.utility = evaluate_event_utility(sig, labeled)
    return exp


# ---------------------------------------------------------------- interrupts

@dataclass
class InterruptResult:
    period: int | None
    accounting: bool
    alarm: bool
    alarm_events: list
    interrupts: int
    outputs: list
    report: dict

    def to_json(self) -> dict:
        return {"period": self.period, "accounting": self.accounting, "alarm": self.alarm,
                "alarm_events": self.alarm_events, "interrupts": self.interrupts}


def interrupt_signature(n_runs: int = 5) -> HpcSignature:
    image = B.build_image(C.ticker_source(), 0)
    return train([run_counts(image)["hpc"] for _ in range(n_runs)], 1)


def run_interrupt_fp_scenario(period: int | None, accounting: bool = False,
                              signature: HpcSignature | None = None) -> InterruptResult:
    """Run the ticker zone with a timer interrupt every ``period`` zone cycles (None: never)."""
    sig = signature or interrupt_signature()
    image = B.build_image(C.ticker_source(), 0)
    system = B.single_zone(image, signatures={1: sig}, with_monitor=True, irq_period=period,
                           irq_handler="tick" if period else None, irq_accounting=accounting)
    report = system.run()
    if not B.conserved(system):
        raise AssertionError("per-zone event tallies diverge from the core totals")
    zr = report["zones"]["1"]
    det = zr["detector"]
    alarms = sorted(n for n, e in det["events"].items() if e["alarm"])
    return InterruptResult(period, accounting, det["alarm"], alarms, zr.get("interrupts", 0), zr["outputs"], report)


# ---------------------------------------------------------------- overhead

def overhead_run(image: Image) -> dict:
    zr = run_counts(image)
    return {"retired": zr["retired"], "cycles": zr["cycles"] + zr["monitor_cycles"],
            "outputs": zr["outputs"]}


def corpus_overhead(names: Sequence[str] | None = None) -> dict[str, OverheadReport]:
    out = {}
    for name in names or C.CORPUS:
        src = C.CORPUS[name].source()
        base = B.build_image(src, 0)
        inst = B.build_image(src, 0, instrument=True)
        out[name] = measure_overhead(base, inst, overhead_run)
    return out


def size_series(counts: Sequence[int] = (1, 2, 3, 4, 5, 6, 7, 8)) -> list[dict]:
    """Size overhead of the dispatch family as the number of labeled functions grows."""
    rows = []
    for n in counts:
        src = C.dispatch_source(n)
        base = B.build_image(src, 0)
        inst = B.build_image(src, 0, instrument=True)
        labels = len(inst.metadata["labels"])
        rows.append({"handlers": n, "labeled_functions": labels, "baseline_bytes": base.size,
                     "instrumented_bytes": inst.size, "size_pct": round(100.0 * (inst.size - base.size) / base.size, 4)})
    return rows


# ---------------------------------------------------------------- fairness

@dataclass
class FairnessResult:
    rotations: int
    monitor_cycles: int
    total_cycles: int
    expected_monitor_cycles: float
    quantum: int

    @property
    def within_one_slice(self) -> bool:
        return abs(self.monitor_cycles - self.expected_monitor_cycles) <= self.quantum

    def to_json(self) -> dict:
        return dict(vars(self), within_one_slice=self.within_one_slice)


def run_fairness(rotations: int = 100, quantum: int = 1000, monitor_quantum: int | None = None,
                 extra_zones: int = 0) -> FairnessResult:
    """Monitoring zone beside a zone that never yields nor halts."""
    mq = monitor_quantum or quantum
    specs = [B.zone_spec(0, B.monitor_image(slot=0), 0, quantum_cycles=mq, monitor=True),
             B.zone_spec(1, B.build_image(C.spinner_source(), 1), 1, quantum_cycles=quantum)]
    for k in range(extra_zones):
        specs.append(B.zone_spec(2 + k, B.build_image(C.spinner_source(), 2 + k), 2 + k, quantum_cycles=quantum))
    system = M.System(B.manifest(specs))
    report = system.run(max_rotations=rotations)
    if not B.conserved(system):
        raise AssertionError("per-zone event tallies diverge from the core totals")
    mon = report["zones"]["0"]["cycles"]
    total = report["cycles"]
    share = mq / (mq + quantum * (1 + extra_zones))
    return FairnessResult(report["rotations"], mon, total, share * total, mq)
