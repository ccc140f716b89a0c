"""Exit criteria, one test each; every test prints a single PASS or FAIL line."""

import contextlib
import time

import pytest

from conftest import ACCEPTANCE_LINES
from oracle.models import pmp_lock_sequences, shadow_sequences
from r5guard import monitor as M
from r5guard.harness import build as B
from r5guard.harness import corpus as C
from r5guard.harness import experiments as E
from r5guard.harness import report as R
from r5guard.harness import scenarios as S
from r5guard.hpc import EVENT_NAMES

pytestmark = pytest.mark.acceptance


@contextlib.contextmanager
def criterion(name: str):
    t0 = time.perf_counter()
    detail = {}
    try:
        yield detail
    except BaseException:
        line = f"FAIL  {name}  ({time.perf_counter() - t0:.2f}s) {detail.get('note', '')}".rstrip()
        print(line)
        ACCEPTANCE_LINES.append(line)
        raise
    line = f"PASS  {name}  ({time.perf_counter() - t0:.2f}s) {detail.get('note', '')}".rstrip()
    print(line)
    ACCEPTANCE_LINES.append(line)


def test_attack_suite_exactness():
    with criterion("attack suite exactness") as d:
        t0 = time.perf_counter()
        runs = [[S.run_scenario(s) for s in S.attack_suite()] for _ in range(2)]
        elapsed = (time.perf_counter() - t0) / 2
        first = runs[0]
        got = {r.name: r.outcome for r in first}
        assert got == {"return-slot-overwrite": S.PREVENTED_SHADOW, "shadow-stack-tamper": S.PREVENTED_PMP,
                       "func1-to-target3": S.PREVENTED_LABEL, "func1-to-target2": S.UNDETECTED}
        assert all(r.applied for r in first)
        tamper = next(r for r in first if r.name == "shadow-stack-tamper")
        assert tamper.violations[0]["type"] == "PmpFault"
        label = next(r for r in first if r.name == "func1-to-target3")
        assert label.violations[0]["type"] == "LabelMismatch"
        legal = next(r for r in first if r.name == "func1-to-target2")
        assert legal.violations == [] and legal.report["zones"]["1"]["status"] == "halted"
        assert S.results_json(runs[0]) == S.results_json(runs[1])
        d["note"] = f"suite {elapsed:.2f}s"
        assert elapsed < 5.0


def test_lock_bit_semantics():
    with criterion("lock-bit semantics, 1000 sequences") as d:
        bad = pmp_lock_sequences(1000)
        d["note"] = f"{len(bad)} violations"
        assert bad == []


def test_shadow_stack_oracle_equivalence():
    with criterion("shadow-stack oracle, 10000 sequences") as d:
        bad = shadow_sequences(10_000)
        d["note"] = f"{len(bad)} mismatches"
        assert bad == []


def test_semantic_preservation():
    with criterion("semantic preservation") as d:
        checked = 0
        for name, bench in sorted(C.CORPUS.items()):
            for variant in bench.variants:
                for inp in bench.inputs:
                    src = bench.source(variant, inp)
                    base = E.overhead_run(B.build_image(src, 0))
                    inst = E.overhead_run(B.build_image(src, 0, instrument=True))
                    assert base["outputs"], f"{name}/{variant}/{inp} produced no output"
                    assert inst["outputs"] == base["outputs"], f"{name}/{variant}/{inp}"
                    checked += 1
        d["note"] = f"{checked} program/input pairs"


def test_overhead_direction():
    with criterion("overhead direction") as d:
        over = E.corpus_overhead()
        cycles = {k: v.cycle_pct for k, v in over.items()}
        series = E.size_series()
        report = R.build_report(overhead=over, size_series=series)
        text = R.emit_report(report)
        print(text)
        assert max(cycles, key=cycles.get) == C.RECURSIVE_MEMBER
        assert min(cycles, key=cycles.get) == C.LOOP_MEMBER
        labels = [r["labeled_functions"] for r in series]
        sizes = [r["size_pct"] for r in series]
        assert labels == sorted(set(labels))
        assert all(a < b for a, b in zip(sizes, sizes[1:]))
        assert report["overhead"] and report["size_series"]
        d["note"] = ", ".join(f"{k} {v:.1f}%" for k, v in sorted(cycles.items()))


def test_hpc_qualitative_reproduction():
    with criterion("HPC experiment, qualitative") as d:
        t0 = time.perf_counter()
        cipher = E.run_hpc_experiment(C.CORPUS[C.LOOP_MEMBER], n_runs=1000)
        train_time = time.perf_counter() - t0
        benign = cipher.benign_rows()
        assert len(benign) >= 3
        for row in benign:
            assert set(row.deviations) == set(EVENT_NAMES)
            assert all(v < 1.0 for v in row.deviations.values()), (row.label, row.deviations)
            assert not row.monitor_alarm
        mod2 = cipher.row(f"{C.LOOP_MEMBER}-mod2")
        assert mod2.monitor_alarm and mod2.max_event == "JAL"

        decoder = E.run_hpc_experiment(C.CORPUS["decoder"], n_runs=50)
        fp = [r for r in decoder.benign_rows() if r.alarm_events]
        assert fp, "input-dependent benign runs stayed inside the thresholds"
        assert all(r.monitor_alarm for r in fp)
        print(R.emit_report(R.build_report(hpc=[cipher, decoder])))
        d["note"] = f"1000-run training and scoring {train_time:.1f}s; {len(fp)} decoder benign alarms"
        assert train_time < 60.0


def test_fairness_no_starvation():
    with criterion("fairness over 100 rotations") as d:
        f = E.run_fairness(rotations=100)
        d["note"] = f"monitor {f.monitor_cycles} vs expected {f.expected_monitor_cycles:.0f}"
        assert f.rotations == 100
        assert f.within_one_slice


def test_per_zone_conservation():
    with criterion("per-zone HPC conservation") as d:
        systems = []
        for name in sorted(C.CORPUS):
            s = B.single_zone(B.build_image(C.CORPUS[name].source(), 0, instrument=True), quantum=777,
                              with_monitor=True)
            s.run()
            systems.append(s)
        mixed = M.System(B.manifest([
            B.zone_spec(1, B.build_image(C.tarai_source(), 0), 0, quantum_cycles=313),
            B.zone_spec(2, B.build_image(C.cipher_source(), 1), 1, quantum_cycles=500),
            B.zone_spec(3, B.build_image(C.spinner_source(), 2), 2, quantum_cycles=250),
            B.zone_spec(4, B.build_image(C.ticker_source(), 3), 3, quantum_cycles=400, irq_period=150,
                        irq_handler="tick"),
        ], irq_accounting=True))
        mixed.run(budget=300_000)
        systems.append(mixed)
        # the harness's own entry points verify conservation internally and raise on a mismatch
        S.run_scenario(S.attack_suite()[0])
        E.run_interrupt_fp_scenario(150, accounting=True)
        E.run_fairness(rotations=10)
        bad = [k for k, s in enumerate(systems) if not B.conserved(s)]
        d["note"] = f"{len(systems)} systems checked directly"
        assert bad == []


def test_interrupt_false_positive():
    with criterion("interrupt false positive flips with accounting") as d:
        sig = E.interrupt_signature()
        quiet = E.run_interrupt_fp_scenario(None, signature=sig)
        off = [E.run_interrupt_fp_scenario(150, accounting=False, signature=sig) for _ in range(2)]
        on = [E.run_interrupt_fp_scenario(150, accounting=True, signature=sig) for _ in range(2)]
        assert not quiet.alarm
        assert all(r.interrupts > 0 for r in off + on)
        assert all(r.alarm for r in off) and not any(r.alarm for r in on)
        assert off[0].to_json() == off[1].to_json() and on[0].to_json() == on[1].to_json()
        assert off[0].outputs == on[0].outputs == quiet.outputs
        d["note"] = f"{off[0].interrupts} interrupts; off alarms on {','.join(off[0].alarm_events)}"


def test_determinism():
    with criterion("determinism, 10 repeats") as d:
        def scenario_doc():
            results = [S.run_scenario(s) for s in S.attack_suite()]
            irq = [E.run_interrupt_fp_scenario(150, acc) for acc in (False, True)]
            return R.dumps(R.build_report(scenarios=results, interrupts=irq, fairness=E.run_fairness(rotations=20)))
        docs = {scenario_doc() for _ in range(10)}
        d["note"] = f"{len(docs)} distinct document(s)"
        assert len(docs) == 1
