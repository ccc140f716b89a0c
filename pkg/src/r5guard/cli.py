"""Command line front end.

Exit codes: 0 when every expectation held, 1 on a mismatch (violation,
alarm, unmatched scenario), 2 on setup errors (bad input, boot failure).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import monitor as M
from .asm import AsmError, assemble, disassemble, parse
from .cfi import CfiError, measure_overhead, rewrite
from .detector import DetectorError, HpcSignature, train
from .harness import build as B
from .harness import corpus as C
from .harness import experiments as E
from .harness import report as R
from .harness import scenarios as S
from .image import Image, ImageFormatError

OK, MISMATCH, SETUP = 0, 1, 2


class SetupError(Exception):
    pass


def _write_json(path: str | None, obj) -> None:
    if path:
        Path(path).write_text(R.dumps(obj))


def _load_signatures(paths) -> dict[int, HpcSignature]:
    sigs = {}
    for p in paths or ():
        obj = json.loads(Path(p).read_text())
        docs = obj if isinstance(obj, list) else [obj]
        for d in docs:
            sig = HpcSignature.from_json(d)
            sigs[sig.zone_id] = sig
    return sigs


def _slot_of(image: Image) -> int:
    text = min(s.load_addr for s in image.segments if s.executable)
    slot, rem = divmod(text - M.ZONE_AREA, B.SLOT_STRIDE)
    if text < M.ZONE_AREA or rem:
        raise SetupError(f"image text at {text:#x} is not at a zone slot base")
    return slot


def _run_alone(image: Image) -> dict:
    system = M.System(B.manifest([B.zone_spec(1, image, _slot_of(image))]))
    return system.run()["zones"]["1"]


def _cost(image: Image) -> dict:
    z = _run_alone(image)
    return {"retired": z["retired"], "cycles": z["cycles"] + z["monitor_cycles"]}


def _load_program(path: str) -> Image:
    p = Path(path)
    if p.suffix in (".s", ".S", ".asm"):
        return assemble(p.read_text())
    return Image.load(p)


# ---------------------------------------------------------------- commands

def cmd_asm(a) -> int:
    lay = B.slot_layout(a.slot)
    image = assemble(Path(a.source).read_text(), text_base=lay.text_base, data_base=lay.data_base)
    image.save(a.output)
    if a.listing:
        print(disassemble(image), end="")
    return OK


def cmd_rewrite(a) -> int:
    hints = json.loads(Path(a.hints).read_text()) if a.hints else None
    p = Path(a.input)
    if p.suffix in (".s", ".S", ".asm"):
        lay = B.slot_layout(a.slot)
        src = parse(p.read_text(), text_base=lay.text_base, data_base=lay.data_base)
    else:
        src = Image.load(p)
    res = rewrite(src, hints, forward=not a.no_forward, returns=not a.no_returns)
    res.image.save(a.output)
    for f, why in sorted(res.uninstrumented.items()):
        print(f"uninstrumented: {f}: {why}", file=sys.stderr)
    return OK


def cmd_overhead(a) -> int:
    rep = measure_overhead(Image.load(a.baseline), Image.load(a.instrumented), _cost)
    _write_json(a.json, rep.to_json())
    print(f"size {rep.size_pct:+.2f}%  retired {rep.retired_instr_pct:+.2f}%  cycles {rep.cycle_pct:+.2f}%")
    return OK


def _boot(a) -> M.System:
    if not a.manifest:
        raise SetupError("--manifest is required")
    manifest = M.Manifest.load(a.manifest)
    return M.System(manifest, _load_signatures(a.signature))


def cmd_run(a) -> int:
    system = _boot(a)
    report = system.run(a.budget, a.rotations)
    _write_json(a.json, report)
    bad = False
    for zid, z in sorted(report["zones"].items(), key=lambda kv: int(kv[0])):
        print(f"zone {zid}: {z['status']} exit={z['exit_code']} cycles={z['cycles']} "
              f"outputs={len(z['outputs'])} violations={len(z['violations'])}")
        for v in z["violations"]:
            print(f"  {v['type']} at {v['pc']}: {v['detail']}")
        bad |= bool(z["violations"])
    return MISMATCH if bad else OK


def cmd_check(a) -> int:
    system = _boot(a)
    if not system.signatures:
        raise SetupError("check needs at least one --signature")
    if not any(z.is_monitor for z in system.zones):
        raise SetupError("check needs a monitoring zone in the manifest")
    report = system.run(a.budget, a.rotations)
    _write_json(a.json, report)
    alarm = False
    for zid, z in sorted(report["zones"].items(), key=lambda kv: int(kv[0])):
        det = z.get("detector")
        if det is None:
            continue
        alarm |= det["alarm"]
        devs = "  ".join(f"{n}={e['deviation_pct']:.2f}%{'!' if e['alarm'] else ''}" for n, e in det["events"].items())
        print(f"zone {zid}: {'ALARM' if det['alarm'] else 'ok'}  {devs}")
    return MISMATCH if alarm else OK


def cmd_train(a) -> int:
    images = [_load_program(p) for p in a.images]
    n = max(a.runs, len(images))
    counts = {}
    runs = []
    for k in range(n):
        img = images[k % len(images)]
        if id(img) not in counts:
            counts[id(img)] = _run_alone(img)["hpc"]
        runs.append(counts[id(img)])
    sig = train(runs, a.zone_id)
    Path(a.output).write_text(sig.dumps())
    print(f"signature for zone {a.zone_id} from {n} runs: "
          + ", ".join(f"{k} thr {v.threshold_pct:.2f}%" for k, v in sig.events.items()))
    return OK


def cmd_attack(a) -> int:
    suite = S.attack_suite() + (S.baseline_suite() if a.baseline else [])
    results = [S.run_scenario(s) for s in suite]
    report = R.build_report(scenarios=results)
    print(R.emit_report(report, a.json), end="")
    return OK if all(r.matched for r in results) else MISMATCH


def _bench_report(a) -> dict:
    names = a.bench.split(",") if a.bench else ["cipher", "decoder"]
    hpc = [E.run_hpc_experiment(C.CORPUS[n], n_runs=a.runs) for n in names]
    sig = E.interrupt_signature()
    irq = [E.run_interrupt_fp_scenario(p, acc, sig) for p, acc in ((None, False), (a.irq_period, False),
                                                                  (a.irq_period, True))]
    return R.build_report(hpc=hpc, overhead=E.corpus_overhead(), size_series=E.size_series(), interrupts=irq,
                          fairness=E.run_fairness())


def cmd_bench(a) -> int:
    report = _bench_report(a)
    print(R.emit_report(report, a.json), end="")
    return OK


def cmd_report(a) -> int:
    report = _bench_report(a)
    results = [S.run_scenario(s) for s in S.attack_suite()]
    report["scenarios"] = [r.to_json() for r in results]
    print(R.emit_report(report, a.json), end="")
    return OK if all(r.matched for r in results) else MISMATCH


def cmd_corpus(a) -> int:
    prog = C.CORPUS[a.name]
    print(prog.source(a.variant, a.input), end="")
    return OK


# ---------------------------------------------------------------- parser

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", help="zone manifest JSON")
    p.add_argument("--signature", action="append", help="signature JSON (repeatable)")
    p.add_argument("--budget", type=int, default=None, help="cycle budget across all zones")
    p.add_argument("--rotations", type=int, default=None, help="stop after this many scheduler rotations")
    p.add_argument("--json", help="write the full JSON report here")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="r5guard", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("asm", help="assemble a source file into an image")
    p.add_argument("source")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--slot", type=int, default=0, help="zone slot the image is linked for")
    p.add_argument("--listing", action="store_true", help="print the disassembly")
    p.set_defaults(fn=cmd_asm)

    p = sub.add_parser("rewrite", help="instrument an image or source with CFI checks")
    p.add_argument("input")
    p.add_argument("--hints", help="JSON map of call site -> allowed function names")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--slot", type=int, default=0)
    p.add_argument("--no-forward", action="store_true", help="skip indirect-jump label checks")
    p.add_argument("--no-returns", action="store_true", help="skip shadow-stack return rewriting")
    p.set_defaults(fn=cmd_rewrite)

    p = sub.add_parser("overhead", help="compare a baseline and an instrumented image")
    p.add_argument("baseline")
    p.add_argument("instrumented")
    p.add_argument("--json")
    p.set_defaults(fn=cmd_overhead)

    for name, fn, text in (("run", cmd_run, "boot a manifest and run it"),
                           ("check", cmd_check, "run a manifest and match zones against signatures")):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.set_defaults(fn=fn)

    p = sub.add_parser("train", help="learn a signature from benign runs of one or more images")
    p.add_argument("images", nargs="+", help="images or sources (one per training input)")
    p.add_argument("--runs", type=int, default=2)
    p.add_argument("--zone-id", type=int, default=1)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("attack", help="run the scripted attack suite")
    p.add_argument("--baseline", action="store_true", help="also run the attacks on uninstrumented images")
    p.add_argument("--json")
    p.set_defaults(fn=cmd_attack)

    for name, fn, text in (("bench", cmd_bench, "HPC deviation, overhead, interrupt and fairness experiments"),
                           ("report", cmd_report, "everything: attacks plus bench")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--runs", type=int, default=1000, help="training runs per benchmark")
        p.add_argument("--bench", help="comma-separated corpus members for the HPC table")
        p.add_argument("--irq-period", type=int, default=150)
        p.add_argument("--json")
        p.set_defaults(fn=fn)

    p = sub.add_parser("corpus", help="print a corpus program's source")
    p.add_argument("name", choices=sorted(C.CORPUS))
    p.add_argument("--variant", default="baseline")
    p.add_argument("--input", default=None)
    p.set_defaults(fn=cmd_corpus)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (SetupError, M.BootError, AsmError, CfiError, ImageFormatError, DetectorError, S.ScenarioSetupError,
            R.ReportIoError, FileNotFoundError, KeyError, json.JSONDecodeError) as err:
        print(f"r5guard: {err}", file=sys.stderr)
        return SETUP


if __name__ == "__main__":
    sys.exit(main())
