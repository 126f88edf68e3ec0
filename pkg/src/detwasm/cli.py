"""Command line front end.

Exit codes: 0 success, 1 file or resource errors, 2 rejected module
(validation or instantiation), 3 guest trap, 4 caller misuse, 5 diff
mismatch.  All protocol lines go to stdout and are byte-stable for a given
input; diagnostics go to stderr.
"""

import argparse
import json
import os
import statistics
import sys
import time

from .decoder import decode_module
from .dmir import dump_function
from .engine import Engine, EngineConfig
from .errors import (ApiMisuseError, InstantiationError, ResourceLimitError,
                     TrapError, ValidationError)
from .flas import clone_function
from .gas import CostModel, insert_metering
from .instance import InstanceConfig
from .lower import lower_module
from .numerics import MASK32, MASK64, bits_f32, bits_f64, f32_bits, f64_bits
from .passes import run_pipeline
from .validator import validate_dwasm

EXIT_OK = 0
EXIT_IO = 1
EXIT_REJECTED = 2
EXIT_TRAP = 3
EXIT_MISUSE = 4
EXIT_MISMATCH = 5

MODES = ("interp", "flat", "flas", "lazy")
MEMORY_MODES = ("software", "guard")


def parse_literal(text: str):
    ty, sep, value = text.partition(":")
    if not sep or ty not in ("i32", "i64", "f32", "f64"):
        raise ApiMisuseError(
            f"argument {text!r} must look like i32:5 or f64:1.5")
    try:
        if ty == "i32":
            return int(value, 0) & MASK32
        if ty == "i64":
            return int(value, 0) & MASK64
        if value.lower().startswith(("0x", "-0x")):
            bits = int(value, 16)
            return bits_f32(bits) if ty == "f32" else bits_f64(bits)
        return float(value)
    except (ValueError, OverflowError) as e:
        raise ApiMisuseError(f"bad literal {text!r}: {e}") from e


def format_value(ty: str, v) -> str:
    if ty == "i32" or ty == "i64":
        return str(v)
    if ty == "f32":
        return f"0x{f32_bits(v):08x}"
    return f"0x{f64_bits(v):016x}"


def run_outcome(engine, handle, entry, args, iconfig):
    """Execute once; returns a stable outcome tuple."""
    inst = engine.create_instance(handle, iconfig)
    try:
        vmod = handle.vmod
        ent = vmod.exports.get(entry)
        if ent is None or ent[0] != "func":
            raise ApiMisuseError(f"no exported function named {entry!r}")
        results = vmod.func_types[ent[1]].results
        try:
            value = inst.invoke(entry, args)
        except TrapError as trap:
            return ("trap", trap.code.value, inst.gas.consumed)
        vals = ()
        if results:
            vals = (format_value(results[0], value),)
        return ("ok", vals, inst.gas.consumed, f"{inst.memory_hash():016x}")
    finally:
        inst.close()


def outcome_line(outcome) -> str:
    if outcome[0] == "trap":
        return f"TRAP {outcome[1]} gas={outcome[2]}"
    _, vals, gas, memhash = outcome
    parts = ["OK", *vals, f"gas={gas}", f"memhash={memhash}"]
    return " ".join(parts)


def _read_file(path: str):
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as e:
        print(f"cannot read {path}: {e}", file=sys.stderr)
        return None


def _memory_mode(args) -> str:
    if getattr(args, "memory_mode", None):
        return args.memory_mode
    env = os.environ.get("DETWASM_MEMORY_MODE")
    if env:
        if env not in MEMORY_MODES:
            print(f"DETWASM_MEMORY_MODE must be one of {MEMORY_MODES}",
                  file=sys.stderr)
            return "software"
        return env
    return "software"


def cmd_validate(args) -> int:
    data = _read_file(args.file)
    if data is None:
        return EXIT_IO
    try:
        validate_dwasm(decode_module(data))
    except ValidationError as e:
        print(e.serialize())
        return EXIT_REJECTED
    print("OK")
    return EXIT_OK


def _engine(mode, memory_mode, metrics=None, workers=None) -> Engine:
    return Engine(EngineConfig(mode=mode, memory_mode=memory_mode,
                               metrics_path=metrics, workers=workers))


def _append_metrics(path, record):
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def cmd_run(args) -> int:
    data = _read_file(args.file)
    if data is None:
        return EXIT_IO
    mem_mode = _memory_mode(args)
    try:
        call_args = [parse_literal(a) for a in args.args]
        engine = _engine(args.mode, mem_mode, args.metrics, args.workers)
        try:
            handle = engine.load_module(data)
            iconfig = InstanceConfig(gas_limit=args.gas, memory_mode=mem_mode,
                                     max_call_depth=args.max_depth,
                                     call_weight_budget=args.weight_budget)
            outcome = run_outcome(engine, handle, args.entry, call_args,
                                  iconfig)
            if args.metrics:
                first = int(engine.stats.get("latency_first_invoke_us") or 0)
                _append_metrics(args.metrics, {
                    "name": args.entry, "mode": args.mode,
                    "latency_first_invoke_us": first,
                    "exec_latency_us": 0,
                    "processing_time_us": first,
                    "code_size_bytes": sum(m.get("code_size_bytes", 0)
                                           for m in engine.compile_log)})
        finally:
            engine.shutdown()
    except ValidationError as e:
        print(e.serialize())
        return EXIT_REJECTED
    except InstantiationError as e:
        print(f"EINST {e.kind.value}")
        return EXIT_REJECTED
    except ApiMisuseError as e:
        print(f"EAPI {e}")
        return EXIT_MISUSE
    except ResourceLimitError as e:
        print(f"ERESOURCE {e}", file=sys.stderr)
        return EXIT_IO
    if not args.no_trace:
        print(outcome_line(outcome))
    return EXIT_TRAP if outcome[0] == "trap" else EXIT_OK


def cmd_diff(args) -> int:
    data = _read_file(args.file)
    if data is None:
        return EXIT_IO
    try:
        call_args = [parse_literal(a) for a in args.args]
    except ApiMisuseError as e:
        print(f"EAPI {e}")
        return EXIT_MISUSE
    results = []
    try:
        for mode in MODES:
            for mem_mode in MEMORY_MODES:
                engine = _engine(mode, mem_mode)
                try:
                    handle = engine.load_module(data)
                    iconfig = InstanceConfig(gas_limit=args.gas,
                                             memory_mode=mem_mode)
                    outcome = run_outcome(engine, handle, args.entry,
                                          call_args, iconfig)
                finally:
                    engine.shutdown()
                results.append((f"{mode}/{mem_mode}", outcome))
    except ValidationError as e:
        print(e.serialize())
        return EXIT_REJECTED
    except InstantiationError as e:
        print(f"EINST {e.kind.value}")
        return EXIT_REJECTED
    except ApiMisuseError as e:
        print(f"EAPI {e}")
        return EXIT_MISUSE
    except ResourceLimitError as e:
        print(f"ERESOURCE {e}", file=sys.stderr)
        return EXIT_IO
    outcomes = {o for _, o in results}
    if len(outcomes) == 1:
        print("DETERMINISTIC")
        print(outcome_line(results[0][1]))
        return EXIT_OK
    print("MISMATCH")
    for label, o in results:
        print(f"{label}: {outcome_line(o)}")
    return EXIT_MISMATCH


def cmd_dump_dmir(args) -> int:
    data = _read_file(args.file)
    if data is None:
        return EXIT_IO
    try:
        vmod = validate_dwasm(decode_module(data))
    except ValidationError as e:
        print(e.serialize())
        return EXIT_REJECTED
    fns = lower_module(vmod)
    model = CostModel()
    for fidx in sorted(fns):
        insert_metering(fns[fidx], model)
    if args.func is not None:
        if args.func not in fns:
            print(f"no defined function with index {args.func}",
                  file=sys.stderr)
            return EXIT_IO
        picked = [args.func]
    else:
        picked = sorted(fns)
    for fidx in picked:
        fn = fns[fidx]
        if args.optimized:
            fn = run_pipeline(clone_function(fn))
        sys.stdout.write(dump_function(fn))
    return EXIT_OK


def _bench_once(data, mode, mem_mode, entry, call_args, metrics, reps):
    """One case: creation + first invocation timed together, then the
    median of `reps` plain invocations.  The sum identity
    processing = first + exec is exact in integer microseconds."""
    t0 = time.perf_counter_ns()
    engine = _engine(mode, mem_mode, metrics)
    try:
        handle = engine.load_module(data)
        inst = engine.create_instance(
            handle, InstanceConfig(memory_mode=mem_mode))
        try:
            value = inst.invoke(entry, call_args)
            first_us = (time.perf_counter_ns() - t0) // 1000
            times = []
            for _ in range(reps):
                t1 = time.perf_counter_ns()
                inst.invoke(entry, call_args)
                times.append((time.perf_counter_ns() - t1) // 1000)
            exec_us = int(statistics.median(times))
            results = handle.vmod.func_types[
                handle.vmod.exports[entry][1]].results
            formatted = format_value(results[0], value) if results else None
            return {"result": formatted,
                    "latency_first_invoke_us": first_us,
                    "exec_latency_us": exec_us,
                    "processing_time_us": first_us + exec_us,
                    "code_size_bytes": sum(m.get("code_size_bytes", 0)
                                           for m in engine.compile_log)}
        finally:
            inst.close()
    finally:
        engine.shutdown()


def cmd_bench(args) -> int:
    manifest_raw = _read_file(args.manifest)
    if manifest_raw is None:
        return EXIT_IO
    try:
        manifest = json.loads(manifest_raw)
    except ValueError as e:
        print(f"bad manifest: {e}", file=sys.stderr)
        return EXIT_IO
    base = os.path.dirname(os.path.abspath(args.manifest))
    lines = []
    errored = False
    for kernel in manifest.get("kernels", []):
        path = os.path.join(base, kernel["file"])
        data = _read_file(path)
        call_args = [parse_literal(a) for a in kernel.get("args", [])]
        modes = kernel.get("modes", list(MODES))
        for mode in modes:
            row = {"name": kernel["name"], "mode": mode}
            if data is None:
                row["error"] = "unreadable file"
                errored = True
            else:
                try:
                    row.update(_bench_once(
                        data, mode, args.memory_mode or "software",
                        kernel["entry"], call_args, args.metrics, args.reps))
                except Exception as e:
                    row["error"] = f"{type(e).__name__}: {e}"
                    errored = True
            lines.append(json.dumps(row, sort_keys=True))
    text = "\n".join(lines)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(text + ("\n" if text else ""))
    elif text:
        print(text)
    return EXIT_IO if errored else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="detwasm",
        description="deterministic WebAssembly MVP engine")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="validate a module")
    v.add_argument("file")
    v.set_defaults(fn=cmd_validate)

    r = sub.add_parser("run", help="run an exported function")
    r.add_argument("file")
    r.add_argument("entry")
    r.add_argument("args", nargs="*", help="arguments as type:value")
    r.add_argument("--mode", choices=MODES, default="lazy")
    r.add_argument("--gas-limit", "--gas", dest="gas",
                   type=lambda s: int(s, 0), default=1 << 40)
    r.add_argument("--memory-mode", choices=MEMORY_MODES, default=None)
    r.add_argument("--max-depth", type=int, default=1024)
    r.add_argument("--weight-budget", type=int, default=2_097_152)
    r.add_argument("--workers", type=int, default=None)
    r.add_argument("--no-trace", action="store_true",
                   help="suppress the trace line; exit code still reports")
    r.add_argument("--metrics", default=None,
                   help="append compile and run metrics JSONL here")
    r.set_defaults(fn=cmd_run)

    d = sub.add_parser("diff",
                       help="run under every mode pair and compare")
    d.add_argument("file")
    d.add_argument("entry")
    d.add_argument("args", nargs="*")
    d.add_argument("--gas-limit", "--gas", dest="gas",
                   type=lambda s: int(s, 0), default=1 << 40)
    d.set_defaults(fn=cmd_diff)

    b = sub.add_parser("bench", help="run the benchmark manifest")
    b.add_argument("--manifest", default="bench/manifest.json")
    b.add_argument("--report", default=None,
                   help="write JSON lines here instead of stdout")
    b.add_argument("--memory-mode", choices=MEMORY_MODES, default=None)
    b.add_argument("--reps", type=int, default=30)
    b.add_argument("--metrics", default=None)
    b.set_defaults(fn=cmd_bench)

    dd = sub.add_parser("dump-dmir", help="print the middle IR")
    dd.add_argument("file")
    dd.add_argument("--func", type=int, default=None)
    dd.add_argument("--optimized", action="store_true")
    dd.set_defaults(fn=cmd_dump_dmir)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
