"""Command-line front end.

Subcommands:
    run      execute a scenario script, report results
    bench    leaf microbenchmarks or a scenario-shaped bench
    inspect  report over a machine-state snapshot produced by run --snapshot
    attest   load two enclaves and run mutual local attestation

The default config path comes from $CCX_SIM_CONFIG when --config is absent.
Exit status is 0 only when every expectation passed and nothing failed
internally; structured output (--json) is byte-stable for fixed seeds.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .config import Config
from .errors import ModelError
from .machine import Machine
from .manifest import EnclaveManifest, ManifestError
from .runtime import HostRuntime, LoadError
from .scenario import ScenarioRunner

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


def _load_config(args) -> Config:
    path = args.config or os.environ.get("CCX_SIM_CONFIG")
    config = Config.load(path)
    if getattr(args, "mode", None):
        config.mode = args.mode
    if getattr(args, "seed", None) is not None:
        config.crypto_seed = args.seed
    config.validate()
    return config


def _write_trace(machine: Machine, path: str) -> None:
    with open(path, "w") as fh:
        for event in machine.trace:
            fh.write(json.dumps(event, sort_keys=True) + "\n")


def cmd_run(args) -> int:
    config = _load_config(args)
    runner = ScenarioRunner(
        config,
        mode_override=args.mode,
        swap_dir=Path(args.swap_dir) if args.swap_dir else None,
    )
    result = runner.run_file(args.scenario)

    if args.trace and result.machine is not None:
        _write_trace(result.machine, args.trace)
    if args.snapshot and result.machine is not None:
        Path(args.snapshot).write_text(
            json.dumps(result.machine.snapshot(), sort_keys=True, indent=2)
        )

    if args.json:
        sys.stdout.write(result.to_jsonl())
    else:
        for event in result.events:
            status = "ok" if event["ok"] else "FAIL"
            extra = ""
            if "result" in event:
                extra = f" -> {event['result']}"
            if "error" in event:
                extra = f" !! {event['error']}"
            print(f"[{status}] line {event['line']}: {event['text']}{extra}")
        summary = result.summary
        print(
            f"{'PASS' if result.ok else 'FAIL'}: {summary['commands']} commands,"
            f" {summary['gpf_count']} faults logged,"
            f" {summary['swap_out_events']} swap-outs,"
            f" {summary['swap_in_events']} swap-ins"
        )
        if not result.ok:
            print(f"failed at line {summary.get('failed_at')}: {summary.get('failure')}")
    return EXIT_OK if result.ok else EXIT_FAILED


def cmd_bench(args) -> int:
    from .bench import run_leaf_bench, run_scenario_bench

    config = _load_config(args)
    if args.suite == "leaves":
        report = run_leaf_bench(config, iterations=args.iterations)
    else:
        report = run_scenario_bench(config, args.suite, mode_override=args.mode)
    if args.json:
        sys.stdout.write(report.to_json() + "\n")
    else:
        print(report.human())
    return EXIT_OK


def _redact(snapshot: dict, show_debug_content: bool) -> dict:
    """Granule contents of enclave pages are visible only for DEBUG enclaves
    and only when explicitly requested (mirrors debug-read gating)."""
    debug_eids = {
        e["eid"] for e in snapshot.get("enclaves", []) if e.get("debug")
    }
    contents = snapshot.get("granule_contents", {})
    visible = {}
    for entry in snapshot.get("epcm", []):
        granule = str(entry["granule"])
        owner = entry.get("owner")
        if owner is None or (show_debug_content and owner in debug_eids):
            if granule in contents:
                visible[granule] = contents[granule]
        else:
            visible[granule] = "<redacted>"
    out = dict(snapshot)
    out["granule_contents"] = visible
    return out


def cmd_inspect(args) -> int:
    snapshot = json.loads(Path(args.snapshot).read_text())
    filtered = _redact(snapshot, args.debug_enclave)
    if args.json:
        print(json.dumps(filtered, sort_keys=True, indent=2))
        return EXIT_OK

    print("enclaves:")
    for e in filtered.get("enclaves", []):
        flags = []
        if e.get("initialized"):
            flags.append("init")
        if e.get("debug"):
            flags.append("debug")
        if e.get("crashed"):
            flags.append("crashed")
        print(
            f"  eid {e['eid']}: size {e['size']:#x} [{','.join(flags) or '-'}]"
            f" mrenclave={e['mrenclave'] or '-'} mrsigner={(e['mrsigner'] or '-')[:16]}"
            f" prod={e['isv_prod_id']} svn={e['isv_svn']}"
        )
    print("gpt tables:")
    for name, counts in filtered.get("gpt", {}).items():
        print(f"  {name}: {counts}")
    print("epcm:")
    for entry in filtered.get("epcm", []):
        print(
            f"  granule {entry['granule']:>6}: {entry['type']:<4}"
            f" owner={entry['owner']} vaddr={entry['vaddr']:#x}"
            f" perms={entry['perms']}"
            + (" blocked" if entry["blocked"] else "")
            + (" pending" if entry["pending"] else "")
            + (" modified" if entry["modified"] else "")
        )
    shown = sum(1 for v in filtered["granule_contents"].values() if v != "<redacted>")
    redacted = sum(1 for v in filtered["granule_contents"].values() if v == "<redacted>")
    print(f"contents: {shown} granules shown, {redacted} redacted")
    return EXIT_OK


def cmd_attest(args) -> int:
    config = _load_config(args)
    machine = Machine(config)
    runtime = HostRuntime(machine)
    try:
        a = runtime.load_enclave(EnclaveManifest.load(args.manifest_a))
        b = runtime.load_enclave(EnclaveManifest.load(args.manifest_b))
    except (ManifestError, LoadError) as exc:
        print(f"load failed: {exc}", file=sys.stderr)
        return EXIT_FAILED
    outcome = runtime.attest(a, b)
    doc = {
        "a": {"name": a.name, "mrenclave": a.mrenclave.hex(), "mrsigner": a.mrsigner.hex()},
        "b": {"name": b.name, "mrenclave": b.mrenclave.hex(), "mrsigner": b.mrsigner.hex()},
        "a_verifies_b": outcome.b_to_a,
        "b_verifies_a": outcome.a_to_b,
        "mutual": outcome.mutual,
    }
    if args.json:
        print(json.dumps(doc, sort_keys=True, indent=2))
    else:
        print(f"{a.name}: mrenclave {a.mrenclave.hex()}")
        print(f"{b.name}: mrenclave {b.mrenclave.hex()}")
        print(f"{b.name} verifies report from {a.name}: {outcome.a_to_b}")
        print(f"{a.name} verifies report from {b.name}: {outcome.b_to_a}")
        print(f"mutual attestation: {'PASS' if outcome.mutual else 'FAIL'}")
    return EXIT_OK if outcome.mutual else EXIT_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ccxsim",
        description="deterministic enclave-system simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="config file (default: $CCX_SIM_CONFIG)")
        p.add_argument("--mode", choices=["sgx", "ccx"], help="memory mode override")
        p.add_argument("--seed", type=int, help="crypto seed override")
        p.add_argument("--json", action="store_true", help="structured output")

    p_run = sub.add_parser("run", help="run a scenario script")
    common(p_run)
    p_run.add_argument("scenario")
    p_run.add_argument("--trace", help="write machine trace records to this path")
    p_run.add_argument("--snapshot", help="write a machine state snapshot to this path")
    p_run.add_argument("--swap-dir", help="directory for swap-store blob files")
    p_run.set_defaults(fn=cmd_run)

    p_bench = sub.add_parser("bench", help="run benchmarks")
    common(p_bench)
    p_bench.add_argument(
        "suite", nargs="?", default="leaves",
        help="'leaves' for per-leaf microbenchmarks, or a scenario path",
    )
    p_bench.add_argument("--iterations", type=int, default=100)
    p_bench.set_defaults(fn=cmd_bench)

    p_inspect = sub.add_parser("inspect", help="report over a state snapshot")
    p_inspect.add_argument("snapshot")
    p_inspect.add_argument("--json", action="store_true")
    p_inspect.add_argument(
        "--debug-enclave", action="store_true",
        help="show page contents of DEBUG enclaves",
    )
    p_inspect.set_defaults(fn=cmd_inspect)

    p_attest = sub.add_parser("attest", help="mutual local attestation demo")
    common(p_attest)
    p_attest.add_argument("manifest_a")
    p_attest.add_argument("manifest_b")
    p_attest.set_defaults(fn=cmd_attest)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ModelError, ManifestError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
