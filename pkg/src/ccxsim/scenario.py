"""Scenario scripts: line-oriented drivers for whole simulated runs.

Grammar (one command per line, '#' comments):

    mode sgx|ccx                      before the first create; CLI may override
    create <id> <manifest-path>       path relative to the scenario file
    destroy <id>
    ecall <id> <tcs> <selector> [a] [b]
    inject_irq vcpu=<n> at=every|<s>[,<s>...]   applies to the next ecall
    swap_out <id> <offset>            enclave-relative page offset
    swap_in <id> <offset>
    attest <a> <b>
    seal <id> mrenclave|mrsigner <hexpayload>
    unseal <id>
    expect <probe> <op> <value>
    expect mrenclave_eq <a> <b>

Probes: ``last`` (result of the previous command), ``count:<LEAF>``,
``gpf_count``, ``swap_out_events``, ``swap_in_events``, ``unseal_ok``,
``attest_ab``, ``attest_ba``, ``attest_mutual``.  Ops: == != >= <= > <.

The report is line-delimited: one JSON record per executed command, then one
summary object.  With fixed seeds the serialized report is byte-identical
across runs.  A failed expectation aborts the scenario and the report carries
the failing position plus a machine-state snapshot.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

from .config import Config
from .errors import ModelError, SgxError
from .machine import Machine
from .manifest import EnclaveManifest, ManifestError
from .runtime import EnclaveFault, HostRuntime, LoadError, SealedBlob

_OPS = {
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    ">=": lambda a, b: a >= b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    "<": lambda a, b: a < b,
}


class ScenarioError(Exception):
    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"scenario line {line_no}: {message}")


@dataclass
class ScenarioResult:
    ok: bool
    events: List[dict]
    summary: dict
    machine: Optional[Machine] = None
    runtime: Optional[HostRuntime] = None

    def to_jsonl(self) -> str:
        lines = [json.dumps(e, sort_keys=True) for e in self.events]
        lines.append(json.dumps({"summary": self.summary}, sort_keys=True))
        return "\n".join(lines) + "\n"


@dataclass
class _Pending:
    vcpu: int = 0
    at: object = None  # "every" | set of ints


class ScenarioRunner:
    def __init__(
        self,
        config: Config,
        base_dir: Optional[Path] = None,
        mode_override: Optional[str] = None,
        swap_dir: Optional[Path] = None,
    ):
        self.config = config
        self.base_dir = Path(base_dir) if base_dir else Path(".")
        self.mode_override = mode_override
        self.swap_dir = swap_dir
        self.machine: Optional[Machine] = None
        self.runtime: Optional[HostRuntime] = None
        self.handles: Dict[str, object] = {}
        self.last: int = 0
        self.sealed: Optional[SealedBlob] = None
        self.sealed_payload: Optional[bytes] = None
        self.last_attest = None
        self.last_unseal_ok = 0
        self._pending_inject: Optional[_Pending] = None

    # -- machine lifecycle ----------------------------------------------------

    def _ensure_machine(self) -> HostRuntime:
        if self.runtime is None:
            if self.mode_override:
                self.config.mode = self.mode_override
            self.config.validate()
            self.machine = Machine(self.config)
            self.runtime = HostRuntime(self.machine, swap_dir=self.swap_dir)
        return self.runtime

    def _handle(self, name: str, line_no: int):
        try:
            return self.handles[name]
        except KeyError:
            raise ScenarioError(line_no, f"unknown enclave {name!r}") from None

    # -- probes ------------------------------------------------------------------

    def probe(self, name: str, line_no: int) -> int:
        m, rt = self.machine, self.runtime
        if name == "last":
            return self.last
        if name == "gpf_count":
            return len(m.memory.gpf_log) if m else 0
        if name == "swap_out_events":
            return rt.swap_out_events if rt else 0
        if name == "swap_in_events":
            return rt.swap_in_events if rt else 0
        if name == "unseal_ok":
            return self.last_unseal_ok
        if name.startswith("count:"):
            leaf = name.split(":", 1)[1]
            if m is None or leaf not in m.counters:
                raise ScenarioError(line_no, f"unknown leaf counter {leaf!r}")
            return m.counters[leaf]
        if name in ("attest_ab", "attest_ba", "attest_mutual"):
            if self.last_attest is None:
                raise ScenarioError(line_no, "no attestation has run")
            return int(
                {
                    "attest_ab": self.last_attest.a_to_b,
                    "attest_ba": self.last_attest.b_to_a,
                    "attest_mutual": self.last_attest.mutual,
                }[name]
            )
        raise ScenarioError(line_no, f"unknown probe {name!r}")

    # -- command execution ---------------------------------------------------------

    def run_text(self, text: str) -> ScenarioResult:
        events: List[dict] = []
        ok = True
        failure: Optional[dict] = None
        for line_no, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            record = {"line": line_no, "cmd": line.split()[0], "text": line}
            try:
                result = self._execute(line, line_no)
                record["ok"] = True
                if result is not None:
                    record["result"] = result
            except (ScenarioError, ManifestError, ModelError) as exc:
                record["ok"] = False
                record["error"] = str(exc)
                events.append(record)
                ok = False
                failure = record
                break
            except (SgxError, LoadError, EnclaveFault) as exc:
                record["ok"] = False
                record["error"] = f"{type(exc).__name__}: {exc}"
                events.append(record)
                ok = False
                failure = record
                break
            events.append(record)

        summary = {
            "ok": ok,
            "commands": len(events),
            "counters": dict(self.machine.counters) if self.machine else {},
            "cost_tally": dict(self.machine.cost_tally) if self.machine else {},
            "gpf_count": len(self.machine.memory.gpf_log) if self.machine else 0,
            "swap_out_events": self.runtime.swap_out_events if self.runtime else 0,
            "swap_in_events": self.runtime.swap_in_events if self.runtime else 0,
        }
        if failure is not None:
            summary["failed_at"] = failure["line"]
            summary["failure"] = failure.get("error", "expectation failed")
            if self.machine is not None:
                snapshot = self.machine.snapshot()
                snapshot.pop("granule_contents", None)  # keep reports readable
                summary["state_snapshot"] = snapshot
        return ScenarioResult(
            ok=ok, events=events, summary=summary,
            machine=self.machine, runtime=self.runtime,
        )

    def run_file(self, path) -> ScenarioResult:
        path = Path(path)
        self.base_dir = path.parent
        return self.run_text(path.read_text())

    def _execute(self, line: str, line_no: int) -> Optional[object]:
        parts = line.split()
        cmd, args = parts[0], parts[1:]

        if cmd == "mode":
            if self.machine is not None:
                raise ScenarioError(line_no, "mode must precede the first create")
            if args[0] not in ("sgx", "ccx"):
                raise ScenarioError(line_no, f"unknown mode {args[0]!r}")
            if not self.mode_override:
                self.config.mode = args[0]
            return self.config.mode if not self.mode_override else self.mode_override

        if cmd == "create":
            name, path = args
            rt = self._ensure_machine()
            manifest = EnclaveManifest.load(self.base_dir / path)
            handle = rt.load_enclave(manifest)
            self.handles[name] = handle
            self.last = handle.eid
            return handle.eid

        if cmd == "destroy":
            handle = self._handle(args[0], line_no)
            self.runtime.destroy(handle)
            del self.handles[args[0]]
            self.last = 0
            return None

        if cmd == "ecall":
            name, tcs, selector = args[0], int(args[1], 0), int(args[2], 0)
            a = int(args[3], 0) if len(args) > 3 else 0
            b = int(args[4], 0) if len(args) > 4 else 0
            handle = self._handle(name, line_no)
            inject = None
            vcpu = 0
            if self._pending_inject is not None:
                inject = self._pending_inject.at
                vcpu = self._pending_inject.vcpu
                self._pending_inject = None
            self.last = self.runtime.ecall(
                handle, tcs, selector, a, b, vcpu_index=vcpu, inject_at=inject
            )
            return self.last

        if cmd == "inject_irq":
            pending = _Pending()
            for token in args:
                key, _, value = token.partition("=")
                if key == "vcpu":
                    pending.vcpu = int(value, 0)
                elif key == "at":
                    pending.at = (
                        "every"
                        if value == "every"
                        else {int(v, 0) for v in value.split(",")}
                    )
                else:
                    raise ScenarioError(line_no, f"unknown inject field {key!r}")
            if pending.at is None:
                raise ScenarioError(line_no, "inject_irq needs at=")
            self._pending_inject = pending
            return None

        if cmd in ("swap_out", "swap_in"):
            handle = self._handle(args[0], line_no)
            vaddr = handle.base + int(args[1], 0)
            if cmd == "swap_out":
                self.runtime.swap_out(handle, vaddr)
            else:
                self.runtime.swap_in(handle, vaddr)
            self.last = 1
            return None

        if cmd == "attest":
            a = self._handle(args[0], line_no)
            b = self._handle(args[1], line_no)
            self.last_attest = self.runtime.attest(a, b)
            self.last = int(self.last_attest.mutual)
            return {"a_to_b": self.last_attest.a_to_b, "b_to_a": self.last_attest.b_to_a}

        if cmd == "seal":
            from .structs import KeyPolicy

            handle = self._handle(args[0], line_no)
            policy = {"mrenclave": KeyPolicy.MRENCLAVE, "mrsigner": KeyPolicy.MRSIGNER}[
                args[1]
            ]
            payload = bytes.fromhex(args[2])
            self.sealed = self.runtime.seal(handle, policy, payload)
            self.sealed_payload = payload
            self.last = 1
            return None

        if cmd == "unseal":
            if self.sealed is None:
                raise ScenarioError(line_no, "nothing has been sealed")
            handle = self._handle(args[0], line_no)
            recovered = self.runtime.unseal(handle, self.sealed)
            self.last_unseal_ok = int(recovered == self.sealed_payload)
            self.last = self.last_unseal_ok
            return self.last_unseal_ok

        if cmd == "expect":
            if args[0] == "mrenclave_eq":
                a = self._handle(args[1], line_no)
                b = self._handle(args[2], line_no)
                if a.mrenclave != b.mrenclave:
                    raise ScenarioError(
                        line_no,
                        f"expectation failed: mrenclave {a.mrenclave.hex()[:16]}..."
                        f" != {b.mrenclave.hex()[:16]}...",
                    )
                return True
            probe, op, value = args[0], args[1], int(args[2], 0)
            if op not in _OPS:
                raise ScenarioError(line_no, f"unknown operator {op!r}")
            actual = self.probe(probe, line_no)
            if not _OPS[op](actual, value):
                raise ScenarioError(
                    line_no, f"expectation failed: {probe} is {actual}, wanted {op} {value}"
                )
            return True

        raise ScenarioError(line_no, f"unknown command {cmd!r}")


def run_scenario(
    path,
    config: Optional[Config] = None,
    mode_override: Optional[str] = None,
    swap_dir=None,
) -> ScenarioResult:
    runner = ScenarioRunner(
        config or Config(), mode_override=mode_override, swap_dir=swap_dir
    )
    return runner.run_file(path)
