"""The machine: memory, crypto, cores, and the serialized leaf dispatch.

One Machine is one simulated platform.  All microprogram execution funnels
through :meth:`Machine.encls` / :meth:`Machine.enclu`, which take the global
execution token, count and cost the invocation, run the handler atomically,
and optionally audit the protection-table invariants afterwards.  vCPUs may
be driven from separate threads; the token serializes every mutation.
"""

from __future__ import annotations

import random
import threading
from typing import Any, Callable, Dict, List, Optional, Tuple

from . import execution, microprograms as mp
from .config import Config
from .crypto import CryptoEngine, DeviceSecrets
from .errors import ModelError, SgxError, SgxErrorCode as E
from .execution import VCpu
from .memory import GRANULE_SIZE, MachineMemory, PageType
from .structs import Secs, Tcs

# Leaf tables: number -> (name, handler).  Handlers take the machine first;
# ENCLU handlers additionally take the executing vcpu.
ENCLS_TABLE: Dict[int, Tuple[str, Callable]] = {
    0x0: ("ECREATE", mp.ecreate),
    0x1: ("EADD", mp.eadd),
    0x2: ("EINIT", mp.einit),
    0x3: ("EREMOVE", mp.eremove),
    0x4: ("EDBGRD", mp.edbgrd),
    0x5: ("EDBGWR", mp.edbgwr),
    0x6: ("EEXTEND", mp.eextend),
    0x7: ("ELDB", mp.eldb),
    0x8: ("ELDU", mp.eldu),
    0x9: ("EBLOCK", mp.eblock),
    0xA: ("EPA", mp.epa),
    0xB: ("EWB", mp.ewb),
    0xC: ("ETRACK", mp.etrack),
    0xD: ("EAUG", mp.eaug),
    0xE: ("EMODPR", mp.emodpr),
    0xF: ("EMODT", mp.emodt),
}

ENCLU_TABLE: Dict[int, Tuple[str, Callable]] = {
    0x0: ("EREPORT", mp.ereport),
    0x1: ("EGETKEY", mp.egetkey),
    0x2: ("EENTER", execution.eenter),
    0x3: ("ERESUME", execution.eresume),
    0x4: ("EEXIT", execution.eexit),
    0x5: ("EACCEPT", mp.eaccept),
    0x6: ("EMODPE", mp.emodpe),
    0x7: ("EACCEPTCOPY", mp.eacceptcopy),
    0x9: ("EDECCSSA", mp.edeccssa),
}

ALL_LEAF_NAMES = sorted(
    {name for name, _ in ENCLS_TABLE.values()} | {name for name, _ in ENCLU_TABLE.values()}
)

LEAF_NUMBERS: Dict[str, Tuple[str, int]] = {}
for num, (name, _) in ENCLS_TABLE.items():
    LEAF_NUMBERS[name] = ("encls", num)
for num, (name, _) in ENCLU_TABLE.items():
    LEAF_NUMBERS[name] = ("enclu", num)


def _leaf_costs(config: Config) -> Dict[str, int]:
    base = config.leaf_base_cost
    f = config.cost_factors
    costs = dict(base)
    costs["ECREATE"] = base["ECREATE"] + f["gpt_per_granule"] * config.granule_count
    costs["EADD"] = base["EADD"] + f["hash_block"]
    costs["EEXTEND"] = base["EEXTEND"] + 5 * f["hash_block"]
    costs["EINIT"] = base["EINIT"] + f["sig_verify"]
    for leaf in ("EWB", "ELDU", "ELDB"):
        costs[leaf] = base[leaf] + f["aead_page"]
    costs["EGETKEY"] = base["EGETKEY"] + f["kdf"]
    costs["EREPORT"] = base["EREPORT"] + f["kdf"] + f["mac"]
    return costs


class Machine:
    def __init__(self, config: Optional[Config] = None):
        self.config = config or Config()
        self.config.validate()
        self.memory = MachineMemory(self.config.granule_count, self.config.memory_mode())
        self.crypto = CryptoEngine(DeviceSecrets.from_seed_int(self.config.crypto_seed))
        self.enclaves: Dict[int, Secs] = {}
        self.tcs_registry: Dict[int, Tcs] = {}
        self.vcpus: List[VCpu] = [VCpu(id=i) for i in range(self.config.vcpu_count)]
        self.counters: Dict[str, int] = {name: 0 for name in ALL_LEAF_NAMES}
        self.cost_tally: Dict[str, int] = {name: 0 for name in ALL_LEAF_NAMES}
        self.leaf_cost = _leaf_costs(self.config)
        self.trace: List[dict] = []
        self._rng = random.Random(f"machine:{self.config.crypto_seed}")
        self._token = threading.RLock()
        self._next_eid = 1
        self._staged: Dict[int, Any] = {}
        self._next_stage_token = 1
        self.audit_after_leaf = self.config.audit_after_leaf

    # -- plumbing -------------------------------------------------------------

    def alloc_eid(self) -> int:
        eid = self._next_eid
        self._next_eid += 1
        return eid

    def rand_bytes(self, n: int) -> bytes:
        return self._rng.randbytes(n)

    def trace_event(self, kind: str, **payload) -> None:
        self.trace.append({"seq": len(self.trace), "kind": kind, **payload})

    def stage_params(self, obj: Any) -> int:
        """Hold a structured argument for a register-level leaf invocation.

        Stands in for a pointer to a kernel-memory parameter structure: the
        host stages the record, passes the token in a register, and the leaf
        consumes it exactly once.
        """
        token = self._next_stage_token
        self._next_stage_token += 1
        self._staged[token] = obj
        return token

    def take_params(self, token: int) -> Any:
        try:
            return self._staged.pop(token)
        except KeyError:
            raise SgxError(E.PAGE_INVALID, f"no staged parameters for token {token}") from None

    # -- leaf dispatch ----------------------------------------------------------

    def _dispatch(self, table, cls: str, leaf: int, args) -> Any:
        with self._token:
            entry = table.get(leaf)
            if entry is None:
                raise SgxError(E.INVALID_LEAF, f"{cls} leaf {leaf:#x} is undefined")
            name, handler = entry
            self.counters[name] += 1
            self.cost_tally[name] += self.leaf_cost[name]
            result = handler(self, *args)
            if self.audit_after_leaf:
                self.audit()
            return result

    def encls(self, leaf: int, *args) -> Any:
        return self._dispatch(ENCLS_TABLE, "ENCLS", leaf, args)

    def enclu(self, vcpu: VCpu, leaf: int, *args) -> Any:
        return self._dispatch(ENCLU_TABLE, "ENCLU", leaf, (vcpu,) + args)

    def leaf(self, name: str, *args, vcpu: Optional[VCpu] = None) -> Any:
        """Dispatch by name; convenience for drivers and tests."""
        cls, num = LEAF_NUMBERS[name]
        if cls == "encls":
            return self.encls(num, *args)
        if vcpu is None:
            raise ModelError(f"{name} is an ENCLU leaf and needs a vcpu")
        return self.enclu(vcpu, num, *args)

    def cpuid(self, leaf: int, subleaf: int) -> Tuple[int, int, int, int]:
        with self._token:
            return execution.cpuid_emulate(self, leaf, subleaf)

    def step(self, vcpu: VCpu, max_steps: int) -> execution.RunReport:
        with self._token:
            return execution.step(self, vcpu, max_steps)

    def inject_interrupt(self, vcpu: VCpu) -> None:
        with self._token:
            execution.inject_interrupt(self, vcpu)

    # -- host-visible memory helpers (normal-world access, checked) -------------

    def host_read(self, granule: int, offset: int, length: int) -> bytes:
        from .memory import AccessContext, SecurityState

        return self.memory.read_granule(
            AccessContext(SecurityState.NORMAL, None), granule, offset, length
        )

    def host_write(self, granule: int, offset: int, data: bytes) -> None:
        from .memory import AccessContext, SecurityState

        self.memory.write_granule(
            AccessContext(SecurityState.NORMAL, None), granule, offset, data
        )

    # -- invariants and snapshots ---------------------------------------------

    def audit(self) -> None:
        self.memory.audit()
        for granule, entry in self.memory.epcm.items():
            if entry.page_type == PageType.SECS:
                secs = self.enclaves.get(entry.owner)
                if secs is None or secs.secs_granule != granule:
                    raise ModelError(f"SECS granule {granule} owner link broken")
        busy_tcs = [g for g, t in self.tcs_registry.items() if t.busy]
        occupants = [v.cur_tcs for v in self.vcpus if v.in_enclave]
        if sorted(busy_tcs) != sorted(occupants):
            raise ModelError("busy TCS set does not match vcpu occupancy")
        for vcpu in self.vcpus:
            vcpu.check_invariants()

    def snapshot(self) -> dict:
        """Full structural dump; the inspect command redacts as needed."""
        enclaves = []
        for eid, secs in sorted(self.enclaves.items()):
            enclaves.append(
                {
                    "eid": eid,
                    "size": secs.size,
                    "base": secs.base,
                    "ssa_frame_size": secs.ssa_frame_size,
                    "initialized": secs.initialized,
                    "crashed": secs.crashed,
                    "debug": secs.attributes.debug,
                    "attributes": secs.attributes.encode(),
                    "mrenclave": secs.mrenclave.hex() if secs.mrenclave else None,
                    "mrsigner": secs.mrsigner.hex() if secs.mrsigner else None,
                    "isv_prod_id": secs.isv_prod_id,
                    "isv_svn": secs.isv_svn,
                    "secs_granule": secs.secs_granule,
                }
            )
        epcm = []
        contents = {}
        for granule in self.memory.valid_pages():
            e = self.memory.epcm[granule]
            epcm.append(
                {
                    "granule": granule,
                    "type": e.page_type.name,
                    "owner": e.owner,
                    "vaddr": e.vaddr,
                    "perms": e.perms.text(),
                    "blocked": e.blocked,
                    "pending": e.pending,
                    "modified": e.modified,
                    "staged_type": e.staged_type.name if e.staged_type else None,
                }
            )
            base = granule * GRANULE_SIZE
            contents[str(granule)] = bytes(
                self.memory.data[base : base + GRANULE_SIZE]
            ).hex()
        return {
            "config": self.config.to_dict(),
            "enclaves": enclaves,
            "epcm": epcm,
            "gpt": self.memory.gpts.snapshot_counts(),
            "granule_contents": contents,
            "counters": dict(self.counters),
            "gpf_count": len(self.memory.gpf_log),
        }
