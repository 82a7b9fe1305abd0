"""Host runtime: the untrusted stack driving the machine.

Plays the kernel driver plus the untrusted runtime library: loads enclaves
from manifests, dispatches calls into enclaves and outside calls back to host
handlers, demand-pages swapped content back in, and manages the fixed EPC by
evicting pages through the block/track/writeback protocol.

Driver ABI (documented contract with fixture programs):

    call in     x2 selector, x3/x4 arguments; larger payloads go through an
                untrusted shared buffer granule whose address rides in x4
    call out    enclave exits to the return gate with the result in x3
    outside call
                enclave exits to the ocall gate with x5 selector, x6/x7
                arguments; on re-entry x2 holds OCALL_RESUME and x5 the result
    gates       x10 return gate, x11 ocall gate (set by the driver on entry)
    async exit  lands on the aep gate; the driver resumes or reports

Gate addresses live on a reserved host granule that reads as zeroes, so a
vCPU arriving there halts and hands control back to the driver loop.
"""

from __future__ import annotations

import hmac as hmac_mod
import json
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

from .errors import AuthenticationFailure, ModelError, SgxError
from .machine import Machine
from .manifest import EnclaveManifest
from .memory import GRANULE_SIZE, PageType, Perms
from .microprograms import DEFAULT_ENCLAVE_BASE
from .structs import (
    EXIT_IRQ,
    EXIT_PAGEFAULT,
    KeyName,
    KeyRequest,
    Report,
    SecInfo,
    SwapBlob,
    TargetInfo,
    VA_SLOT_COUNT,
    eadd_record,
    ecreate_record,
    eextend_record,
)

GATE_GRANULE = 1
RETURN_GATE = GATE_GRANULE * GRANULE_SIZE + 0x0
OCALL_GATE = GATE_GRANULE * GRANULE_SIZE + 0x100
AEP_GATE = GATE_GRANULE * GRANULE_SIZE + 0x200

OCALL_RESUME = 0xFFFF_FFFF

# Builtin outside calls
OCALL_EAUG = 0x10  # enclave asks the host to add a dynamic page at x6
OCALL_HOSTADD = 0x42  # demo host function: returns 2*a + b + 5

LEAF_ERESUME = 0x3


class LoadError(Exception):
    """An enclave build step failed; identifies the failing step."""

    def __init__(self, step: str, cause: Exception):
        self.step = step
        self.cause = cause
        super().__init__(f"{step}: {cause}")


@dataclass
class FaultReport:
    kind: str  # gpf | pagefault | ssa_overflow | abort | timeout | halt_inside | dispatch_fault
    detail: str = ""
    vaddr: Optional[int] = None
    events: List[dict] = field(default_factory=list)


class EnclaveFault(Exception):
    def __init__(self, report: FaultReport):
        self.report = report
        super().__init__(f"enclave fault: {report.kind} {report.detail}")


@dataclass
class SealedBlob:
    policy: int
    isv_svn: int
    keyid: bytes
    nonce: bytes
    ciphertext: bytes
    mac: bytes


@dataclass
class AttestOutcome:
    a_to_b: bool
    b_to_a: bool
    report_ab: Report
    report_ba: Report

    @property
    def mutual(self) -> bool:
        return self.a_to_b and self.b_to_a


@dataclass
class EnclaveHandle:
    name: str
    eid: int
    base: int
    manifest: EnclaveManifest
    mrenclave: bytes
    mrsigner: bytes
    signer_label: Optional[str]
    tcs_vaddrs: List[int]  # absolute
    double_mappings: List[dict] = field(default_factory=list)


@dataclass
class _StoredBlob:
    blob: SwapBlob
    va_granule: int
    slot: int


class SwapStore:
    """Host-side store for evicted pages, optionally mirrored to a directory
    of blob files (one JSON file per page: ciphertext, metadata, slot ref)."""

    def __init__(self, directory: Optional[Path] = None):
        self.directory = Path(directory) if directory else None
        if self.directory:
            self.directory.mkdir(parents=True, exist_ok=True)
        self._blobs: Dict[Tuple[Optional[int], int], _StoredBlob] = {}

    def _path(self, key) -> Path:
        eid, vaddr = key
        return self.directory / f"e{0 if eid is None else eid}_v{vaddr:012x}.blob"

    def put(self, eid: Optional[int], vaddr: int, stored: _StoredBlob) -> None:
        key = (eid, vaddr)
        if key in self._blobs:
            raise ModelError(f"swap store already holds {key}")
        self._blobs[key] = stored
        if self.directory:
            doc = {
                "eid": eid,
                "vaddr": vaddr,
                "va_granule": stored.va_granule,
                "slot": stored.slot,
                "ciphertext": stored.blob.ciphertext.hex(),
                "pcmd": stored.blob.pcmd.pack().hex(),
            }
            self._path(key).write_text(json.dumps(doc, sort_keys=True))

    def pop(self, eid: Optional[int], vaddr: int) -> _StoredBlob:
        stored = self._blobs.pop((eid, vaddr))
        if self.directory:
            self._path((eid, vaddr)).unlink(missing_ok=True)
        return stored

    def has(self, eid: Optional[int], vaddr: int) -> bool:
        return (eid, vaddr) in self._blobs

    def keys_for(self, eid: Optional[int]) -> List[int]:
        return sorted(v for (e, v) in self._blobs if e == eid)

    def refresh_from_directory(self) -> None:
        """Re-read blob files; lets tests exercise on-disk tampering."""
        if not self.directory:
            raise ModelError("swap store has no backing directory")
        from .structs import Pcmd

        self._blobs.clear()
        for path in sorted(self.directory.glob("*.blob")):
            doc = json.loads(path.read_text())
            eid = doc["eid"]
            blob = SwapBlob(
                ciphertext=bytes.fromhex(doc["ciphertext"]),
                pcmd=Pcmd.unpack(bytes.fromhex(doc["pcmd"])),
            )
            self._blobs[(eid, doc["vaddr"])] = _StoredBlob(
                blob=blob, va_granule=doc["va_granule"], slot=doc["slot"]
            )


class HostRuntime:
    """Loader, call dispatcher, and swap manager over one machine."""

    def __init__(self, machine: Machine, swap_dir: Optional[Path] = None):
        self.machine = machine
        self.store = SwapStore(swap_dir)
        self.handles: Dict[int, EnclaveHandle] = {}
        self.ocall_handlers: Dict[int, Callable] = {
            OCALL_EAUG: _ocall_eaug,
            OCALL_HOSTADD: _ocall_hostadd,
        }
        self.victim_filter: Callable = self._default_victim_filter
        self.swap_out_events = 0
        self.swap_in_events = 0
        self._fifo: List[int] = []  # resident EPC granules, oldest first
        self._va_pages: List[int] = []
        self._free_slots: List[Tuple[int, int]] = []
        self._next_host_granule = 2  # skip reserved granules

    # ------------------------------------------------------------------ alloc

    def _free_epc_granule(self, after: int = -1) -> Optional[int]:
        mem = self.machine.memory
        if mem.mode.is_fixed:
            span = range(mem.mode.epc_base, mem.mode.epc_base + mem.mode.epc_size)
        else:
            span = range(2, mem.granule_count)
        for g in span:
            if g > after and mem.is_free(g):
                return g
        return None

    def take_epc_granule(self) -> int:
        """A free EPC granule, evicting through the writeback protocol when
        the fixed window is exhausted.  Dynamic mode never needs eviction."""
        mem = self.machine.memory
        while True:
            g = self._free_epc_granule()
            if g is None:
                if not mem.mode.is_fixed:
                    raise ModelError("physical memory exhausted in dynamic mode")
                self._evict_one()
                continue
            if (
                mem.mode.is_fixed
                and not self._free_slots
                and self._free_epc_granule(after=g) is None
            ):
                # Last free granule and no version capacity left: convert it
                # to a version array so the writeback protocol stays possible,
                # then evict for the actual request.
                self.machine.leaf("EPA", g)
                self._va_pages.append(g)
                self._free_slots.extend((g, s) for s in range(VA_SLOT_COUNT))
                continue
            return g

    def _host_usable(self, g: int) -> bool:
        # In fixed mode host allocations stay out of the EPC window; in
        # dynamic mode any free granule serves.
        mem = self.machine.memory
        if not mem.is_free(g):
            return False
        return not (mem.mode.is_fixed and mem.epc_admissible(g))

    def take_host_granule(self) -> int:
        mem = self.machine.memory
        for g in range(self._next_host_granule, mem.granule_count):
            if self._host_usable(g):
                self._next_host_granule = g + 1
                return g
        # wrap around: earlier granules may have been freed
        for g in range(2, mem.granule_count):
            if self._host_usable(g):
                return g
        raise ModelError("no free host granule")

    # ------------------------------------------------------------------ victim

    def _default_victim_filter(self, granule: int) -> bool:
        m = self.machine
        entry = m.memory.epcm.get(granule)
        if entry is None or not entry.valid or entry.blocked:
            return False
        if entry.page_type not in (PageType.REG, PageType.TCS):
            return False
        if entry.owner is None:
            return False
        secs = m.enclaves.get(entry.owner)
        if secs is None or not secs.initialized or secs.crashed:
            return False
        # Never touch an enclave that currently has threads inside, and keep
        # interrupted thread state (TCS with saved frames, its SSA pages)
        # resident so resume paths stay simple.
        if any(n > 0 for n in secs.entered_counts.values()):
            return False
        if entry.page_type == PageType.TCS:
            tcs = m.tcs_registry.get(granule)
            if tcs is None or tcs.busy or tcs.cssa > 0:
                return False
        else:
            for tg, tcs in m.tcs_registry.items():
                towner = m.memory.epcm.get(tg)
                if towner is None or towner.owner != entry.owner:
                    continue
                if tcs.cssa > 0 or tcs.busy:
                    lo = secs.base + tcs.ossa
                    hi = lo + tcs.nssa * secs.ssa_frame_size * GRANULE_SIZE
                    if lo <= entry.vaddr < hi:
                        return False
        return True

    def _evict_one(self) -> None:
        m = self.machine
        rotated = 0
        while self._fifo:
            g = self._fifo.pop(0)
            entry = m.memory.epcm.get(g)
            if entry is None or not entry.valid:
                continue  # stale
            if not self.victim_filter(g):
                self._fifo.append(g)
                rotated += 1
                if rotated > len(self._fifo) + 1:
                    break
                continue
            owner = entry.owner
            vaddr = entry.vaddr
            if not self._free_slots:
                raise ModelError("no version slot free for eviction")
            va_g, slot = self._free_slots.pop(0)
            try:
                m.leaf("EBLOCK", g)
                m.leaf("ETRACK", owner)
                blob = m.leaf("EWB", g, va_g, slot)
            except SgxError:
                self._free_slots.insert(0, (va_g, slot))
                raise
            self.store.put(owner, vaddr, _StoredBlob(blob, va_g, slot))
            self.swap_out_events += 1
            return
        raise ModelError("EPC exhausted and no evictable page found")

    # ------------------------------------------------------------------ loader

    def predict_measurement(self, manifest: EnclaveManifest) -> bytes:
        """What the build measurement will be; signer-side tooling."""
        state = self.machine.crypto.hash_init()
        state.absorb(ecreate_record(manifest.ssa_frame_size, manifest.size))
        for spec in manifest.pages:
            for i in range(spec.page_count):
                off = spec.vaddr + i * GRANULE_SIZE
                page = spec.content[i * GRANULE_SIZE : (i + 1) * GRANULE_SIZE]
                state.absorb(eadd_record(off, SecInfo(spec.perms, PageType.REG)))
                if spec.measured:
                    for chunk in range(0, GRANULE_SIZE, 256):
                        state.absorb(eextend_record(off + chunk))
                        for blk in range(0, 256, 64):
                            state.absorb(page[chunk + blk : chunk + blk + 64])
        for spec in manifest.tcs:
            page = spec.build(manifest.nssa).pack()
            state.absorb(eadd_record(spec.vaddr, SecInfo(Perms.NONE, PageType.TCS)))
            if spec.measured:
                for chunk in range(0, GRANULE_SIZE, 256):
                    state.absorb(eextend_record(spec.vaddr + chunk))
                    for blk in range(0, 256, 64):
                        state.absorb(page[chunk + blk : chunk + blk + 64])
        return state.final()

    def _add_page(self, eid: int, vaddr: int, secinfo: SecInfo, content: bytes) -> int:
        m = self.machine
        if m.memory.mode.is_fixed:
            target = self.take_epc_granule()
            m.leaf("EADD", eid, vaddr, secinfo, target, content)
        else:
            # Dynamic assignment in place: the page keeps its physical granule,
            # and the host records a second mapping at the enclave address so
            # its own bookkeeping matches what a copying implementation shows.
            target = self.take_host_granule()
            m.host_write(target, 0, content)
            m.leaf("EADD", eid, vaddr, secinfo, target)
        self._fifo.append(target)
        return target

    def load_enclave(self, manifest: EnclaveManifest) -> EnclaveHandle:
        m = self.machine
        manifest.validate()
        base = DEFAULT_ENCLAVE_BASE

        step = "ecreate"
        try:
            secs_granule = self.take_epc_granule()
            eid = m.leaf(
                "ECREATE", secs_granule, manifest.size, manifest.ssa_frame_size,
                manifest.attributes, base,
            )
        except SgxError as exc:
            raise LoadError(step, exc) from exc

        mappings: List[dict] = []
        try:
            for idx, spec in enumerate(manifest.pages):
                for i in range(spec.page_count):
                    off = spec.vaddr + i * GRANULE_SIZE
                    step = f"eadd page[{idx}]+{i} at {off:#x}"
                    page = spec.content[i * GRANULE_SIZE : (i + 1) * GRANULE_SIZE]
                    g = self._add_page(eid, base + off, SecInfo(spec.perms, PageType.REG), page)
                    if not m.memory.mode.is_fixed:
                        mappings.append(
                            {"vaddr": base + off, "granule": g,
                             "host_alias": g * GRANULE_SIZE}
                        )
                    if spec.measured:
                        step = f"eextend page[{idx}]+{i}"
                        for chunk in range(0, GRANULE_SIZE, 256):
                            m.leaf("EEXTEND", eid, base + off + chunk)
            tcs_vaddrs = []
            for idx, spec in enumerate(manifest.tcs):
                step = f"eadd tcs[{idx}] at {spec.vaddr:#x}"
                page = spec.build(manifest.nssa).pack()
                g = self._add_page(
                    eid, base + spec.vaddr, SecInfo(Perms.NONE, PageType.TCS), page
                )
                if not m.memory.mode.is_fixed:
                    mappings.append(
                        {"vaddr": base + spec.vaddr, "granule": g,
                         "host_alias": g * GRANULE_SIZE}
                    )
                tcs_vaddrs.append(base + spec.vaddr)
                if spec.measured:
                    step = f"eextend tcs[{idx}]"
                    for chunk in range(0, GRANULE_SIZE, 256):
                        m.leaf("EEXTEND", eid, base + spec.vaddr + chunk)

            step = "sigstruct"
            signer_label: Optional[str] = None
            source = manifest.sigstruct_source
            if source == "test-key" or source.startswith("test-key:"):
                signer_label = source.partition(":")[2] or "default"
                sig = m.crypto.sign_sigstruct(
                    self.predict_measurement(manifest),
                    manifest.attributes.signed_view(),
                    manifest.isv_prod_id,
                    manifest.isv_svn,
                    signer_label,
                )
            elif source.startswith("file:"):
                if manifest.base_dir is None:
                    raise ModelError("sigstruct file needs a manifest directory")
                from .structs import SigStruct

                sig = SigStruct.from_bytes(
                    (manifest.base_dir / source[5:]).read_bytes()
                )
            else:
                raise ModelError(f"unknown sigstruct source {source!r}")

            step = "einit"
            m.leaf("EINIT", eid, sig)
        except (SgxError, ModelError) as exc:
            raise LoadError(step, exc) from exc

        secs = m.enclaves[eid]
        handle = EnclaveHandle(
            name=manifest.name,
            eid=eid,
            base=base,
            manifest=manifest,
            mrenclave=secs.mrenclave,
            mrsigner=secs.mrsigner,
            signer_label=signer_label,
            tcs_vaddrs=tcs_vaddrs,
            double_mappings=mappings,
        )
        self.handles[eid] = handle
        return handle

    def destroy(self, handle: EnclaveHandle) -> None:
        m = self.machine
        # Swapped pages are reloaded first so their version slots retire
        # through the architectural path.
        for vaddr in self.store.keys_for(handle.eid):
            self.swap_in(handle, vaddr)
        secs_granule = m.enclaves[handle.eid].secs_granule
        for g in m.memory.valid_pages(handle.eid):
            if g != secs_granule:
                m.leaf("EREMOVE", g)
        m.leaf("EREMOVE", secs_granule)
        self.handles.pop(handle.eid, None)

    # ------------------------------------------------------------------ swap

    def swap_out(self, handle: EnclaveHandle, vaddr: int) -> None:
        m = self.machine
        g = m.memory.find_page(handle.eid, vaddr)
        if g is None:
            raise ModelError(f"no resident page at {vaddr:#x}")
        if not self._free_slots:
            va_g = self.take_epc_granule()
            m.leaf("EPA", va_g)
            self._va_pages.append(va_g)
            self._free_slots.extend((va_g, s) for s in range(VA_SLOT_COUNT))
        va_g, slot = self._free_slots.pop(0)
        try:
            m.leaf("EBLOCK", g)
            m.leaf("ETRACK", handle.eid)
            blob = m.leaf("EWB", g, va_g, slot)
        except SgxError:
            self._free_slots.insert(0, (va_g, slot))
            raise
        self.store.put(handle.eid, vaddr, _StoredBlob(blob, va_g, slot))
        self.swap_out_events += 1

    def swap_in(self, handle: EnclaveHandle, vaddr: int) -> None:
        m = self.machine
        stored = self.store.pop(handle.eid, vaddr)
        target = self.take_epc_granule()
        m.leaf(
            "ELDU",
            stored.blob.ciphertext,
            stored.blob.pcmd,
            stored.va_granule,
            stored.slot,
            target,
            handle.eid,
        )
        self._free_slots.append((stored.va_granule, stored.slot))
        self._fifo.append(target)
        self.swap_in_events += 1

    def _ensure_resident(self, handle: EnclaveHandle, vaddr: int) -> None:
        page = vaddr & ~(GRANULE_SIZE - 1)
        if self.machine.memory.find_page(handle.eid, page) is None and self.store.has(
            handle.eid, page
        ):
            self.swap_in(handle, page)

    def _ensure_tcs_ready(self, handle: EnclaveHandle, tcs_vaddr: int) -> int:
        self._ensure_resident(handle, tcs_vaddr)
        m = self.machine
        tcs_granule = m.memory.find_page(handle.eid, tcs_vaddr)
        if tcs_granule is None:
            raise ModelError(f"TCS at {tcs_vaddr:#x} is neither resident nor swapped")
        tcs = m.tcs_registry[tcs_granule]
        secs = m.enclaves[handle.eid]
        for i in range(tcs.cssa):
            frame_vaddr = secs.base + tcs.ossa + i * secs.ssa_frame_size * GRANULE_SIZE
            self._ensure_resident(handle, frame_vaddr)
        return tcs_granule

    # ------------------------------------------------------------------ calls

    def register_ocall(self, selector: int, handler: Callable) -> None:
        self.ocall_handlers[selector] = handler

    @contextmanager
    def entered(self, handle: EnclaveHandle, tcs_index: int = 0, vcpu_index: int = 0):
        """Enter an enclave for driver-level leaf calls, exit on the way out."""
        m = self.machine
        vcpu = m.vcpus[vcpu_index]
        tcs_granule = self._ensure_tcs_ready(handle, handle.tcs_vaddrs[tcs_index])
        m.enclu(vcpu, 0x2, tcs_granule, AEP_GATE)
        try:
            yield vcpu
        finally:
            if vcpu.in_enclave:
                m.enclu(vcpu, 0x4, RETURN_GATE)

    def ecall(
        self,
        handle: EnclaveHandle,
        tcs_index: int,
        selector: int,
        arg1: int = 0,
        arg2: int = 0,
        vcpu_index: int = 0,
        inject_at=None,
        step_budget: Optional[int] = None,
    ) -> int:
        """Marshal a call into the enclave and run it to completion.

        ``inject_at`` is either "every" or a collection of step numbers at
        which to inject an interrupt (counted over enclave-mode steps of this
        call).  Raises :class:`EnclaveFault` on any unrecovered fault.
        """
        m = self.machine
        vcpu = m.vcpus[vcpu_index]
        if vcpu.in_enclave:
            raise ModelError(f"vcpu {vcpu.id} is already inside an enclave")
        budget = step_budget or m.config.max_ecall_steps
        schedule = inject_at
        if schedule is not None and schedule != "every":
            schedule = set(schedule)

        tcs_vaddr = handle.tcs_vaddrs[tcs_index]
        tcs_granule = self._ensure_tcs_ready(handle, tcs_vaddr)
        vcpu.regs[2] = selector
        vcpu.regs[3] = arg1
        vcpu.regs[4] = arg2
        vcpu.regs[10] = RETURN_GATE
        vcpu.regs[11] = OCALL_GATE
        m.enclu(vcpu, 0x2, tcs_granule, AEP_GATE)

        events: List[dict] = []
        steps = 0
        while True:
            if steps >= budget:
                raise EnclaveFault(FaultReport("timeout", f"{steps} steps", events=events))

            if vcpu.in_enclave and schedule is not None:
                if schedule == "every":
                    chunk = 1
                else:
                    upcoming = [s for s in schedule if s > steps]
                    chunk = (min(upcoming) - steps) if upcoming else (budget - steps)
            else:
                chunk = budget - steps
            report = m.step(vcpu, max(1, min(chunk, budget - steps)))
            steps += report.steps
            events.extend(report.events)

            if (
                vcpu.in_enclave
                and schedule is not None
                and report.stop == "limit"
                and (schedule == "every" or steps in schedule)
            ):
                m.inject_interrupt(vcpu)
                continue

            if report.stop == "limit":
                continue
            if report.stop == "abort":
                raise EnclaveFault(FaultReport("abort", events=events))
            if report.stop == "fault":
                kind = report.events[-1]["kind"] if report.events else "fault"
                raise EnclaveFault(FaultReport(kind, str(report.events[-1:]), events=events))
            # stop == halt; gate pages read as zeroes, so the pc still points
            # at the gate the program landed on
            if vcpu.in_enclave:
                raise EnclaveFault(
                    FaultReport("halt_inside", f"pc={vcpu.pc:#x}", events=events)
                )
            if vcpu.pc == RETURN_GATE:
                return vcpu.regs[3]
            if vcpu.pc == OCALL_GATE:
                self._handle_ocall(handle, vcpu, events)
                # the idle TCS may have been evicted while the handler ran
                tcs_granule = self._ensure_tcs_ready(handle, tcs_vaddr)
                m.enclu(vcpu, 0x2, tcs_granule, AEP_GATE)
                continue
            if vcpu.pc == AEP_GATE:
                done = self._handle_aex(handle, vcpu, tcs_granule, events)
                if done is not None:
                    raise EnclaveFault(done)
                continue
            raise EnclaveFault(
                FaultReport("halt_inside", f"host halted at {vcpu.pc:#x}", events=events)
            )

    def _handle_ocall(self, handle: EnclaveHandle, vcpu, events: List[dict]) -> None:
        selector = vcpu.regs[5]
        handler = self.ocall_handlers.get(selector)
        if handler is None:
            raise EnclaveFault(
                FaultReport("dispatch_fault", f"no ocall handler {selector:#x}", events=events)
            )
        ctx = OcallContext(runtime=self, handle=handle)
        result = handler(ctx, vcpu.regs[6], vcpu.regs[7])
        vcpu.regs[2] = OCALL_RESUME
        vcpu.regs[5] = 0 if result is None else int(result)
        vcpu.regs[10] = RETURN_GATE
        vcpu.regs[11] = OCALL_GATE

    def _handle_aex(
        self, handle: EnclaveHandle, vcpu, tcs_granule: int, events: List[dict]
    ) -> Optional[FaultReport]:
        m = self.machine
        secs = m.enclaves.get(handle.eid)
        if secs is None or secs.crashed:
            return FaultReport("ssa_overflow", "enclave crashed", events=events)
        reason, payload = vcpu.last_exit or (0, 0)
        if reason == EXIT_PAGEFAULT:
            page = payload & ~(GRANULE_SIZE - 1)
            if self.store.has(handle.eid, page):
                self.swap_in(handle, page)
            else:
                return FaultReport("pagefault", f"at {payload:#x}", payload, events)
        elif reason == EXIT_IRQ:
            pass  # scheduled injection; just resume
        else:
            return FaultReport("gpf", f"enclave fault at {payload:#x}", payload, events)
        m.enclu(vcpu, LEAF_ERESUME, tcs_granule, AEP_GATE)
        return None

    # ------------------------------------------------------------------ attest

    def get_report(
        self, handle: EnclaveHandle, target: EnclaveHandle, reportdata: bytes
    ) -> Report:
        with self.entered(handle) as vcpu:
            return self.machine.enclu(
                vcpu, 0x0, TargetInfo(target.mrenclave), reportdata
            )

    def verify_report(self, handle: EnclaveHandle, report: Report) -> bool:
        """Target-side verification: rederive the report key, compare MACs."""
        with self.entered(handle) as vcpu:
            key = self.machine.enclu(
                vcpu, 0x1, KeyRequest(KeyName.REPORT, keyid=report.keyid)
            )
        expected = self.machine.crypto.report_mac(key, report.body_bytes())
        return hmac_mod.compare_digest(expected, report.mac)

    def attest(
        self, a: EnclaveHandle, b: EnclaveHandle, reportdata: bytes = bytes(64)
    ) -> AttestOutcome:
        report_ab = self.get_report(a, b, reportdata)
        report_ba = self.get_report(b, a, reportdata)
        return AttestOutcome(
            a_to_b=self.verify_report(b, report_ab),
            b_to_a=self.verify_report(a, report_ba),
            report_ab=report_ab,
            report_ba=report_ba,
        )

    # ------------------------------------------------------------------ sealing

    def seal(
        self,
        handle: EnclaveHandle,
        policy: int,
        payload: bytes,
        svn: Optional[int] = None,
    ) -> SealedBlob:
        m = self.machine
        secs = m.enclaves[handle.eid]
        isv_svn = secs.isv_svn if svn is None else svn
        keyid = m.rand_bytes(32)
        request = KeyRequest(KeyName.SEAL, policy, isv_svn, keyid)
        with self.entered(handle) as vcpu:
            key = m.enclu(vcpu, 0x1, request)
        nonce = m.rand_bytes(12)
        aad = bytes([policy, isv_svn & 0xFF])
        ct, mac = m.crypto.blob_seal(key, nonce, payload, aad)
        return SealedBlob(policy, isv_svn, keyid, nonce, ct, mac)

    def unseal(self, handle: EnclaveHandle, blob: SealedBlob) -> Optional[bytes]:
        m = self.machine
        request = KeyRequest(KeyName.SEAL, blob.policy, blob.isv_svn, blob.keyid)
        try:
            with self.entered(handle) as vcpu:
                key = m.enclu(vcpu, 0x1, request)
        except SgxError:
            return None
        aad = bytes([blob.policy, blob.isv_svn & 0xFF])
        try:
            return m.crypto.blob_unseal(key, blob.nonce, blob.ciphertext, aad, blob.mac)
        except AuthenticationFailure:
            return None


@dataclass
class OcallContext:
    """What an outside-call handler gets: host-level machine access only.

    Reads and writes go through normal-world checked paths, so a handler that
    reaches for enclave memory takes a protection fault like any other host
    software."""

    runtime: HostRuntime
    handle: EnclaveHandle

    def read(self, address: int, length: int) -> bytes:
        return self.runtime.machine.host_read(
            address // GRANULE_SIZE, address % GRANULE_SIZE, length
        )

    def write(self, address: int, data: bytes) -> None:
        self.runtime.machine.host_write(
            address // GRANULE_SIZE, address % GRANULE_SIZE, data
        )


def _ocall_eaug(ctx: OcallContext, vaddr: int, _arg2: int) -> int:
    """Builtin: the enclave asks the host to augment a page at `vaddr`."""
    rt = ctx.runtime
    m = rt.machine
    if m.memory.mode.is_fixed:
        target = rt.take_epc_granule()
    else:
        target = rt.take_host_granule()
    m.leaf("EAUG", ctx.handle.eid, vaddr, target)
    rt._fifo.append(target)
    return 0


def _ocall_hostadd(ctx: OcallContext, a: int, b: int) -> int:
    return (2 * a + b + 5) & ((1 << 64) - 1)
