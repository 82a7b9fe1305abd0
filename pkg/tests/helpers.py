"""Shared test plumbing: raw enclave builders and common constants."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from ccxsim.config import Config
from ccxsim.machine import Machine
from ccxsim.memory import GRANULE_SIZE, PageType, Perms
from ccxsim.structs import Attributes, SecInfo, Tcs

BASE = 1 << 33

SMALL = dict(granule_count=512, epc_base=32, epc_size=128)


def small_config(**overrides) -> Config:
    params = dict(SMALL)
    params.setdefault("audit_after_leaf", True)
    params.update(overrides)
    return Config(**params)


def free_epc_granules(m: Machine, n: int) -> List[int]:
    mem = m.memory
    if mem.mode.is_fixed:
        span = range(mem.mode.epc_base, mem.mode.epc_base + mem.mode.epc_size)
    else:
        span = range(2, mem.granule_count)
    out = [g for g in span if mem.is_free(g)][:n]
    assert len(out) == n, "fixture ran out of EPC granules"
    return out


def free_host_granule(m: Machine) -> int:
    mem = m.memory
    for g in range(2, mem.granule_count):
        if mem.is_free(g) and not (mem.mode.is_fixed and mem.epc_admissible(g)):
            return g
    raise AssertionError("no free host granule")


@dataclass
class RawEnclave:
    """An enclave built directly through the leaf interface."""

    eid: int
    base: int
    size: int
    secs_granule: int
    pages: Dict[int, int]  # enclave-relative offset -> granule
    tcs_offsets: List[int] = field(default_factory=list)

    def granule(self, offset: int) -> int:
        return self.pages[offset]


def build_raw_enclave(
    m: Machine,
    *,
    size: int = 1 << 21,
    page_specs: Optional[List[Tuple[int, str, bytes]]] = None,
    tcs_specs: Optional[List[dict]] = None,
    attributes: Optional[Attributes] = None,
    init: bool = True,
    measure: bool = True,
    signer: str = "default",
    isv_prod_id: int = 1,
    isv_svn: int = 1,
) -> RawEnclave:
    """Assemble an enclave with explicit leaf calls; defaults give one rwx
    page at 0x0 and one rw page at 0x1000 with deterministic content."""
    if page_specs is None:
        page_specs = [
            (0x0000, "rwx", b"\x11" * GRANULE_SIZE),
            (0x1000, "rw", b"\x22" * GRANULE_SIZE),
        ]
    attributes = attributes or Attributes(debug=True)
    needed = 1 + len(page_specs) + len(tcs_specs or [])
    granules = free_epc_granules(m, needed)
    secs_granule = granules.pop(0)
    eid = m.leaf("ECREATE", secs_granule, size, 1, attributes, BASE)

    def add(off: int, secinfo: SecInfo, content: bytes) -> int:
        g = granules.pop(0)
        if m.memory.mode.is_fixed:
            m.leaf("EADD", eid, BASE + off, secinfo, g, content)
        else:
            # dynamic mode assigns in place: stage the content first
            m.host_write(g, 0, content)
            m.leaf("EADD", eid, BASE + off, secinfo, g)
        pages[off] = g
        if measure:
            for chunk in range(0, GRANULE_SIZE, 256):
                m.leaf("EEXTEND", eid, BASE + off + chunk)
        return g

    pages: Dict[int, int] = {}
    for off, perms, content in page_specs:
        content = content.ljust(GRANULE_SIZE, b"\0")[:GRANULE_SIZE]
        add(off, SecInfo(Perms.parse(perms), PageType.REG), content)

    tcs_offsets = []
    for spec in tcs_specs or []:
        tcs = Tcs(
            oentry=spec.get("oentry", 0x0),
            ossa=spec["ossa"],
            nssa=spec.get("nssa", 2),
            tls_base=spec.get("tls_base", 0),
            aexnotify=spec.get("aexnotify", False),
        )
        add(spec["vaddr"], SecInfo(Perms.NONE, PageType.TCS), tcs.pack())
        tcs_offsets.append(spec["vaddr"])

    if init:
        secs = m.enclaves[eid]
        sig = m.crypto.sign_sigstruct(
            secs.mrenclave_state.copy().final(),
            secs.attributes.signed_view(),
            isv_prod_id,
            isv_svn,
            signer,
        )
        m.leaf("EINIT", eid, sig)

    return RawEnclave(
        eid=eid, base=BASE, size=size, secs_granule=secs_granule,
        pages=pages, tcs_offsets=tcs_offsets,
    )
