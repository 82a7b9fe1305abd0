"""Physical memory, granule protection tables, and the EPC page map.

Physical memory is a flat array of 4 KiB granules.  Isolation is enforced by
a set of granule protection tables: one system table plus one table per live
enclave.  Every simulated load/store funnels through :meth:`MachineMemory.read_granule`
or :meth:`MachineMemory.write_granule`, which consult the active table for the
accessing context.  Enclave page metadata lives in the EPCM, which is modeled
as simulator-private state outside the addressable granule space (equivalent
to keeping it in root-world memory: no non-root accessor could ever reach it).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Tuple

from .errors import GranuleProtectionFault, ModelError

GRANULE_SIZE = 4096

# Granules 0 and 1 are never handed out: 0 catches null-ish addresses, 1 is
# the host runtime's gate page (return / ocall / aep landing addresses).
RESERVED_GRANULES = 2


class Pas(enum.IntEnum):
    """Protection attribute state of a granule (its world assignment)."""

    NORMAL = 0
    SECURE = 1
    REALM = 2
    ROOT = 3
    NO_ACCESS = 4


class SecurityState(enum.IntEnum):
    """Security state of an accessing core."""

    NORMAL = 0
    SECURE = 1
    REALM = 2
    ROOT = 3


class Perms(enum.IntFlag):
    NONE = 0
    R = 1
    W = 2
    X = 4

    @classmethod
    def parse(cls, text: str) -> "Perms":
        p = cls.NONE
        for ch in text.lower():
            if ch == "r":
                p |= cls.R
            elif ch == "w":
                p |= cls.W
            elif ch == "x":
                p |= cls.X
            elif ch in ("-", "n"):
                pass
            else:
                raise ValueError(f"bad permission char {ch!r}")
        return p

    def text(self) -> str:
        return "".join(
            c if self & f else "-"
            for c, f in (("r", Perms.R), ("w", Perms.W), ("x", Perms.X))
        )


class PageType(enum.IntEnum):
    SECS = 0
    TCS = 1
    REG = 2
    VA = 3
    TRIM = 4


def access_allowed(accessor: SecurityState, pas: Pas) -> bool:
    """World access check: may a core in `accessor` state touch a `pas` page?

    Root access is universal.  Every state may touch normal memory; secure and
    realm states may additionally touch their own world.  NO_ACCESS pages deny
    everyone except root.
    """
    if accessor == SecurityState.ROOT:
        return True
    if pas == Pas.NORMAL:
        return True
    if pas == Pas.SECURE:
        return accessor == SecurityState.SECURE
    if pas == Pas.REALM:
        return accessor == SecurityState.REALM
    # ROOT and NO_ACCESS pages: root only.
    return False


@dataclass(frozen=True)
class AccessContext:
    """Who is accessing: a security state plus the active table selector.

    ``gpt`` is ``None`` for the system table or an enclave id for that
    enclave's table.  Microprogram-internal accesses use ``MICROCODE``.
    """

    accessor: SecurityState
    gpt: Optional[int]


MICROCODE = AccessContext(SecurityState.ROOT, None)


@dataclass(frozen=True)
class GpfRecord:
    granule: int
    accessor: SecurityState
    pas: Pas
    gpt: Optional[int]


@dataclass
class MemoryMode:
    """EPC geometry: a fixed window (sgx) or the whole granule space (ccx)."""

    kind: str  # "sgx" or "ccx"
    epc_base: int = 0
    epc_size: int = 0

    @classmethod
    def sgx_fixed(cls, epc_base: int, epc_size: int) -> "MemoryMode":
        return cls("sgx", epc_base, epc_size)

    @classmethod
    def cca_dynamic(cls) -> "MemoryMode":
        return cls("ccx")

    @property
    def is_fixed(self) -> bool:
        return self.kind == "sgx"

    def validate(self, granule_count: int) -> None:
        if self.kind not in ("sgx", "ccx"):
            raise ModelError(f"unknown memory mode {self.kind!r}")
        if self.is_fixed:
            if self.epc_size <= 0:
                raise ModelError("sgx mode needs a positive epc_size")
            if self.epc_base < RESERVED_GRANULES:
                raise ModelError("EPC overlaps reserved granules")
            if self.epc_base + self.epc_size > granule_count:
                raise ModelError("EPC window exceeds physical memory")


@dataclass
class EpcmEntry:
    """Per-granule EPC metadata.

    ``staged_type`` and ``blocked_epoch`` are microprogram bookkeeping for
    type changes in flight and for blocked-page tracking; both ride along in
    swap metadata so a reloaded page resumes in the same state.
    """

    valid: bool = False
    page_type: Optional[PageType] = None
    owner: Optional[int] = None
    vaddr: int = 0
    perms: Perms = Perms.NONE
    blocked: bool = False
    pending: bool = False
    modified: bool = False
    staged_type: Optional[PageType] = None
    blocked_epoch: Optional[int] = None

    def validate(self) -> None:
        if self.pending and self.modified:
            raise ModelError("EPCM entry has pending and modified both set")
        if not self.valid:
            if (
                self.page_type is not None
                or self.owner is not None
                or self.vaddr != 0
                or self.perms != Perms.NONE
                or self.blocked
                or self.pending
                or self.modified
                or self.staged_type is not None
                or self.blocked_epoch is not None
            ):
                raise ModelError("invalid EPCM entry must be fully cleared")
        else:
            if self.page_type is None:
                raise ModelError("valid EPCM entry needs a page type")
            if self.page_type == PageType.VA and self.owner is not None:
                raise ModelError("VA pages are not enclave-owned")
            if self.page_type not in (PageType.VA,) and self.owner is None:
                raise ModelError("non-VA EPCM entry needs an owner")

    def copy(self) -> "EpcmEntry":
        return replace(self)


INVALID_EPCM_ENTRY = EpcmEntry()


class GptSet:
    """The system granule protection table plus one table per enclave.

    Tables are dense byte arrays of :class:`Pas` values covering every
    granule.  The cross-table invariant (a granule owned by enclave E is
    realm in E's table and inaccessible in every other table) is maintained
    by :meth:`assign` / :meth:`unassign` and checked by :meth:`audit`.
    """

    def __init__(self, granule_count: int):
        self.granule_count = granule_count
        self.system: bytearray = bytearray(granule_count)  # Pas.NORMAL == 0
        self.enclave: Dict[int, bytearray] = {}

    # -- table lifecycle ---------------------------------------------------

    def create_enclave_table(self, eid: int) -> None:
        if eid in self.enclave:
            raise ModelError(f"enclave {eid} already has a table")
        # A fresh table mirrors the system view, so pages of other enclaves
        # (NO_ACCESS in the system table) stay unreachable from this one.
        self.enclave[eid] = bytearray(self.system)

    def drop_enclave_table(self, eid: int) -> None:
        table = self.enclave.pop(eid, None)
        if table is None:
            raise ModelError(f"enclave {eid} has no table")
        if Pas.REALM in (Pas(v) for v in set(table)):
            raise ModelError(f"dropping table of enclave {eid} with realm pages")

    def _table(self, selector: Optional[int]) -> bytearray:
        if selector is None:
            return self.system
        try:
            return self.enclave[selector]
        except KeyError:
            raise ModelError(f"no such GPT: {selector}") from None

    def entry(self, selector: Optional[int], granule: int) -> Pas:
        if not 0 <= granule < self.granule_count:
            raise ModelError(f"granule {granule} out of range")
        return Pas(self._table(selector)[granule])

    def set_entry(self, selector: Optional[int], granule: int, pas: Pas) -> None:
        """Raw table poke; for fixture setup and tests, not the normal path."""
        if not 0 <= granule < self.granule_count:
            raise ModelError(f"granule {granule} out of range")
        self._table(selector)[granule] = int(pas)

    # -- protocol operations ----------------------------------------------

    def assign(self, eid: int, granule: int) -> None:
        if eid not in self.enclave:
            raise ModelError(f"enclave {eid} has no table")
        if self.system[granule] != Pas.NORMAL:
            raise ModelError(f"granule {granule} not normal in system table")
        self.enclave[eid][granule] = int(Pas.REALM)
        self.system[granule] = int(Pas.NO_ACCESS)
        for other, table in self.enclave.items():
            if other != eid:
                table[granule] = int(Pas.NO_ACCESS)

    def unassign(self, eid: int, granule: int) -> None:
        if self.entry(eid, granule) != Pas.REALM:
            raise ModelError(f"granule {granule} not realm in table of {eid}")
        self.system[granule] = int(Pas.NORMAL)
        for table in self.enclave.values():
            table[granule] = int(Pas.NORMAL)

    def seclude(self, granule: int) -> None:
        """Make a granule microcode-only (used for version-array pages)."""
        if self.system[granule] != Pas.NORMAL:
            raise ModelError(f"granule {granule} not normal in system table")
        self.system[granule] = int(Pas.NO_ACCESS)
        for table in self.enclave.values():
            table[granule] = int(Pas.NO_ACCESS)

    def unseclude(self, granule: int) -> None:
        if self.system[granule] != Pas.NO_ACCESS:
            raise ModelError(f"granule {granule} was not secluded")
        self.system[granule] = int(Pas.NORMAL)
        for table in self.enclave.values():
            table[granule] = int(Pas.NORMAL)

    def owner_of(self, granule: int) -> Optional[int]:
        for eid, table in self.enclave.items():
            if table[granule] == Pas.REALM:
                return eid
        return None

    def snapshot_counts(self) -> Dict[str, Dict[str, int]]:
        out: Dict[str, Dict[str, int]] = {}
        for name, table in [("system", self.system)] + [
            (f"enclave:{eid}", t) for eid, t in sorted(self.enclave.items())
        ]:
            out[name] = {
                pas.name: table.count(int(pas)) for pas in Pas if table.count(int(pas))
            }
        return out


class MachineMemory:
    """Granule-array memory with protection-table checked access.

    All state mutation happens inside microprogram execution which the machine
    serializes; this class itself does no locking.
    """

    def __init__(self, granule_count: int, mode: MemoryMode):
        if granule_count <= RESERVED_GRANULES:
            raise ModelError("granule count too small")
        mode.validate(granule_count)
        self.granule_count = granule_count
        self.mode = mode
        self.data = bytearray(granule_count * GRANULE_SIZE)
        self.gpts = GptSet(granule_count)
        self.epcm: Dict[int, EpcmEntry] = {}
        # (owner eid, page-aligned vaddr) -> granule, kept in sync by epcm_update
        self.vaddr_index: Dict[Tuple[int, int], int] = {}
        self.gpf_log: List[GpfRecord] = []

    # -- access checking ----------------------------------------------------

    def _check_range(self, granule: int, offset: int = 0, length: int = 0) -> None:
        if not 0 <= granule < self.granule_count:
            raise ModelError(f"granule {granule} out of range")
        if offset < 0 or length < 0 or offset + length > GRANULE_SIZE:
            raise ModelError(f"access [{offset}, {offset}+{length}) exceeds granule")

    def check_access(
        self, accessor: SecurityState, granule: int, gpt: Optional[int]
    ) -> bool:
        self._check_range(granule)
        return access_allowed(accessor, self.gpts.entry(gpt, granule))

    def _checked(self, ctx: AccessContext, granule: int, offset: int, length: int):
        self._check_range(granule, offset, length)
        pas = self.gpts.entry(ctx.gpt, granule)
        if not access_allowed(ctx.accessor, pas):
            record = GpfRecord(granule, ctx.accessor, pas, ctx.gpt)
            self.gpf_log.append(record)
            raise GranuleProtectionFault(granule, ctx.accessor, pas, ctx.gpt)
        return granule * GRANULE_SIZE + offset

    def read_granule(
        self, ctx: AccessContext, granule: int, offset: int, length: int
    ) -> bytes:
        base = self._checked(ctx, granule, offset, length)
        return bytes(self.data[base : base + length])

    def write_granule(
        self, ctx: AccessContext, granule: int, offset: int, data: bytes
    ) -> None:
        base = self._checked(ctx, granule, offset, len(data))
        self.data[base : base + len(data)] = data

    def zero_granule(self, granule: int) -> None:
        self._check_range(granule)
        base = granule * GRANULE_SIZE
        self.data[base : base + GRANULE_SIZE] = bytes(GRANULE_SIZE)

    # -- GPT protocol -------------------------------------------------------

    def epc_admissible(self, granule: int) -> bool:
        if granule < RESERVED_GRANULES:
            return False
        if self.mode.is_fixed:
            return (
                self.mode.epc_base
                <= granule
                < self.mode.epc_base + self.mode.epc_size
            )
        return granule < self.granule_count

    def assign_granule(self, eid: int, granule: int) -> None:
        self._check_range(granule)
        entry = self.epcm.get(granule)
        if entry is not None and entry.valid:
            raise ModelError(f"granule {granule} is EPCM-valid, cannot assign")
        if not self.epc_admissible(granule):
            raise ModelError(f"granule {granule} not admissible as EPC")
        self.gpts.assign(eid, granule)

    def unassign_granule(self, eid: int, granule: int) -> None:
        self._check_range(granule)
        # Scrub before the granule becomes reachable again: no data residue.
        self.zero_granule(granule)
        self.gpts.unassign(eid, granule)

    def seclude_granule(self, granule: int) -> None:
        self._check_range(granule)
        if not self.epc_admissible(granule):
            raise ModelError(f"granule {granule} not admissible as EPC")
        self.gpts.seclude(granule)

    def unseclude_granule(self, granule: int) -> None:
        self._check_range(granule)
        self.zero_granule(granule)
        self.gpts.unseclude(granule)

    # -- EPCM ----------------------------------------------------------------

    def epcm_lookup(self, granule: int) -> EpcmEntry:
        self._check_range(granule)
        return self.epcm.get(granule, INVALID_EPCM_ENTRY).copy()

    def epcm_update(self, granule: int, entry: EpcmEntry) -> None:
        self._check_range(granule)
        entry.validate()
        old = self.epcm.get(granule)
        if old is not None and old.valid and old.owner is not None:
            self.vaddr_index.pop((old.owner, old.vaddr), None)
        if entry.valid:
            self.epcm[granule] = entry.copy()
            if entry.owner is not None:
                key = (entry.owner, entry.vaddr)
                if self.vaddr_index.get(key, granule) != granule:
                    raise ModelError(f"vaddr {entry.vaddr:#x} double-mapped in {entry.owner}")
                self.vaddr_index[key] = granule
        else:
            self.epcm.pop(granule, None)

    def find_page(self, eid: int, vaddr: int) -> Optional[int]:
        return self.vaddr_index.get((eid, vaddr & ~(GRANULE_SIZE - 1)))

    def valid_pages(self, eid: Optional[int] = None) -> List[int]:
        return sorted(
            g
            for g, e in self.epcm.items()
            if e.valid and (eid is None or e.owner == eid)
        )

    def is_free(self, granule: int) -> bool:
        if granule < RESERVED_GRANULES:
            return False
        entry = self.epcm.get(granule)
        if entry is not None and entry.valid:
            return False
        return self.gpts.entry(None, granule) == Pas.NORMAL

    # -- invariants -----------------------------------------------------------

    def audit(self) -> None:
        """Cross-check tables against the EPCM; raises ModelError on breakage.

        Checks: every EPCM-valid enclave page is realm in exactly its owner's
        table and inaccessible everywhere else; version-array pages are
        inaccessible everywhere; no table marks granules outside the tracked
        set; fixed-EPC confinement.
        """
        tracked = {g for g, e in self.epcm.items() if e.valid}
        for granule, entry in self.epcm.items():
            if not entry.valid:
                raise ModelError("invalid entry stored in EPCM map")
            if self.mode.is_fixed and not self.epc_admissible(granule):
                raise ModelError(f"EPCM-valid granule {granule} outside fixed EPC")
            if entry.owner is not None:
                if self.gpts.entry(entry.owner, granule) != Pas.REALM:
                    raise ModelError(
                        f"granule {granule} not realm in owner table {entry.owner}"
                    )
                for eid in self.gpts.enclave:
                    if eid != entry.owner and self.gpts.entry(eid, granule) != Pas.NO_ACCESS:
                        raise ModelError(
                            f"granule {granule} reachable from foreign table {eid}"
                        )
                if self.gpts.entry(None, granule) != Pas.NO_ACCESS:
                    raise ModelError(f"granule {granule} reachable from system table")
            else:
                # Version arrays: microcode only.
                if self.gpts.entry(None, granule) != Pas.NO_ACCESS:
                    raise ModelError(f"VA granule {granule} reachable from system table")
                for eid in self.gpts.enclave:
                    if self.gpts.entry(eid, granule) != Pas.NO_ACCESS:
                        raise ModelError(f"VA granule {granule} reachable from table {eid}")
        # Only tracked granules may be non-normal anywhere.
        n_special = self.granule_count - self.gpts.system.count(int(Pas.NORMAL))
        if n_special != len(tracked):
            raise ModelError(
                f"system table has {n_special} non-normal granules, expected {len(tracked)}"
            )
        for eid, table in self.gpts.enclave.items():
            realm = table.count(int(Pas.REALM))
            owned = sum(1 for g in tracked if self.epcm[g].owner == eid)
            if realm != owned:
                raise ModelError(
                    f"table {eid} has {realm} realm granules, owns {owned} pages"
                )
