"""Leaf microprograms: atomic state transitions over machine state.

Each function implements one leaf.  Handlers assume the caller holds the
machine execution token (the Machine dispatch wrappers take it), so a leaf
runs to completion before any other vCPU observes its effects.  Handlers for
the entry/exit/resume leaves live in :mod:`ccxsim.execution`; the dispatch
tables in :mod:`ccxsim.machine` stitch both together.
"""

from __future__ import annotations

from typing import Optional

from .errors import AuthenticationFailure, ModelError, SgxError, SgxErrorCode as E
from .memory import GRANULE_SIZE, MICROCODE, PageType, Perms
from .structs import (
    ATTR_INIT,
    Attributes,
    EEXTEND_CHUNK,
    EMPTY_SLOT,
    KeyName,
    KeyPolicy,
    KeyRequest,
    Pcmd,
    Report,
    Secs,
    SecInfo,
    SigStruct,
    SwapBlob,
    TargetInfo,
    Tcs,
    VA_SLOT_COUNT,
    VA_SLOT_SIZE,
    eadd_record,
    ecreate_record,
    eextend_record,
)

# Enclave linear ranges all start here; host physical addresses stay far below.
DEFAULT_ENCLAVE_BASE = 1 << 33


def _secs(m, eid: int) -> Secs:
    secs = m.enclaves.get(eid)
    if secs is None:
        raise SgxError(E.UNKNOWN_ENCLAVE, f"no enclave {eid}")
    return secs


def _valid_entry(m, granule: int):
    entry = m.memory.epcm_lookup(granule)
    if not entry.valid:
        raise SgxError(E.PAGE_INVALID, f"granule {granule} has no valid EPCM entry")
    return entry


def _require_free(m, granule: int) -> None:
    if not m.memory.is_free(granule):
        raise SgxError(E.OCCUPIED, f"granule {granule} is not free")
    if not m.memory.epc_admissible(granule):
        raise SgxError(E.NOT_IN_EPC, f"granule {granule} outside the EPC window")


def _require_enclave_mode(m, vcpu) -> Secs:
    if not vcpu.in_enclave:
        raise SgxError(E.INVALID_MODE, "leaf requires enclave mode")
    return _secs(m, vcpu.cur_eid)


def effective_secinfo(secinfo: SecInfo) -> SecInfo:
    """TCS pages carry no software-visible permissions."""
    if secinfo.page_type == PageType.TCS:
        return SecInfo(Perms.NONE, PageType.TCS)
    return secinfo


# ---------------------------------------------------------------------------
# Enclave build


def ecreate(
    m,
    secs_granule: int,
    size: int,
    ssa_frame_size: int,
    attributes: Attributes,
    base: int = DEFAULT_ENCLAVE_BASE,
) -> int:
    _require_free(m, secs_granule)
    if size < GRANULE_SIZE or size & (size - 1):
        raise SgxError(E.BAD_GEOMETRY, f"size {size:#x} is not a power-of-two page multiple")
    if ssa_frame_size < 1:
        raise SgxError(E.BAD_GEOMETRY, "ssa_frame_size must be at least 1")
    if base % size:
        raise SgxError(E.BAD_GEOMETRY, f"base {base:#x} not aligned to size {size:#x}")
    if attributes.init:
        raise SgxError(E.BAD_GEOMETRY, "attributes cannot request INIT at creation")

    eid = m.alloc_eid()
    m.memory.gpts.create_enclave_table(eid)
    m.memory.assign_granule(eid, secs_granule)
    m.memory.zero_granule(secs_granule)
    entry = m.memory.epcm_lookup(secs_granule)
    entry.valid = True
    entry.page_type = PageType.SECS
    entry.owner = eid
    entry.vaddr = 0
    entry.perms = Perms.NONE
    m.memory.epcm_update(secs_granule, entry)

    state = m.crypto.hash_init()
    state.absorb(ecreate_record(ssa_frame_size, size))
    secs = Secs(
        eid=eid,
        size=size,
        base=base,
        ssa_frame_size=ssa_frame_size,
        attributes=Attributes.decode(attributes.encode() & ~ATTR_INIT),  # fresh copy
        secs_granule=secs_granule,
        mrenclave_state=state,
    )
    m.enclaves[eid] = secs
    m.trace_event("ecreate", eid=eid, size=size, secs_granule=secs_granule)
    return eid


def eadd(
    m,
    eid: int,
    vaddr: int,
    secinfo: SecInfo,
    target_granule: int,
    source_bytes: Optional[bytes] = None,
) -> None:
    secs = _secs(m, eid)
    if secs.initialized:
        raise SgxError(E.ALREADY_INITIALIZED, "EADD needs an uninitialized enclave")
    if vaddr % GRANULE_SIZE:
        raise SgxError(E.BAD_VADDR, f"vaddr {vaddr:#x} not page aligned")
    if not secs.contains(vaddr, GRANULE_SIZE):
        raise SgxError(E.BAD_VADDR, f"vaddr {vaddr:#x} outside enclave range")
    if secinfo.page_type not in (PageType.REG, PageType.TCS):
        raise SgxError(E.PAGE_INVALID, "EADD adds REG or TCS pages")
    if m.memory.find_page(eid, vaddr) is not None:
        raise SgxError(E.VADDR_COLLISION, f"vaddr {vaddr:#x} already mapped")
    _require_free(m, target_granule)

    if m.memory.mode.is_fixed:
        # Fixed EPC: page content is copied into the protected window.
        if source_bytes is None:
            raise ModelError("sgx-mode EADD requires source bytes")
        if len(source_bytes) != GRANULE_SIZE:
            raise ModelError("EADD source must be one full page")
    else:
        # Dynamic mode assigns the source granule in place; no copy happens.
        if source_bytes is not None:
            raise ModelError("ccx-mode EADD assigns in place; write content first")

    m.memory.assign_granule(eid, target_granule)
    if source_bytes is not None:
        m.memory.write_granule(MICROCODE, target_granule, 0, source_bytes)

    effective = effective_secinfo(secinfo)
    if secinfo.page_type == PageType.TCS:
        content = m.memory.read_granule(MICROCODE, target_granule, 0, GRANULE_SIZE)
        tcs = Tcs.unpack(content)
        if tcs.cssa != 0:
            raise SgxError(E.BAD_TCS_LAYOUT, "fresh TCS must have cssa == 0")
        tcs.validate(secs)
        m.tcs_registry[target_granule] = tcs

    entry = m.memory.epcm_lookup(target_granule)
    entry.valid = True
    entry.page_type = secinfo.page_type
    entry.owner = eid
    entry.vaddr = vaddr
    entry.perms = effective.perms
    m.memory.epcm_update(target_granule, entry)

    secs.mrenclave_state.absorb(eadd_record(vaddr - secs.base, effective))
    m.trace_event("eadd", eid=eid, vaddr=vaddr, granule=target_granule,
                  type=secinfo.page_type.name)


def eextend(m, eid: int, vaddr_chunk: int) -> None:
    secs = _secs(m, eid)
    if secs.initialized:
        raise SgxError(E.ALREADY_INITIALIZED, "EEXTEND needs an uninitialized enclave")
    if vaddr_chunk % EEXTEND_CHUNK:
        raise SgxError(E.MISALIGNED, f"chunk {vaddr_chunk:#x} not 256-byte aligned")
    granule = m.memory.find_page(eid, vaddr_chunk)
    if granule is None:
        raise SgxError(E.UNMEASURABLE_PAGE, f"no page of enclave {eid} at {vaddr_chunk:#x}")
    entry = _valid_entry(m, granule)
    if entry.blocked:
        raise SgxError(E.UNMEASURABLE_PAGE, "blocked page cannot be measured")

    page_off = vaddr_chunk & (GRANULE_SIZE - 1)
    content = m.memory.read_granule(MICROCODE, granule, page_off, EEXTEND_CHUNK)
    secs.mrenclave_state.absorb(eextend_record(vaddr_chunk - secs.base))
    for i in range(0, EEXTEND_CHUNK, 64):
        secs.mrenclave_state.absorb(content[i : i + 64])


def einit(m, eid: int, sigstruct: SigStruct) -> None:
    secs = _secs(m, eid)
    if secs.initialized:
        raise SgxError(E.ALREADY_INITIALIZED, f"enclave {eid} already initialized")

    ok, signer_digest = m.crypto.verify_sigstruct(sigstruct)
    if not ok:
        raise SgxError(E.SIG_INVALID, "identity signature does not verify")
    mrenclave = secs.mrenclave_state.final()
    if sigstruct.enclavehash != mrenclave:
        raise SgxError(E.MEASUREMENT_MISMATCH, "signed hash differs from measurement")
    if sigstruct.attributes != secs.attributes.signed_view():
        raise SgxError(E.ATTRIBUTE_MISMATCH, "signed attributes differ from SECS")

    secs.mrenclave = mrenclave
    secs.mrsigner = signer_digest
    secs.isv_prod_id = sigstruct.isv_prod_id
    secs.isv_svn = sigstruct.isv_svn
    secs.attributes.init = True
    m.trace_event("einit", eid=eid, mrenclave=mrenclave.hex())


def eremove(m, granule: int) -> None:
    entry = _valid_entry(m, granule)

    if entry.page_type == PageType.SECS:
        eid = entry.owner
        children = [
            g for g in m.memory.valid_pages(eid) if g != granule
        ]
        if children:
            raise SgxError(E.CHILD_PRESENT, f"enclave {eid} still owns {len(children)} pages")
        m.memory.epcm_update(granule, m.memory.epcm_lookup(granule).__class__())
        m.memory.unassign_granule(eid, granule)
        m.memory.gpts.drop_enclave_table(eid)
        del m.enclaves[eid]
        m.trace_event("eremove_secs", eid=eid, granule=granule)
        return

    if entry.page_type == PageType.TCS:
        tcs = m.tcs_registry.get(granule)
        if tcs is not None and tcs.busy:
            raise SgxError(E.PAGE_IN_USE, "TCS is occupied by a vCPU")
        m.tcs_registry.pop(granule, None)

    m.memory.epcm_update(granule, m.memory.epcm_lookup(granule).__class__())
    if entry.owner is not None:
        m.memory.unassign_granule(entry.owner, granule)
    else:
        m.memory.unseclude_granule(granule)
    m.trace_event("eremove", granule=granule)


# ---------------------------------------------------------------------------
# Debug access


def _debug_entry(m, granule: int):
    entry = _valid_entry(m, granule)
    if entry.owner is None or entry.page_type not in (PageType.REG, PageType.TCS):
        raise SgxError(E.PAGE_INVALID, "debug access targets REG or TCS pages")
    secs = _secs(m, entry.owner)
    if not secs.attributes.debug:
        raise SgxError(E.NON_DEBUG_ENCLAVE, f"enclave {entry.owner} lacks DEBUG")
    return entry


def edbgrd(m, granule: int, offset: int, length: int) -> bytes:
    _debug_entry(m, granule)
    return m.memory.read_granule(MICROCODE, granule, offset, length)


def edbgwr(m, granule: int, offset: int, data: bytes) -> None:
    _debug_entry(m, granule)
    m.memory.write_granule(MICROCODE, granule, offset, data)


# ---------------------------------------------------------------------------
# Blocking, tracking, and swap


def eblock(m, granule: int) -> None:
    entry = _valid_entry(m, granule)
    if entry.page_type not in (PageType.REG, PageType.TCS, PageType.VA):
        raise SgxError(E.PAGE_INVALID, f"{entry.page_type.name} pages cannot be blocked")
    if entry.blocked:
        raise SgxError(E.ALREADY_BLOCKED, f"granule {granule} already blocked")
    entry.blocked = True
    if entry.owner is not None:
        entry.blocked_epoch = _secs(m, entry.owner).track_epoch
    m.memory.epcm_update(granule, entry)


def etrack(m, eid: int) -> None:
    secs = _secs(m, eid)
    if not secs.initialized:
        raise SgxError(E.NOT_INITIALIZED, "ETRACK requires an initialized enclave")
    if secs.threads_before(secs.track_epoch) > 0:
        raise SgxError(E.PREV_TRK_INCMPL, "a previous track epoch has not drained")
    secs.track_epoch += 1


def epa(m, granule: int) -> None:
    _require_free(m, granule)
    m.memory.seclude_granule(granule)
    m.memory.zero_granule(granule)
    entry = m.memory.epcm_lookup(granule)
    entry.valid = True
    entry.page_type = PageType.VA
    entry.owner = None
    entry.perms = Perms.NONE
    m.memory.epcm_update(granule, entry)
    m.trace_event("epa", granule=granule)


def _va_entry(m, va_granule: int):
    entry = m.memory.epcm_lookup(va_granule)
    if not entry.valid or entry.page_type != PageType.VA:
        raise SgxError(E.VA_SLOT_INVALID, f"granule {va_granule} is not a version array")
    return entry


def _va_slot_read(m, va_granule: int, slot: int) -> bytes:
    _va_entry(m, va_granule)
    if not 0 <= slot < VA_SLOT_COUNT:
        raise SgxError(E.VA_SLOT_INVALID, f"slot {slot} out of range")
    return m.memory.read_granule(MICROCODE, va_granule, slot * VA_SLOT_SIZE, VA_SLOT_SIZE)


def _va_slot_write(m, va_granule: int, slot: int, value: bytes) -> None:
    m.memory.write_granule(MICROCODE, va_granule, slot * VA_SLOT_SIZE, value)


def ewb(m, granule: int, va_granule: int, slot: int) -> SwapBlob:
    entry = _valid_entry(m, granule)
    if entry.page_type == PageType.SECS:
        raise SgxError(E.PAGE_INVALID, "SECS pages are not swappable here")
    if not entry.blocked:
        raise SgxError(E.NOT_BLOCKED, f"granule {granule} is not blocked")
    if granule == va_granule:
        raise SgxError(E.VA_SLOT_INVALID, "a version array cannot version itself")
    if entry.page_type == PageType.TCS:
        tcs = m.tcs_registry.get(granule)
        if tcs is not None and tcs.busy:
            raise SgxError(E.PAGE_IN_USE, "TCS is occupied by a vCPU")

    if entry.owner is not None:
        secs = _secs(m, entry.owner)
        if entry.blocked_epoch is None or secs.track_epoch <= entry.blocked_epoch:
            raise SgxError(E.NOT_TRACKED, "no track epoch started after blocking")
        if secs.threads_before(secs.track_epoch) > 0:
            raise SgxError(E.NOT_TRACKED, "threads from the pre-track epoch are still inside")

    if _va_slot_read(m, va_granule, slot) != EMPTY_SLOT:
        raise SgxError(E.VA_SLOT_OCCUPIED, f"slot {slot} already holds a version")

    if entry.page_type == PageType.TCS:
        # Persist live thread state (cssa) so a reloaded TCS resumes correctly.
        m.memory.write_granule(
            MICROCODE, granule, 0, m.tcs_registry[granule].pack()
        )

    version = m.rand_bytes(VA_SLOT_SIZE)
    while version == EMPTY_SLOT:
        version = m.rand_bytes(VA_SLOT_SIZE)

    plaintext = m.memory.read_granule(MICROCODE, granule, 0, GRANULE_SIZE)
    pcmd = Pcmd(
        page_type=entry.page_type,
        perms=entry.perms,
        pending=entry.pending,
        modified=entry.modified,
        staged_type=entry.staged_type,
        owner=entry.owner,
        vaddr=entry.vaddr,
    )
    ciphertext, mac = m.crypto.page_seal(
        m.crypto.swap_key(), plaintext, pcmd.aad(version)
    )
    pcmd.mac = mac

    _va_slot_write(m, va_granule, slot, version)
    m.tcs_registry.pop(granule, None)
    m.memory.epcm_update(granule, type(entry)())
    if entry.owner is not None:
        m.memory.unassign_granule(entry.owner, granule)
    else:
        m.memory.unseclude_granule(granule)
    m.trace_event("ewb", granule=granule, vaddr=entry.vaddr,
                  owner=entry.owner, va=va_granule, slot=slot)
    return SwapBlob(ciphertext=ciphertext, pcmd=pcmd)


def _eld_common(
    m,
    ciphertext: bytes,
    pcmd: Pcmd,
    va_granule: int,
    slot: int,
    target_granule: int,
    eid: Optional[int],
    mark_blocked: bool,
) -> None:
    # Authentication comes first: replay is judged by the version slot, any
    # tampering of ciphertext or metadata by the AEAD.  Only authenticated
    # metadata feeds the semantic checks below.
    version = _va_slot_read(m, va_granule, slot)
    if version == EMPTY_SLOT:
        raise SgxError(E.VERSION_MISMATCH, f"slot {slot} holds no version")
    try:
        plaintext = m.crypto.page_unseal(
            m.crypto.swap_key(), ciphertext, pcmd.aad(version), pcmd.mac
        )
    except AuthenticationFailure:
        raise SgxError(E.MAC_COMPARE_FAIL, "page or metadata fail authentication") from None

    if pcmd.owner != eid:
        raise SgxError(E.PAGE_INVALID, "enclave id does not match page metadata")
    secs = _secs(m, eid) if eid is not None else None
    _require_free(m, target_granule)
    if eid is not None and m.memory.find_page(eid, pcmd.vaddr) is not None:
        raise SgxError(E.VADDR_COLLISION, f"vaddr {pcmd.vaddr:#x} already mapped")

    if eid is not None:
        m.memory.assign_granule(eid, target_granule)
    else:
        m.memory.seclude_granule(target_granule)
    m.memory.write_granule(MICROCODE, target_granule, 0, plaintext)

    entry = m.memory.epcm_lookup(target_granule)
    entry.valid = True
    entry.page_type = pcmd.page_type
    entry.owner = pcmd.owner
    entry.vaddr = pcmd.vaddr
    entry.perms = pcmd.perms
    entry.pending = pcmd.pending
    entry.modified = pcmd.modified
    entry.staged_type = pcmd.staged_type
    entry.blocked = mark_blocked
    if mark_blocked and secs is not None:
        entry.blocked_epoch = secs.track_epoch
    m.memory.epcm_update(target_granule, entry)

    if pcmd.page_type == PageType.TCS:
        m.tcs_registry[target_granule] = Tcs.unpack(plaintext)

    _va_slot_write(m, va_granule, slot, EMPTY_SLOT)
    m.trace_event("eld", granule=target_granule, vaddr=pcmd.vaddr,
                  owner=pcmd.owner, blocked=mark_blocked)


def eldu(m, ciphertext, pcmd, va_granule, slot, target_granule, eid) -> None:
    _eld_common(m, ciphertext, pcmd, va_granule, slot, target_granule, eid, False)


def eldb(m, ciphertext, pcmd, va_granule, slot, target_granule, eid) -> None:
    _eld_common(m, ciphertext, pcmd, va_granule, slot, target_granule, eid, True)


# ---------------------------------------------------------------------------
# Dynamic page management


def eaug(m, eid: int, vaddr: int, target_granule: int) -> None:
    secs = _secs(m, eid)
    if not secs.initialized:
        raise SgxError(E.NOT_INITIALIZED, "EAUG requires an initialized enclave")
    if vaddr % GRANULE_SIZE:
        raise SgxError(E.BAD_VADDR, f"vaddr {vaddr:#x} not page aligned")
    if not secs.contains(vaddr, GRANULE_SIZE):
        raise SgxError(E.BAD_VADDR, f"vaddr {vaddr:#x} outside enclave range")
    if m.memory.find_page(eid, vaddr) is not None:
        raise SgxError(E.VADDR_COLLISION, f"vaddr {vaddr:#x} already mapped")
    _require_free(m, target_granule)

    m.memory.assign_granule(eid, target_granule)
    m.memory.zero_granule(target_granule)
    entry = m.memory.epcm_lookup(target_granule)
    entry.valid = True
    entry.page_type = PageType.REG
    entry.owner = eid
    entry.vaddr = vaddr
    entry.perms = Perms.R | Perms.W
    entry.pending = True
    m.memory.epcm_update(target_granule, entry)
    m.trace_event("eaug", eid=eid, vaddr=vaddr, granule=target_granule)


def _settled_reg_entry(m, granule: int):
    entry = _valid_entry(m, granule)
    if entry.page_type != PageType.REG:
        raise SgxError(E.PAGE_INVALID, "permission/type changes target REG pages")
    if entry.pending or entry.modified:
        raise SgxError(E.PAGE_INVALID, "page already has a change in flight")
    if entry.owner is None or not _secs(m, entry.owner).initialized:
        raise SgxError(E.NOT_INITIALIZED, "owning enclave is not initialized")
    return entry


def emodpr(m, granule: int, new_perms: Perms) -> None:
    entry = _settled_reg_entry(m, granule)
    if new_perms & ~entry.perms:
        raise SgxError(E.PERM_EXPANSION_ATTEMPT, "EMODPR only restricts permissions")
    entry.perms = new_perms  # restriction takes effect immediately
    entry.modified = True
    m.memory.epcm_update(granule, entry)


def emodt(m, granule: int, new_type: PageType) -> None:
    entry = _settled_reg_entry(m, granule)
    if new_type not in (PageType.TCS, PageType.TRIM):
        raise SgxError(E.ILLEGAL_TRANSITION, f"REG pages become TCS or TRIM, not {new_type.name}")
    entry.staged_type = new_type
    entry.modified = True
    m.memory.epcm_update(granule, entry)


def eaccept(m, vcpu, granule: int, expected: SecInfo) -> None:
    secs = _require_enclave_mode(m, vcpu)
    entry = _valid_entry(m, granule)
    if entry.owner != secs.eid:
        raise SgxError(E.PAGE_INVALID, "page belongs to another enclave")
    if not (entry.pending or entry.modified):
        raise SgxError(E.NOT_PENDING, "no change awaiting acceptance")
    staged = SecInfo(entry.perms, entry.staged_type or entry.page_type)
    if expected != staged:
        raise SgxError(
            E.SECINFO_MISMATCH,
            f"expected {expected.page_type.name}/{expected.perms.text()},"
            f" staged {staged.page_type.name}/{staged.perms.text()}",
        )
    entry.pending = False
    entry.modified = False
    if entry.staged_type is not None:
        entry.page_type = entry.staged_type
        entry.staged_type = None
        if entry.page_type == PageType.TCS:
            entry.perms = Perms.NONE
            content = m.memory.read_granule(MICROCODE, granule, 0, GRANULE_SIZE)
            tcs = Tcs.unpack(content)
            if tcs.cssa != 0:
                raise SgxError(E.BAD_TCS_LAYOUT, "fresh TCS must have cssa == 0")
            tcs.validate(secs)
            m.tcs_registry[granule] = tcs
    m.memory.epcm_update(granule, entry)


def eacceptcopy(m, vcpu, target_granule: int, source_vaddr: int, secinfo: SecInfo) -> None:
    secs = _require_enclave_mode(m, vcpu)
    entry = _valid_entry(m, target_granule)
    if entry.owner != secs.eid:
        raise SgxError(E.PAGE_INVALID, "page belongs to another enclave")
    if not entry.pending:
        raise SgxError(E.NOT_PENDING, "target page is not pending")
    if secinfo.page_type != PageType.REG:
        raise SgxError(E.SECINFO_MISMATCH, "copy initialization produces REG pages")

    src_granule = m.memory.find_page(secs.eid, source_vaddr)
    if src_granule is None:
        raise SgxError(E.BAD_VADDR, f"source {source_vaddr:#x} is not an enclave page")
    src = m.memory.epcm_lookup(src_granule)
    if (
        src.page_type != PageType.REG
        or src.blocked
        or src.pending
        or not (src.perms & Perms.R)
    ):
        raise SgxError(E.BAD_VADDR, "source page is not readable enclave memory")

    content = m.memory.read_granule(MICROCODE, src_granule, 0, GRANULE_SIZE)
    m.memory.write_granule(MICROCODE, target_granule, 0, content)
    entry.pending = False
    entry.perms = secinfo.perms
    m.memory.epcm_update(target_granule, entry)


def emodpe(m, vcpu, granule: int, add_perms: Perms) -> None:
    secs = _require_enclave_mode(m, vcpu)
    entry = _valid_entry(m, granule)
    if entry.owner != secs.eid or entry.page_type != PageType.REG:
        raise SgxError(E.PAGE_INVALID, "EMODPE extends own REG pages")
    if entry.pending or entry.staged_type is not None:
        raise SgxError(E.PAGE_INVALID, "page has a change in flight")
    new_perms = entry.perms | add_perms
    if new_perms & ~secs.attributes.max_page_perms:
        raise SgxError(
            E.PERM_POLICY_DENIED,
            f"{new_perms.text()} exceeds signed ceiling "
            f"{secs.attributes.max_page_perms.text()}",
        )
    entry.perms = new_perms
    m.memory.epcm_update(granule, entry)


# ---------------------------------------------------------------------------
# Attestation and key derivation


def ereport(m, vcpu, targetinfo: TargetInfo, reportdata: bytes) -> Report:
    secs = _require_enclave_mode(m, vcpu)
    if len(reportdata) != 64:
        raise ModelError("reportdata must be exactly 64 bytes")
    if len(targetinfo.mrenclave) != 32:
        raise ModelError("target measurement must be 32 bytes")
    keyid = m.rand_bytes(32)
    report = Report(
        mrenclave=secs.mrenclave,
        mrsigner=secs.mrsigner,
        isv_prod_id=secs.isv_prod_id,
        isv_svn=secs.isv_svn,
        attributes=secs.attributes.encode(),
        reportdata=bytes(reportdata),
        keyid=keyid,
    )
    target_key = m.crypto.derive_key(
        KeyName.REPORT, targetinfo.mrenclave, 0, keyid
    )
    report.mac = m.crypto.report_mac(target_key, report.body_bytes())
    return report


def egetkey(m, vcpu, request: KeyRequest) -> bytes:
    secs = _require_enclave_mode(m, vcpu)
    if request.key_name not in KeyName.NAMES:
        raise SgxError(E.POLICY_DENIED, f"unknown key name {request.key_name}")
    if request.key_name in (KeyName.PROVISION, KeyName.PROVISION_SEAL):
        if not secs.attributes.provision_key:
            raise SgxError(E.POLICY_DENIED, "provisioning keys need the PROVISION_KEY attribute")

    if request.key_name == KeyName.REPORT:
        # Report keys ignore the svn floor and always bind the own measurement.
        return m.crypto.derive_key(KeyName.REPORT, secs.mrenclave, 0, request.keyid)

    if request.isv_svn > secs.isv_svn:
        raise SgxError(E.POLICY_DENIED, f"svn {request.isv_svn} above enclave svn {secs.isv_svn}")
    if request.policy == KeyPolicy.MRENCLAVE:
        identity = secs.mrenclave
    elif request.policy == KeyPolicy.MRSIGNER:
        identity = secs.mrsigner
    else:
        raise SgxError(E.POLICY_DENIED, f"unknown key policy {request.policy}")
    return m.crypto.derive_key(request.key_name, identity, request.isv_svn, request.keyid)


def edeccssa(m, vcpu) -> None:
    _require_enclave_mode(m, vcpu)
    tcs = m.tcs_registry[vcpu.cur_tcs]
    if tcs.cssa == 0:
        raise SgxError(E.NO_SAVED_STATE, "cssa is already zero")
    tcs.cssa -= 1
