"""Enclave control structures and their wire formats.

Byte layouts here are the contract between microprograms, the loader, and
in-enclave programs (which read saved-state frames and thread control pages
through ordinary loads).  Everything is little-endian and fixed-size.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Dict, Optional

from .errors import ModelError, SgxError, SgxErrorCode
from .memory import GRANULE_SIZE, PageType, Perms

# --------------------------------------------------------------------------
# Attributes

ATTR_DEBUG = 1 << 0
ATTR_INIT = 1 << 1
ATTR_AEXNOTIFY_ALLOWED = 1 << 2
ATTR_PROVISION_KEY = 1 << 3
_ATTR_MAXPERM_SHIFT = 8


@dataclass
class Attributes:
    """Enclave attribute flags plus the permission ceiling for EMODPE."""

    debug: bool = False
    init: bool = False
    aexnotify_allowed: bool = False
    provision_key: bool = False
    max_page_perms: Perms = Perms.R | Perms.W | Perms.X

    def encode(self) -> int:
        word = 0
        if self.debug:
            word |= ATTR_DEBUG
        if self.init:
            word |= ATTR_INIT
        if self.aexnotify_allowed:
            word |= ATTR_AEXNOTIFY_ALLOWED
        if self.provision_key:
            word |= ATTR_PROVISION_KEY
        word |= int(self.max_page_perms) << _ATTR_MAXPERM_SHIFT
        return word

    @classmethod
    def decode(cls, word: int) -> "Attributes":
        return cls(
            debug=bool(word & ATTR_DEBUG),
            init=bool(word & ATTR_INIT),
            aexnotify_allowed=bool(word & ATTR_AEXNOTIFY_ALLOWED),
            provision_key=bool(word & ATTR_PROVISION_KEY),
            max_page_perms=Perms((word >> _ATTR_MAXPERM_SHIFT) & 0x7),
        )

    def signed_view(self) -> int:
        """Attribute word as bound by a signature: the INIT bit is lifecycle
        state, not identity, and is masked out."""
        return self.encode() & ~ATTR_INIT

    @classmethod
    def parse(cls, text: str) -> "Attributes":
        attrs = cls()
        for item in text.split(","):
            item = item.strip().lower()
            if not item:
                continue
            if item == "debug":
                attrs.debug = True
            elif item == "aexnotify_allowed":
                attrs.aexnotify_allowed = True
            elif item == "provision_key":
                attrs.provision_key = True
            else:
                raise ValueError(f"unknown attribute {item!r}")
        return attrs


# --------------------------------------------------------------------------
# SECS (kept as a live object; the SECS granule itself is opaque to software)


@dataclass
class Secs:
    eid: int
    size: int
    base: int
    ssa_frame_size: int
    attributes: Attributes
    secs_granule: int
    mrenclave_state: object = None  # RunningHash until initialized
    mrenclave: Optional[bytes] = None
    mrsigner: Optional[bytes] = None
    isv_prod_id: int = 0
    isv_svn: int = 0
    track_epoch: int = 0
    entered_counts: Dict[int, int] = field(default_factory=dict)
    crashed: bool = False

    @property
    def initialized(self) -> bool:
        return self.attributes.init

    def contains(self, vaddr: int, length: int = 1) -> bool:
        return self.base <= vaddr and vaddr + length <= self.base + self.size

    def threads_before(self, epoch: int) -> int:
        return sum(n for e, n in self.entered_counts.items() if e < epoch and n > 0)


# --------------------------------------------------------------------------
# TCS

TCS_FLAG_DBGOPTIN = 1 << 0
TCS_FLAG_AEXNOTIFY = 1 << 1

_TCS_FMT = "<QQQQQQ"  # oentry, ossa, cssa, nssa, tls_base, flags


@dataclass
class Tcs:
    oentry: int
    ossa: int
    nssa: int
    tls_base: int = 0
    cssa: int = 0
    dbgoptin: bool = False
    aexnotify: bool = False
    busy: bool = False  # runtime only, never serialized as set

    def pack(self) -> bytes:
        flags = (TCS_FLAG_DBGOPTIN if self.dbgoptin else 0) | (
            TCS_FLAG_AEXNOTIFY if self.aexnotify else 0
        )
        body = struct.pack(
            _TCS_FMT, self.oentry, self.ossa, self.cssa, self.nssa, self.tls_base, flags
        )
        return body.ljust(GRANULE_SIZE, b"\0")

    @classmethod
    def unpack(cls, data: bytes) -> "Tcs":
        oentry, ossa, cssa, nssa, tls_base, flags = struct.unpack_from(_TCS_FMT, data)
        return cls(
            oentry=oentry,
            ossa=ossa,
            nssa=nssa,
            tls_base=tls_base,
            cssa=cssa,
            dbgoptin=bool(flags & TCS_FLAG_DBGOPTIN),
            aexnotify=bool(flags & TCS_FLAG_AEXNOTIFY),
        )

    def validate(self, secs: Secs) -> None:
        if self.nssa < 1:
            raise SgxError(SgxErrorCode.BAD_TCS_LAYOUT, "nssa must be >= 1")
        if not 0 <= self.cssa <= self.nssa:
            raise SgxError(SgxErrorCode.BAD_TCS_LAYOUT, "cssa out of range")
        if self.oentry >= secs.size:
            raise SgxError(SgxErrorCode.BAD_TCS_LAYOUT, "entry outside enclave")
        ssa_bytes = self.nssa * secs.ssa_frame_size * GRANULE_SIZE
        if self.ossa % GRANULE_SIZE or self.ossa + ssa_bytes > secs.size:
            raise SgxError(SgxErrorCode.BAD_TCS_LAYOUT, "SSA area outside enclave")
        if self.tls_base >= secs.size:
            raise SgxError(SgxErrorCode.BAD_TCS_LAYOUT, "TLS base outside enclave")
        if self.aexnotify and not secs.attributes.aexnotify_allowed:
            raise SgxError(
                SgxErrorCode.BAD_TCS_LAYOUT,
                "TCS opts into exit notification but the enclave does not allow it",
            )


# --------------------------------------------------------------------------
# Saved-state frame: register file snapshots written on asynchronous exit.
# In-enclave handlers read this layout with plain loads, so offsets are ABI.

SSA_NREGS = 32  # x0..x30 plus sp at index 31
SSA_OFF_REGS = 0
SSA_OFF_SP = 31 * 8
SSA_OFF_PC = 256
SSA_OFF_PSTATE = 264
SSA_OFF_TPIDR = 272
SSA_OFF_EXIT_REASON = 280
SSA_OFF_EXIT_PAYLOAD = 288
SSA_FRAME_BYTES = 296

EXIT_NONE = 0
EXIT_IRQ = 1
EXIT_PAGEFAULT = 2
EXIT_GPF = 3

EXIT_REASON_NAMES = {
    EXIT_NONE: "none",
    EXIT_IRQ: "irq",
    EXIT_PAGEFAULT: "pagefault",
    EXIT_GPF: "gpf",
}


@dataclass
class SsaFrame:
    regs: list  # 32 ints: x0..x30, sp
    pc: int
    pstate: int
    tpidr: int
    exit_reason: int = EXIT_NONE
    exit_payload: int = 0

    def pack(self) -> bytes:
        if len(self.regs) != SSA_NREGS:
            raise ModelError("SSA frame needs 32 register values")
        return struct.pack(
            f"<{SSA_NREGS}qQQQQQ",
            *[r - (1 << 64) if r >= (1 << 63) else r for r in self.regs],
            self.pc,
            self.pstate,
            self.tpidr,
            self.exit_reason,
            self.exit_payload,
        )

    @classmethod
    def unpack(cls, data: bytes) -> "SsaFrame":
        vals = struct.unpack_from(f"<{SSA_NREGS}qQQQQQ", data)
        regs = [v & ((1 << 64) - 1) for v in vals[:SSA_NREGS]]
        pc, pstate, tpidr, reason, payload = vals[SSA_NREGS:]
        return cls(regs, pc, pstate, tpidr, reason, payload)


# --------------------------------------------------------------------------
# SECINFO: request-side page descriptor

@dataclass(frozen=True)
class SecInfo:
    perms: Perms
    page_type: PageType

    def word(self) -> int:
        return int(self.perms) | (int(self.page_type) << 8)

    @classmethod
    def from_word(cls, word: int) -> "SecInfo":
        return cls(Perms(word & 0x7), PageType((word >> 8) & 0xFF))


# --------------------------------------------------------------------------
# Version arrays: 512 eight-byte slots stored directly in the page content.

VA_SLOT_SIZE = 8
VA_SLOT_COUNT = GRANULE_SIZE // VA_SLOT_SIZE  # 512
EMPTY_SLOT = bytes(VA_SLOT_SIZE)


# --------------------------------------------------------------------------
# SIGSTRUCT

_SIG_BODY_FMT = "<32sQHH"
SIG_BODY_SIZE = struct.calcsize(_SIG_BODY_FMT)


@dataclass
class SigStruct:
    enclavehash: bytes
    attributes: int  # signed attribute view (u64)
    isv_prod_id: int
    isv_svn: int
    public_key: bytes  # 32-byte Ed25519 public key
    signature: bytes  # 64 bytes

    def body_bytes(self) -> bytes:
        return struct.pack(
            _SIG_BODY_FMT,
            self.enclavehash,
            self.attributes,
            self.isv_prod_id,
            self.isv_svn,
        )

    def to_bytes(self) -> bytes:
        return self.body_bytes() + self.public_key + self.signature

    @classmethod
    def from_bytes(cls, data: bytes) -> "SigStruct":
        if len(data) != SIG_BODY_SIZE + 32 + 64:
            raise ModelError(f"sigstruct must be {SIG_BODY_SIZE + 96} bytes")
        enclavehash, attributes, prod, svn = struct.unpack_from(_SIG_BODY_FMT, data)
        return cls(
            enclavehash=enclavehash,
            attributes=attributes,
            isv_prod_id=prod,
            isv_svn=svn,
            public_key=data[SIG_BODY_SIZE : SIG_BODY_SIZE + 32],
            signature=data[SIG_BODY_SIZE + 32 :],
        )


# --------------------------------------------------------------------------
# Key requests and reports

class KeyName:
    SEAL = 1
    REPORT = 2
    PROVISION = 3
    PROVISION_SEAL = 4

    NAMES = {1: "SEAL", 2: "REPORT", 3: "PROVISION", 4: "PROVISION_SEAL"}


class KeyPolicy:
    MRENCLAVE = 1
    MRSIGNER = 2


_KEYREQ_FMT = "<HHH2x32s24x"
KEYREQUEST_SIZE = struct.calcsize(_KEYREQ_FMT)  # 64


@dataclass
class KeyRequest:
    key_name: int
    policy: int = KeyPolicy.MRENCLAVE
    isv_svn: int = 0
    keyid: bytes = bytes(32)

    def pack(self) -> bytes:
        return struct.pack(_KEYREQ_FMT, self.key_name, self.policy, self.isv_svn, self.keyid)

    @classmethod
    def unpack(cls, data: bytes) -> "KeyRequest":
        name, policy, svn, keyid = struct.unpack_from(_KEYREQ_FMT, data)
        return cls(name, policy, svn, keyid)


_TARGETINFO_FMT = "<32s32x"
TARGETINFO_SIZE = struct.calcsize(_TARGETINFO_FMT)  # 64


@dataclass
class TargetInfo:
    mrenclave: bytes

    def pack(self) -> bytes:
        return struct.pack(_TARGETINFO_FMT, self.mrenclave)

    @classmethod
    def unpack(cls, data: bytes) -> "TargetInfo":
        (mrenclave,) = struct.unpack_from(_TARGETINFO_FMT, data)
        return cls(mrenclave)


_REPORT_BODY_FMT = "<32s32sHH4xQ64s32s"
REPORT_BODY_SIZE = struct.calcsize(_REPORT_BODY_FMT)  # 176
REPORT_SIZE = REPORT_BODY_SIZE + 16


@dataclass
class Report:
    mrenclave: bytes
    mrsigner: bytes
    isv_prod_id: int
    isv_svn: int
    attributes: int
    reportdata: bytes  # 64 bytes
    keyid: bytes  # 32 bytes
    mac: bytes = b""

    def body_bytes(self) -> bytes:
        return struct.pack(
            _REPORT_BODY_FMT,
            self.mrenclave,
            self.mrsigner,
            self.isv_prod_id,
            self.isv_svn,
            self.attributes,
            self.reportdata,
            self.keyid,
        )

    def to_bytes(self) -> bytes:
        return self.body_bytes() + self.mac

    @classmethod
    def from_bytes(cls, data: bytes) -> "Report":
        if len(data) != REPORT_SIZE:
            raise ModelError(f"report must be {REPORT_SIZE} bytes")
        mre, mrs, prod, svn, attrs, rdata, keyid = struct.unpack_from(
            _REPORT_BODY_FMT, data
        )
        return cls(mre, mrs, prod, svn, attrs, rdata, keyid, mac=data[REPORT_BODY_SIZE:])


# --------------------------------------------------------------------------
# Swap metadata (PCMD): travels with an evicted page.  Every field except the
# MAC itself is bound into the AEAD as associated data, together with the
# version nonce held by the version-array slot.

_PCMD_FMT = "<BBBBB3xQQ"


@dataclass
class Pcmd:
    page_type: PageType
    perms: Perms
    pending: bool
    modified: bool
    staged_type: Optional[PageType]
    owner: Optional[int]  # None for version arrays
    vaddr: int
    mac: bytes = b""
    # Wire bytes as received; the AEAD authenticates these verbatim so no
    # parser canonicalization can mask a flipped byte.  None for freshly
    # built metadata, where the canonical encoding is the wire form.
    raw: Optional[bytes] = None

    def authenticated_bytes(self) -> bytes:
        if self.raw is not None:
            return self.raw
        return struct.pack(
            _PCMD_FMT,
            int(self.page_type),
            int(self.perms),
            int(self.pending),
            int(self.modified),
            0xFF if self.staged_type is None else int(self.staged_type),
            0 if self.owner is None else self.owner,
            self.vaddr,
        )

    def pack(self) -> bytes:
        return self.authenticated_bytes() + self.mac

    @classmethod
    def unpack(cls, data: bytes) -> "Pcmd":
        ptype, perms, pending, modified, staged, owner, vaddr = struct.unpack_from(
            _PCMD_FMT, data
        )

        # Metadata arrives from untrusted memory; out-of-range enum bytes are
        # carried through so the authenticity check rejects them, not the
        # parser.
        def _ptype(v):
            try:
                return PageType(v)
            except ValueError:
                return v

        fmt_size = struct.calcsize(_PCMD_FMT)
        return cls(
            page_type=_ptype(ptype),
            perms=Perms(perms) if perms <= 0x7 else perms,
            pending=bool(pending),
            modified=bool(modified),
            staged_type=None if staged == 0xFF else _ptype(staged),
            owner=None if owner == 0 else owner,
            vaddr=vaddr,
            mac=bytes(data[fmt_size:]),
            raw=bytes(data[:fmt_size]),
        )

    def aad(self, version: bytes) -> bytes:
        return self.authenticated_bytes() + version


@dataclass
class SwapBlob:
    """What EWB hands back: sealed page content plus authenticated metadata."""

    ciphertext: bytes
    pcmd: Pcmd


# --------------------------------------------------------------------------
# Measurement records.  Each absorbed record is one 64-byte block: an 8-byte
# tag, an 8-byte offset field, then record-specific fields, zero padded.
# EEXTEND absorbs its header block plus four 64-byte content blocks.

MEASURE_BLOCK = 64
EEXTEND_CHUNK = 256


def ecreate_record(ssa_frame_size: int, size: int) -> bytes:
    return struct.pack("<8sQQQ32x", b"ECREATE", 0, ssa_frame_size, size)


def eadd_record(offset: int, secinfo: SecInfo) -> bytes:
    return struct.pack("<8sQQ40x", b"EADD", offset, secinfo.word())


def eextend_record(offset: int) -> bytes:
    return struct.pack("<8sQ48x", b"EEXTEND", offset)
