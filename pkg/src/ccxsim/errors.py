"""Simulated faults and errors.

Three families are deliberately kept apart:

* ``GranuleProtectionFault`` and ``SgxError`` are *simulated* outcomes.  They
  model what the machine would report to software and are part of normal
  operation (tests assert on them, enclave programs receive them as codes).
* ``ModelError`` means the simulator itself was driven incorrectly (out of
  range granule, invariant violation, bad dispatch plumbing).  It is a bug in
  the caller or in the model, never an architectural event.
"""

from __future__ import annotations

import enum


class SgxErrorCode(enum.IntEnum):
    """Stable numeric codes for microprogram failures.

    The numeric value is what an in-simulation program sees in x0 after a
    failed gadget call, so the values must stay stable.
    """

    OK = 0

    INVALID_LEAF = 1
    INVALID_MODE = 2
    INVALID_SERVICE = 3

    OCCUPIED = 10
    NOT_IN_EPC = 11
    BAD_GEOMETRY = 12
    NOT_ASSIGNED = 13
    ALREADY_ASSIGNED = 14

    UNKNOWN_ENCLAVE = 20
    ALREADY_INITIALIZED = 21
    NOT_INITIALIZED = 22
    ENCLAVE_CRASHED = 23

    BAD_VADDR = 30
    VADDR_COLLISION = 31
    BAD_TCS_LAYOUT = 32
    MISALIGNED = 33
    UNMEASURABLE_PAGE = 34

    SIG_INVALID = 40
    MEASUREMENT_MISMATCH = 41
    ATTRIBUTE_MISMATCH = 42

    CHILD_PRESENT = 50
    PAGE_IN_USE = 51
    PAGE_INVALID = 52
    NON_DEBUG_ENCLAVE = 53

    ALREADY_BLOCKED = 60
    NOT_BLOCKED = 61
    PREV_TRK_INCMPL = 62
    NOT_TRACKED = 63

    VA_SLOT_OCCUPIED = 70
    VERSION_MISMATCH = 71
    MAC_COMPARE_FAIL = 72
    VA_SLOT_INVALID = 73

    PERM_EXPANSION_ATTEMPT = 80
    ILLEGAL_TRANSITION = 81
    SECINFO_MISMATCH = 82
    NOT_PENDING = 83
    PERM_POLICY_DENIED = 84

    TCS_BUSY = 90
    CSSA_FULL = 91
    NO_SAVED_STATE = 92

    POLICY_DENIED = 100


class SgxError(Exception):
    """A microprogram refused the operation for an architectural reason."""

    def __init__(self, code: SgxErrorCode, detail: str = ""):
        self.code = code
        self.detail = detail
        msg = code.name if not detail else f"{code.name}: {detail}"
        super().__init__(msg)


class GranuleProtectionFault(Exception):
    """Access denied by the active granule protection table.

    Carries the fault record; the machine additionally appends the record to
    its GPF log so tests can audit every denial.
    """

    def __init__(self, granule: int, accessor, pas, gpt):
        self.granule = granule
        self.accessor = accessor
        self.pas = pas
        self.gpt = gpt
        super().__init__(
            f"GPF: accessor={accessor.name} pas={pas.name} "
            f"granule={granule} gpt={'sys' if gpt is None else gpt}"
        )


class AuthenticationFailure(Exception):
    """AEAD or MAC verification failed inside the crypto engine."""


class ModelError(Exception):
    """The simulation was driven outside its contract; not a simulated fault."""
