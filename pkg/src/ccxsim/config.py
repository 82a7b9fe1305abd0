"""Machine configuration: geometry, modes, seeds, and the abstract cost model.

Configs serialize to JSON and round-trip losslessly.  All fields default, so
an empty file (or no file) yields the standard desk-scale machine: 16384
granules (64 MiB) with a 512-granule fixed EPC in sgx mode, small enough that
memory-hungry scenarios actually swap.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Dict, Optional

from .errors import ModelError
from .memory import MemoryMode

# Abstract cost units per leaf invocation.  The table models relative expense
# only: table rebuild work scales with granule count, crypto-heavy leaves
# charge their primitive costs.  Wall-clock claims are out of scope.
DEFAULT_LEAF_BASE_COST: Dict[str, int] = {
    "ECREATE": 40,
    "EADD": 6,
    "EINIT": 30,
    "EREMOVE": 3,
    "EDBGRD": 5,
    "EDBGWR": 5,
    "EEXTEND": 4,
    "ELDB": 40,
    "ELDU": 40,
    "EBLOCK": 4,
    "EPA": 20,
    "EWB": 44,
    "ETRACK": 2,
    "EAUG": 24,
    "EMODPR": 6,
    "EMODT": 4,
    "EREPORT": 12,
    "EGETKEY": 8,
    "EENTER": 14,
    "ERESUME": 13,
    "EEXIT": 2,
    "EACCEPT": 6,
    "EMODPE": 6,
    "EACCEPTCOPY": 28,
    "EDECCSSA": 4,
}

DEFAULT_COST_FACTORS: Dict[str, int] = {
    # per-granule charge for populating a fresh enclave table at ECREATE
    "gpt_per_granule": 1,
    # per 64-byte block absorbed into a measurement
    "hash_block": 1,
    # one signature verification (EINIT)
    "sig_verify": 500,
    # one full-page authenticated encryption or decryption (EWB, ELDU, ELDB)
    "aead_page": 400,
    # one key derivation (EGETKEY, EREPORT)
    "kdf": 40,
    # one report MAC (EREPORT)
    "mac": 30,
}


@dataclass
class Config:
    granule_count: int = 16384
    mode: str = "sgx"  # "sgx" (fixed EPC) or "ccx" (dynamic)
    epc_base: int = 1024
    epc_size: int = 512
    crypto_seed: int = 2024
    scheduler_seed: int = 7
    vcpu_count: int = 4
    max_ecall_steps: int = 1_000_000
    audit_after_leaf: bool = False
    leaf_base_cost: Dict[str, int] = field(
        default_factory=lambda: dict(DEFAULT_LEAF_BASE_COST)
    )
    cost_factors: Dict[str, int] = field(
        default_factory=lambda: dict(DEFAULT_COST_FACTORS)
    )

    def validate(self) -> None:
        if self.mode not in ("sgx", "ccx"):
            raise ModelError(f"mode must be 'sgx' or 'ccx', not {self.mode!r}")
        if self.granule_count < 16:
            raise ModelError("granule_count too small to be useful")
        if self.vcpu_count < 1:
            raise ModelError("need at least one vcpu")
        self.memory_mode().validate(self.granule_count)

    def memory_mode(self) -> MemoryMode:
        if self.mode == "sgx":
            return MemoryMode.sgx_fixed(self.epc_base, self.epc_size)
        return MemoryMode.cca_dynamic()

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "Config":
        cfg = cls()
        known = set(cfg.__dataclass_fields__)
        for key, value in data.items():
            if key not in known:
                raise ModelError(f"unknown config field {key!r}")
            setattr(cfg, key, value)
        # Merge partial cost tables over the defaults.
        if "leaf_base_cost" in data:
            merged = dict(DEFAULT_LEAF_BASE_COST)
            merged.update(data["leaf_base_cost"])
            cfg.leaf_base_cost = merged
        if "cost_factors" in data:
            merged = dict(DEFAULT_COST_FACTORS)
            merged.update(data["cost_factors"])
            cfg.cost_factors = merged
        cfg.validate()
        return cfg

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Config":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path: Optional[str]) -> "Config":
        if path is None:
            return cls()
        return cls.from_json(Path(path).read_text())
