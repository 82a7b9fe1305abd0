"""Deterministic cryptography for the simulator.

Measurement hashing, identity signing, key derivation, page sealing, and
report MACs all live here.  Every operation is a pure function of its inputs
plus the device secrets, and the device secrets themselves derive from a
config seed, so a whole simulated run replays bit-exactly.

Primitive choices (fixed, named in the config):
  hash  sha256            (measurement digests, signer digests)
  sign  ed25519           (enclave identity statements)
  kdf   hmac-sha256/16    (key derivation, domain-separated)
  aead  aes-128-gcm       (page sealing; version nonce folded into the IV)
  mac   hmac-sha256/16    (report MACs)
"""

from __future__ import annotations

import hashlib
import hmac
import struct
from typing import Dict, Optional, Tuple

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives.asymmetric import ed25519
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives import serialization

from .errors import AuthenticationFailure, ModelError
from .structs import SigStruct

HASH_ALGORITHM = "sha256"
SIGN_ALGORITHM = "ed25519"
KDF_ALGORITHM = "hmac-sha256-trunc16"
AEAD_ALGORITHM = "aes-128-gcm"
MAC_ALGORITHM = "hmac-sha256-trunc16"

DIGEST_SIZE = 32
KEY_SIZE = 16
MAC_SIZE = 16
GCM_IV_SIZE = 12


class RunningHash:
    """Incremental measurement hash over fixed 64-byte blocks.

    Copies are independent: finalizing a copy does not disturb the original,
    which keeps the running enclave measurement extendable after peeking.
    """

    def __init__(self, _state=None):
        self._h = _state if _state is not None else hashlib.sha256()

    def absorb(self, block: bytes) -> "RunningHash":
        if len(block) != 64:
            raise ModelError(f"measurement blocks are 64 bytes, got {len(block)}")
        self._h.update(block)
        return self

    def copy(self) -> "RunningHash":
        return RunningHash(self._h.copy())

    def final(self) -> bytes:
        return self._h.digest()


def _expand(seed: bytes, label: bytes, n: int) -> bytes:
    """Deterministic byte expansion for provisioning secrets from a seed."""
    out = b""
    counter = 0
    while len(out) < n:
        out += hashlib.sha256(seed + label + struct.pack("<I", counter)).digest()
        counter += 1
    return out[:n]


class DeviceSecrets:
    """Per-machine root-of-trust material, derived from a config seed.

    The root seal secret never leaves this module.  Signing keys are test
    fixtures standing in for enclave vendors; distinct labels model distinct
    vendors so signer-bound policies can be exercised.
    """

    def __init__(self, seed: bytes):
        if not seed:
            raise ModelError("device secrets need a non-empty seed")
        self._seed = bytes(seed)
        self._root_seal = _expand(self._seed, b"root-seal", 32)
        self.owner_epoch = _expand(self._seed, b"owner-epoch", 16)
        self._signers: Dict[str, ed25519.Ed25519PrivateKey] = {}

    @classmethod
    def from_seed_int(cls, seed: int) -> "DeviceSecrets":
        return cls(struct.pack("<Q", seed & ((1 << 64) - 1)))

    def root_mac_key(self, label: bytes) -> bytes:
        # Internal per-purpose keys; still never exported raw.
        return hmac.new(self._root_seal, b"purpose:" + label, hashlib.sha256).digest()

    def signing_key(self, label: str = "default") -> ed25519.Ed25519PrivateKey:
        key = self._signers.get(label)
        if key is None:
            raw = _expand(self._seed, b"signer:" + label.encode(), 32)
            key = ed25519.Ed25519PrivateKey.from_private_bytes(raw)
            self._signers[label] = key
        return key

    def public_bytes(self, label: str = "default") -> bytes:
        return self.signing_key(label).public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )


class CryptoEngine:
    """All measurement, signing, derivation, sealing, and MAC operations."""

    def __init__(self, secrets: DeviceSecrets):
        self.secrets = secrets

    # -- measurement hashing -------------------------------------------------

    def hash_init(self) -> RunningHash:
        return RunningHash()

    def hash_absorb(self, state: RunningHash, block: bytes) -> RunningHash:
        return state.absorb(block)

    def hash_final(self, state: RunningHash) -> bytes:
        return state.final()

    def digest(self, data: bytes) -> bytes:
        return hashlib.sha256(data).digest()

    # -- identity statements ---------------------------------------------------

    def sign_sigstruct(
        self,
        enclavehash: bytes,
        attributes: int,
        isv_prod_id: int,
        isv_svn: int,
        signer_label: str = "default",
    ) -> SigStruct:
        sig = SigStruct(
            enclavehash=enclavehash,
            attributes=attributes,
            isv_prod_id=isv_prod_id,
            isv_svn=isv_svn,
            public_key=self.secrets.public_bytes(signer_label),
            signature=b"",
        )
        sig.signature = self.secrets.signing_key(signer_label).sign(sig.body_bytes())
        return sig

    def verify_sigstruct(self, sig: SigStruct) -> Tuple[bool, bytes]:
        """Returns (ok, signer digest); the digest is valid either way."""
        signer_digest = self.digest(sig.public_key)
        try:
            pub = ed25519.Ed25519PublicKey.from_public_bytes(sig.public_key)
            pub.verify(sig.signature, sig.body_bytes())
        except (InvalidSignature, ValueError):
            return False, signer_digest
        return True, signer_digest

    def mrsigner(self, signer_label: str = "default") -> bytes:
        return self.digest(self.secrets.public_bytes(signer_label))

    # -- key derivation ---------------------------------------------------------

    def derive_key(
        self,
        name: int,
        identity: bytes,
        svn: int,
        keyid: bytes,
        owner_epoch: Optional[bytes] = None,
    ) -> bytes:
        if len(identity) != 32 or len(keyid) != 32:
            raise ModelError("identity and keyid must be 32 bytes")
        epoch = self.secrets.owner_epoch if owner_epoch is None else owner_epoch
        msg = (
            b"ccx-kdf-v1"
            + struct.pack("<HH", name, svn)
            + identity
            + keyid
            + epoch
        )
        return hmac.new(
            self.secrets.root_mac_key(b"kdf"), msg, hashlib.sha256
        ).digest()[:KEY_SIZE]

    def swap_key(self) -> bytes:
        return self.secrets.root_mac_key(b"page-swap")[:KEY_SIZE]

    # -- authenticated encryption -------------------------------------------------

    def blob_seal(
        self, key: bytes, nonce: bytes, plaintext: bytes, aad: bytes
    ) -> Tuple[bytes, bytes]:
        if len(nonce) != GCM_IV_SIZE:
            raise ModelError("GCM nonce must be 12 bytes")
        sealed = AESGCM(key).encrypt(nonce, plaintext, aad)
        return sealed[:-MAC_SIZE], sealed[-MAC_SIZE:]

    def blob_unseal(
        self, key: bytes, nonce: bytes, ciphertext: bytes, aad: bytes, mac: bytes
    ) -> bytes:
        try:
            return AESGCM(key).decrypt(nonce, ciphertext + mac, aad)
        except InvalidTag:
            raise AuthenticationFailure("AEAD authentication failed") from None

    def _page_iv(self, aad: bytes) -> bytes:
        # The version nonce rides at the tail of the aad, so distinct versions
        # give distinct IVs even for identical page content.
        return hashlib.sha256(b"ccx-page-iv" + aad).digest()[:GCM_IV_SIZE]

    def page_seal(self, key: bytes, plaintext: bytes, aad: bytes) -> Tuple[bytes, bytes]:
        if len(plaintext) != 4096:
            raise ModelError("page sealing works on whole 4096-byte pages")
        return self.blob_seal(key, self._page_iv(aad), plaintext, aad)

    def page_unseal(self, key: bytes, ciphertext: bytes, aad: bytes, mac: bytes) -> bytes:
        return self.blob_unseal(key, self._page_iv(aad), ciphertext, aad, mac)

    # -- report MACs -------------------------------------------------------------

    def report_mac(self, report_key: bytes, body: bytes) -> bytes:
        return hmac.new(report_key, body, hashlib.sha256).digest()[:MAC_SIZE]
