"""Enclave manifests: the text format the loader builds enclaves from.

Line-oriented, diffable, self-contained.  Grammar (one directive per line,
'#' starts a comment):

    name <ident>
    size <int>                      enclave linear size, power of two
    ssa_frame_size <int>            save-state frame size in pages (default 1)
    nssa <int>                      save-state slots per thread (default 2)
    attributes <flag>[,<flag>...]   debug, aexnotify_allowed, provision_key
    max_page_perms <rwx>            ceiling for permission extension (default rwx)
    isv_prod_id <int>               product id signed into the identity
    isv_svn <int>                   security version signed into the identity
    page vaddr=<off> perms=<rwx> content=<src> [measured=yes|no] [count=<n>]
    tcs vaddr=<off> oentry=<off> ossa=<off> [tls=<off>] [flags=<f,f>] [measured=yes|no]
    sigstruct test-key[:<label>] | file:<relpath>

Content sources: ``zero`` (zero-filled), ``hex:<hexbytes>`` (inline, padded to
a page multiple), ``file:<relpath>`` (raw bytes, padded).  Multi-page content
spreads across consecutive pages; ``count`` repeats zero pages.  Numbers
accept 0x-prefixed hex.  Pages and TCS entries are measured in file order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

from .errors import ModelError
from .memory import GRANULE_SIZE, Perms
from .structs import Attributes, Tcs


class ManifestError(Exception):
    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"manifest line {line_no}: {message}")


def _num(text: str) -> int:
    return int(text, 0)


@dataclass
class PageSpec:
    vaddr: int  # enclave-relative offset
    perms: Perms
    content: bytes  # padded to a page multiple
    measured: bool = True

    @property
    def page_count(self) -> int:
        return len(self.content) // GRANULE_SIZE


@dataclass
class TcsSpec:
    vaddr: int
    oentry: int
    ossa: int
    tls_base: int = 0
    aexnotify: bool = False
    dbgoptin: bool = False
    measured: bool = True

    def build(self, nssa: int) -> Tcs:
        return Tcs(
            oentry=self.oentry,
            ossa=self.ossa,
            nssa=nssa,
            tls_base=self.tls_base,
            aexnotify=self.aexnotify,
            dbgoptin=self.dbgoptin,
        )


@dataclass
class EnclaveManifest:
    name: str = "enclave"
    size: int = 1 << 21
    ssa_frame_size: int = 1
    nssa: int = 2
    attributes: Attributes = field(default_factory=Attributes)
    isv_prod_id: int = 0
    isv_svn: int = 0
    pages: List[PageSpec] = field(default_factory=list)
    tcs: List[TcsSpec] = field(default_factory=list)
    sigstruct_source: str = "test-key"
    base_dir: Optional[Path] = None

    def validate(self) -> None:
        if self.size < GRANULE_SIZE or self.size & (self.size - 1):
            raise ModelError(f"size {self.size:#x} must be a power-of-two page multiple")
        used = {}
        for spec in self.pages:
            for i in range(spec.page_count):
                off = spec.vaddr + i * GRANULE_SIZE
                if off % GRANULE_SIZE or off + GRANULE_SIZE > self.size:
                    raise ModelError(f"page offset {off:#x} invalid")
                if off in used:
                    raise ModelError(f"page offset {off:#x} specified twice")
                used[off] = spec
        for spec in self.tcs:
            if spec.vaddr % GRANULE_SIZE or spec.vaddr + GRANULE_SIZE > self.size:
                raise ModelError(f"tcs offset {spec.vaddr:#x} invalid")
            if spec.vaddr in used:
                raise ModelError(f"tcs offset {spec.vaddr:#x} collides with a page")
            used[spec.vaddr] = spec
            if spec.oentry >= self.size:
                raise ModelError("tcs entry point outside enclave")
            ssa_bytes = self.nssa * self.ssa_frame_size * GRANULE_SIZE
            if spec.ossa % GRANULE_SIZE or spec.ossa + ssa_bytes > self.size:
                raise ModelError("tcs save-state area outside enclave")
            for i in range(self.nssa * self.ssa_frame_size):
                if spec.ossa + i * GRANULE_SIZE not in used:
                    raise ModelError(
                        f"tcs at {spec.vaddr:#x}: save-state page "
                        f"{spec.ossa + i * GRANULE_SIZE:#x} is not declared"
                    )

    # -- parsing ---------------------------------------------------------------

    @classmethod
    def parse(cls, text: str, base_dir: Optional[Path] = None) -> "EnclaveManifest":
        manifest = cls(base_dir=base_dir)
        manifest.pages = []
        manifest.tcs = []
        for line_no, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, rest = line.partition(" ")
            rest = rest.strip()
            try:
                if key == "name":
                    manifest.name = rest
                elif key == "size":
                    manifest.size = _num(rest)
                elif key == "ssa_frame_size":
                    manifest.ssa_frame_size = _num(rest)
                elif key == "nssa":
                    manifest.nssa = _num(rest)
                elif key == "attributes":
                    manifest.attributes = Attributes.parse(rest)
                elif key == "max_page_perms":
                    manifest.attributes.max_page_perms = Perms.parse(rest)
                elif key == "isv_prod_id":
                    manifest.isv_prod_id = _num(rest)
                elif key == "isv_svn":
                    manifest.isv_svn = _num(rest)
                elif key == "page":
                    manifest.pages.append(cls._parse_page(rest, base_dir))
                elif key == "tcs":
                    manifest.tcs.append(cls._parse_tcs(rest))
                elif key == "sigstruct":
                    manifest.sigstruct_source = rest
                else:
                    raise ValueError(f"unknown directive {key!r}")
            except (ValueError, ModelError) as exc:
                raise ManifestError(line_no, str(exc)) from None
        try:
            manifest.validate()
        except ModelError as exc:
            raise ManifestError(0, str(exc)) from None
        return manifest

    @classmethod
    def load(cls, path) -> "EnclaveManifest":
        path = Path(path)
        return cls.parse(path.read_text(), base_dir=path.parent)

    @staticmethod
    def _fields(rest: str) -> dict:
        out = {}
        for token in rest.split():
            if "=" not in token:
                raise ValueError(f"expected key=value, got {token!r}")
            k, v = token.split("=", 1)
            out[k] = v
        return out

    @classmethod
    def _parse_page(cls, rest: str, base_dir: Optional[Path]) -> PageSpec:
        f = cls._fields(rest)
        vaddr = _num(f.pop("vaddr"))
        perms = Perms.parse(f.pop("perms", "rw"))
        content_src = f.pop("content", "zero")
        measured = f.pop("measured", "yes") == "yes"
        count = _num(f.pop("count", "1"))
        if f:
            raise ValueError(f"unknown page fields {sorted(f)}")

        if content_src == "zero":
            content = bytes(count * GRANULE_SIZE)
        elif content_src.startswith("hex:"):
            content = bytes.fromhex(content_src[4:])
        elif content_src.startswith("file:"):
            if base_dir is None:
                raise ValueError("file content needs a manifest directory")
            content = (base_dir / content_src[5:]).read_bytes()
        else:
            raise ValueError(f"unknown content source {content_src!r}")
        if len(content) == 0 or len(content) % GRANULE_SIZE:
            pad = GRANULE_SIZE - (len(content) % GRANULE_SIZE or GRANULE_SIZE)
            content = content + bytes(pad)
        return PageSpec(vaddr=vaddr, perms=perms, content=content, measured=measured)

    @classmethod
    def _parse_tcs(cls, rest: str) -> TcsSpec:
        f = cls._fields(rest)
        spec = TcsSpec(
            vaddr=_num(f.pop("vaddr")),
            oentry=_num(f.pop("oentry")),
            ossa=_num(f.pop("ossa")),
            tls_base=_num(f.pop("tls", "0")),
            measured=f.pop("measured", "yes") == "yes",
        )
        for flag in f.pop("flags", "").split(","):
            flag = flag.strip()
            if flag == "aexnotify":
                spec.aexnotify = True
            elif flag == "dbgoptin":
                spec.dbgoptin = True
            elif flag:
                raise ValueError(f"unknown tcs flag {flag!r}")
        if f:
            raise ValueError(f"unknown tcs fields {sorted(f)}")
        return spec
