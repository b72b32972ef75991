# corpus.py: annotated hex fixtures of IC hit paths and their classification
# -----------------------------------------------------------------------------
# A fixture file holds one or more blocks separated by blank lines:
#
#   # name: hit_path
#   # expect: O2                 (O1, O2 or FAIL:<reason>)
#   # base: 0x401000             (address of the first byte, default 0x400000)
#   # ic: 0x402023               (address of the IC structure's offset word)
#   # slot: 3                    (word index patched in, default 3)
#   # word: 8                    (scale of the indexed load, default 8)
#   # hint: rdi                  (register holding the object, optional)
#   # label: 0x401000            (IC label, default: the first byte)
#   48 8b 05 1c 10 00 00
#   48 8b 04 c7
#
# Other comment lines are free text.
# -----------------------------------------------------------------------------

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Union

from config import WORD_SIZE
from dbm_engine import (
    FailReason,
    ImmediateTooWideError,
    Ineligible,
    PaddingImpossibleError,
    PatchPlan,
    analyze_site,
    plan_site,
)
from x86_codec import CodeBuffer, Reg

DEFAULT_BASE = 0x400000
DEFAULT_SLOT = 3
_KEYS = ("name", "expect", "base", "ic", "slot", "word", "hint", "label")


class CorpusParseError(ValueError):
    def __init__(self, path: Union[str, Path], line: int, message: str) -> None:
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


@dataclass
class Fixture:
    name: str
    path: str
    line: int
    code: bytes
    ic_addr: int
    base: int = DEFAULT_BASE
    expect: Optional[str] = None
    slot: int = DEFAULT_SLOT
    word_size: int = WORD_SIZE
    hint: Optional[Reg] = None
    label: Optional[int] = None

    @property
    def label_addr(self) -> int:
        return self.base if self.label is None else self.label

    def buffer(self) -> CodeBuffer:
        return CodeBuffer(self.base, bytearray(self.code))


@dataclass
class SiteResult:
    fixture: Fixture
    outcome: str                # "O1", "O2" or "FAIL:<reason>"
    reason: Optional[FailReason] = None
    stopped_at: Optional[int] = None
    plan: Optional[PatchPlan] = None

    @property
    def agrees(self) -> bool:
        return self.fixture.expect is None or self.fixture.expect == self.outcome

    @property
    def level(self) -> str:
        return "O0" if self.reason is not None else self.outcome


@dataclass
class CorpusResult:
    sites: List[SiteResult] = field(default_factory=list)

    @property
    def histogram(self) -> Dict[str, int]:
        counts = Counter(s.level for s in self.sites)
        return {lvl: counts.get(lvl, 0) for lvl in ("O0", "O1", "O2")}

    @property
    def reasons(self) -> Dict[str, int]:
        return dict(Counter(s.reason.value for s in self.sites if s.reason is not None))

    @property
    def disagreements(self) -> List[SiteResult]:
        return [s for s in self.sites if not s.agrees]


# ------------------------------------------------------------------
# parsing
# ------------------------------------------------------------------

def _parse_int(path, lineno: int, key: str, text: str) -> int:
    try:
        return int(text, 0)
    except ValueError:
        raise CorpusParseError(path, lineno, f"{key}: {text!r} is not an integer") from None


def _check_expect(path, lineno: int, text: str) -> str:
    if text in ("O1", "O2"):
        return text
    if text.startswith("FAIL:"):
        try:
            FailReason.parse(text[5:])
        except ValueError as e:
            raise CorpusParseError(path, lineno, str(e)) from None
        return text
    raise CorpusParseError(path, lineno, f"expect must be O1, O2 or FAIL:<reason>, got {text!r}")


def _finish(path, block: dict, code: bytearray, start: int, index: int) -> Fixture:
    if not code:
        raise CorpusParseError(path, start, "fixture has no code bytes")
    if "ic" not in block:
        raise CorpusParseError(path, start, "fixture lacks an '# ic:' address")
    return Fixture(
        name=block.get("name", f"{Path(path).stem}#{index}"),
        path=str(path),
        line=start,
        code=bytes(code),
        ic_addr=block["ic"],
        base=block.get("base", DEFAULT_BASE),
        expect=block.get("expect"),
        slot=block.get("slot", DEFAULT_SLOT),
        word_size=block.get("word", WORD_SIZE),
        hint=block.get("hint"),
        label=block.get("label"),
    )


def parse_fixtures(text: str, path: Union[str, Path] = "<string>") -> List[Fixture]:
    out: List[Fixture] = []
    block: dict = {}
    code = bytearray()
    start = 0

    def flush() -> None:
        nonlocal block, code
        if block or code:
            out.append(_finish(path, block, code, start, len(out)))
        block, code = {}, bytearray()

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            flush()
            continue
        if not block and not code:
            start = lineno
        if line.startswith("#"):
            key, sep, value = line[1:].partition(":")
            key, value = key.strip().lower(), value.strip()
            if not sep or key not in _KEYS:
                continue
            if key in block:
                raise CorpusParseError(path, lineno, f"duplicate '{key}' annotation")
            if key == "name":
                block[key] = value
            elif key == "expect":
                block[key] = _check_expect(path, lineno, value)
            elif key == "hint":
                try:
                    block[key] = Reg[value.lstrip("%").upper()]
                except KeyError:
                    raise CorpusParseError(path, lineno, f"unknown register {value!r}") from None
            else:
                block[key] = _parse_int(path, lineno, key, value)
            continue
        hex_part = line.split("#", 1)[0]
        try:
            code += bytes.fromhex(hex_part)
        except ValueError:
            raise CorpusParseError(path, lineno, f"bad hex bytes {hex_part.strip()!r}") from None
    flush()
    return out


def load_fixtures(path: Union[str, Path]) -> List[Fixture]:
    path = Path(path)
    return parse_fixtures(path.read_text(), path)


def load_corpus(directory: Union[str, Path]) -> List[Fixture]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"corpus directory {directory} does not exist")
    fixtures: List[Fixture] = []
    for path in sorted(directory.glob("*.hex")):
        fixtures.extend(load_fixtures(path))
    return fixtures


# ------------------------------------------------------------------
# classification
# ------------------------------------------------------------------

def classify_fixture(fx: Fixture) -> SiteResult:
    buf = fx.buffer()
    c = analyze_site(buf, fx.label_addr, fx.ic_addr, fx.hint, fx.word_size)
    if isinstance(c, Ineligible):
        return SiteResult(fx, f"FAIL:{c.reason.value}", c.reason, c.stopped_at)
    try:
        plan = plan_site(c, fx.slot, fx.word_size)
    except ImmediateTooWideError:
        reason = FailReason.IMMEDIATE_TOO_WIDE
        return SiteResult(fx, f"FAIL:{reason.value}", reason, c.offset_insn.addr)
    except PaddingImpossibleError:
        reason = FailReason.UNRECOGNIZED_SEQUENCE
        return SiteResult(fx, f"FAIL:{reason.value}", reason, c.offset_insn.addr)
    return SiteResult(fx, plan.level.name, plan=plan)


def classify_corpus(fixtures: Iterable[Fixture]) -> CorpusResult:
    return CorpusResult([classify_fixture(fx) for fx in fixtures])
