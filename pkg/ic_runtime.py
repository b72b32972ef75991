# ic_runtime.py: monomorphic inline caches over hidden classes
# -----------------------------------------------------------------------------
# One InlineCache per static property read. A hit compares the object's class
# id with the cached one and loads the slot directly; a miss walks the
# prototype chain, refreshes the cache for own properties and hands the site
# to the DBM engine: analysis on the first miss, a 4-byte repatch afterwards.
# -----------------------------------------------------------------------------

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Protocol

from config import UNDEFINED_WORD, WORD_SIZE
from dbm_engine import (
    UNANALYZED,
    AnalysisMemo,
    DbmEngine,
    Failed,
    FailReason,
    Recognized,
    Unanalyzed,
)
from object_model import HeapObject, PropertyName, field_index, intern, lookup_chain
from x86_codec import Reg

__all__ = [
    "AnalysisMemo", "FailReason", "Failed", "InlineCache", "Recognized", "Unanalyzed",
    "UNANALYZED", "WordStore", "cache_miss", "ic_read",
]

_site_ids = itertools.count(1)


class WordStore(Protocol):
    def write_word(self, addr: int, value: int) -> None: ...


@dataclass
class InlineCache:
    """Cache state of one IC site.

    `offset_addr` is the code-space address of the IC structure's offset
    word (the RIP-relative target of the hit path); the class id word sits
    one word below it. When `store` is set, both words are mirrored there so
    unpatched native code sees the same state as this object."""

    name: PropertyName
    site_id: int = field(default_factory=lambda: next(_site_ids))
    site_addr: int = 0
    offset_addr: int = 0
    obj_reg_hint: Optional[Reg] = None
    cached_class: Optional[int] = None
    cached_offset: int = 0
    memo: AnalysisMemo = UNANALYZED
    store: Optional[WordStore] = None
    hits: int = 0
    misses: int = 0

    def __post_init__(self) -> None:
        self.name = intern(self.name)

    @property
    def class_addr(self) -> int:
        return self.offset_addr - WORD_SIZE

    def publish(self) -> None:
        if self.store is None or self.cached_class is None:
            return
        self.store.write_word(self.offset_addr, field_index(self.cached_offset))
        self.store.write_word(self.class_addr, self.cached_class)


def ic_read(ic: InlineCache, obj: HeapObject, name: "str | PropertyName | None" = None,
            engine: Optional[DbmEngine] = None) -> int:
    if name is not None and intern(name) is not ic.name:
        raise ValueError(f"IC {ic.site_id} reads {ic.name.text!r}, not {intern(name).text!r}")
    if ic.cached_class is not None and obj.hclass.id == ic.cached_class:
        ic.hits += 1
        return obj.slots[ic.cached_offset]
    return cache_miss(ic, obj, ic.name, engine)


def cache_miss(ic: InlineCache, obj: HeapObject, name: "str | PropertyName",
               engine: Optional[DbmEngine] = None) -> int:
    ic.misses += 1
    found = lookup_chain(obj, name)
    if found is None:
        return UNDEFINED_WORD
    holder, idx = found
    value = holder.slots[idx]
    if holder is not obj:
        # only own properties are cached
        return value

    ic.cached_class = obj.hclass.id
    ic.cached_offset = idx
    ic.publish()

    if engine is None:
        return value
    index = field_index(idx)
    if isinstance(ic.memo, Unanalyzed):
        ic.memo = engine.first_miss(ic.site_id, ic.site_addr, ic.offset_addr, index, ic.obj_reg_hint)
    elif isinstance(ic.memo, Recognized):
        ic.memo = engine.later_miss(ic.site_id, ic.memo, index)
    return value
