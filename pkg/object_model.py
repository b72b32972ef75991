# object_model.py: hidden classes, heap objects and prototype-chain lookup
# -----------------------------------------------------------------------------
# Objects built by the same sequence of property additions share one
# HiddenClass. Classes form an append-only transition tree rooted at one
# empty class per prototype; a class is never mutated once handed out, only
# its transition table grows.
# -----------------------------------------------------------------------------

from __future__ import annotations

import itertools
import weakref
from types import MappingProxyType
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Tuple

from config import HEADER_WORDS, WORD_SIZE

WORD_MASK = (1 << 64) - 1
MAX_CHAIN_DEPTH = 1 << 16

# id 0 never names a class: the IC structure uses it as "empty cache"
_class_ids = itertools.count(1)


class ObjectModelError(Exception):
    pass


class PrototypeCycleError(ObjectModelError):
    pass


class DeletionUnsupportedError(ObjectModelError):
    pass


# ------------------------------------------------------------------
# property names
# ------------------------------------------------------------------

class PropertyName:
    """Interned property name: equal text means the same object."""

    __slots__ = ("text", "__weakref__")
    _table: Dict[str, "PropertyName"] = {}

    def __new__(cls, text: str) -> "PropertyName":
        if not isinstance(text, str) or not text:
            raise ValueError("property name must be a non-empty string")
        existing = cls._table.get(text)
        if existing is not None:
            return existing
        name = super().__new__(cls)
        name.text = text
        cls._table[text] = name
        return name

    def __repr__(self) -> str:
        return f"PropertyName({self.text!r})"

    def __str__(self) -> str:
        return self.text


def intern(name: "str | PropertyName") -> PropertyName:
    return name if isinstance(name, PropertyName) else PropertyName(name)


# ------------------------------------------------------------------
# hidden classes
# ------------------------------------------------------------------

class HiddenClass:
    __slots__ = ("id", "slots", "prototype", "transitions", "parent", "__weakref__")

    def __init__(self, slots: Dict[PropertyName, int], prototype: Optional["HeapObject"],
                 parent: Optional["HiddenClass"] = None) -> None:
        self.id: int = next(_class_ids)
        self.slots: Mapping[PropertyName, int] = MappingProxyType(dict(slots))
        self.prototype = prototype
        self.transitions: Dict[PropertyName, HiddenClass] = {}
        self.parent = parent

    def index_of(self, name: PropertyName) -> Optional[int]:
        return self.slots.get(name)

    def transition(self, name: PropertyName) -> "HiddenClass":
        child = self.transitions.get(name)
        if child is None:
            slots = dict(self.slots)
            slots[name] = len(slots)
            child = HiddenClass(slots, self.prototype, parent=self)
            self.transitions[name] = child
        return child

    def property_names(self) -> List[PropertyName]:
        return sorted(self.slots, key=self.slots.__getitem__)

    def __len__(self) -> int:
        return len(self.slots)

    def __repr__(self) -> str:
        names = ", ".join(f"{n.text}:{i}" for n, i in sorted(self.slots.items(), key=lambda kv: kv[1]))
        return f"HiddenClass#{self.id}{{{names}}}"


class ShapeRegistry:
    """Root classes, one per prototype object (and one for "no prototype")."""

    def __init__(self) -> None:
        self._null_root = HiddenClass({}, None)
        self._roots: "weakref.WeakKeyDictionary[HeapObject, HiddenClass]" = weakref.WeakKeyDictionary()

    def root_for(self, proto: Optional["HeapObject"]) -> HiddenClass:
        if proto is None:
            return self._null_root
        root = self._roots.get(proto)
        if root is None:
            root = HiddenClass({}, proto)
            self._roots[proto] = root
        return root


registry = ShapeRegistry()


def reachable_classes(root: HiddenClass) -> Iterator[HiddenClass]:
    stack = [root]
    while stack:
        hc = stack.pop()
        yield hc
        stack.extend(hc.transitions.values())


# ------------------------------------------------------------------
# heap objects
# ------------------------------------------------------------------

class HeapObject:
    __slots__ = ("hclass", "slots", "__weakref__")

    def __init__(self, hclass: HiddenClass) -> None:
        self.hclass = hclass
        self.slots: List[int] = []

    @property
    def prototype(self) -> Optional["HeapObject"]:
        return self.hclass.prototype

    def __repr__(self) -> str:
        return f"HeapObject({self.hclass!r}, {self.slots})"


def new_object(proto: Optional[HeapObject] = None, shapes: Optional[ShapeRegistry] = None) -> HeapObject:
    return HeapObject((shapes or registry).root_for(proto))


def set_property(obj: HeapObject, name: "str | PropertyName", value: int) -> HeapObject:
    if not 0 <= value <= WORD_MASK:
        raise ValueError(f"value {value:#x} is not a 64-bit word")
    name = intern(name)
    idx = obj.hclass.index_of(name)
    if idx is not None:
        obj.slots[idx] = value
        return obj
    obj.hclass = obj.hclass.transition(name)
    obj.slots.append(value)
    return obj


def delete_property(obj: HeapObject, name: "str | PropertyName") -> None:
    raise DeletionUnsupportedError(f"cannot delete {intern(name).text!r}: shapes only grow")


def build_object(props: "Iterable[Tuple[str, int]] | Mapping[str, int]",
                 proto: Optional[HeapObject] = None,
                 shapes: Optional[ShapeRegistry] = None) -> HeapObject:
    items = props.items() if isinstance(props, Mapping) else props
    obj = new_object(proto, shapes)
    for name, value in items:
        set_property(obj, name, value)
    return obj


def lookup_own(obj: HeapObject, name: "str | PropertyName") -> Optional[int]:
    return obj.hclass.index_of(intern(name))


def lookup_chain(obj: HeapObject, name: "str | PropertyName") -> Optional[Tuple[HeapObject, int]]:
    name = intern(name)
    seen = set()
    holder: Optional[HeapObject] = obj
    while holder is not None:
        if id(holder) in seen or len(seen) > MAX_CHAIN_DEPTH:
            raise PrototypeCycleError(f"prototype chain of {obj!r} does not terminate")
        seen.add(id(holder))
        idx = holder.hclass.index_of(name)
        if idx is not None:
            return holder, idx
        holder = holder.prototype
    return None


def read_property(obj: HeapObject, name: "str | PropertyName", default: Optional[int] = None) -> Optional[int]:
    found = lookup_chain(obj, name)
    if found is None:
        return default
    holder, idx = found
    return holder.slots[idx]


# ------------------------------------------------------------------
# layout helpers
# ------------------------------------------------------------------

def field_index(slot_index: int) -> int:
    """Word index of a slot inside the object, header words included."""
    return HEADER_WORDS + slot_index


def slot_byte_offset(slot_index: int, word_size: int = WORD_SIZE) -> int:
    return slot_index * word_size


def object_words(obj: HeapObject) -> List[int]:
    # native layout: [header, class id, slot 0, slot 1, ...]
    return [len(obj.slots), obj.hclass.id] + list(obj.slots)
