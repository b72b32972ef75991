import pytest

from object_model import (
    DeletionUnsupportedError,
    PropertyName,
    PrototypeCycleError,
    build_object,
    delete_property,
    field_index,
    intern,
    lookup_chain,
    lookup_own,
    new_object,
    object_words,
    reachable_classes,
    read_property,
    set_property,
    slot_byte_offset,
)


def test_new_object_is_empty(shapes):
    obj = new_object(shapes=shapes)
    assert len(obj.hclass) == 0
    assert obj.slots == []
    assert obj.prototype is None


def test_property_names_are_interned():
    assert PropertyName("prop") is PropertyName("prop")
    assert intern("prop") is PropertyName("prop")
    with pytest.raises(ValueError):
        PropertyName("")


def test_first_two_objects_share_a_class_third_differs(shapes):
    o1 = build_object({"a": 13, "prop": 12}, shapes=shapes)
    o2 = build_object({"a": 14, "prop": 15}, shapes=shapes)
    o3 = build_object({"b": 1, "c": 2, "prop": 3}, shapes=shapes)
    assert o1.hclass is o2.hclass
    assert o3.hclass is not o1.hclass
    assert dict((n.text, i) for n, i in o1.hclass.slots.items()) == {"a": 0, "prop": 1}


def test_third_property_gets_slot_two(shapes):
    obj = build_object({"b": 1, "c": 2, "prop": 3}, shapes=shapes)
    idx = lookup_own(obj, "prop")
    assert idx == 2
    assert slot_byte_offset(idx) == 0x10


def test_field_index_counts_header_words():
    # {a, prop} -> word 3, {b, c, prop} -> word 4
    assert field_index(1) * 8 == 0x18
    assert field_index(2) * 8 == 0x20


def test_overwrite_keeps_class(shapes):
    obj = build_object({"a": 1}, shapes=shapes)
    before = obj.hclass
    set_property(obj, "a", 99)
    assert obj.hclass is before
    assert obj.slots == [99]


def test_values_must_be_words(shapes):
    with pytest.raises(ValueError):
        set_property(new_object(shapes=shapes), "a", 1 << 64)


def test_deletion_is_unsupported(shapes):
    obj = build_object({"a": 1}, shapes=shapes)
    with pytest.raises(DeletionUnsupportedError):
        delete_property(obj, "a")


def test_lookup_own_missing(shapes):
    assert lookup_own(build_object({"a": 0}, shapes=shapes), "missing") is None


def test_lookup_chain_finds_prototype_property(shapes):
    proto = build_object({"shared": 7}, shapes=shapes)
    obj = build_object({"own": 1}, proto=proto, shapes=shapes)
    assert lookup_chain(obj, "own") == (obj, 0)
    assert lookup_chain(obj, "shared") == (proto, 0)
    assert lookup_chain(obj, "nowhere") is None
    assert read_property(obj, "shared") == 7


def test_prototype_cycle_is_detected(shapes):
    a = new_object(shapes=shapes)
    b = new_object(proto=a, shapes=shapes)
    # only reachable by corrupting a class after the fact
    a.hclass = shapes.root_for(b)
    with pytest.raises(PrototypeCycleError):
        lookup_chain(b, "x")


def _random_names(rng, n):
    pool = [f"p{i}" for i in range(24)]
    return [str(x) for x in rng.choice(pool, size=n, replace=False)]


def test_lookup_own_matches_list_scan(rng, shapes):
    for _ in range(300):
        names = _random_names(rng, int(rng.integers(0, 17)))
        obj = build_object([(n, i) for i, n in enumerate(names)], shapes=shapes)
        for key in [f"p{i}" for i in range(24)]:
            expected = names.index(key) if key in names else None
            assert lookup_own(obj, key) == expected


def test_lookup_chain_matches_recursive_oracle(rng, shapes):
    def oracle(obj, name):
        if obj is None:
            return None
        idx = lookup_own(obj, name)
        return (obj, idx) if idx is not None else oracle(obj.prototype, name)

    for _ in range(200):
        proto = None
        for _depth in range(int(rng.integers(1, 9))):
            names = _random_names(rng, int(rng.integers(0, 6)))
            proto = build_object([(n, 1) for n in names], proto=proto, shapes=shapes)
        for key in [f"p{i}" for i in range(24)]:
            assert lookup_chain(proto, key) == oracle(proto, key)


def test_identical_sequences_share_identity_and_slots_are_dense(rng, shapes):
    for _ in range(100):
        names = _random_names(rng, int(rng.integers(1, 12)))
        a = build_object([(n, 0) for n in names], shapes=shapes)
        b = build_object([(n, 1) for n in names], shapes=shapes)
        assert a.hclass is b.hclass
    for hc in reachable_classes(shapes.root_for(None)):
        assert sorted(hc.slots.values()) == list(range(len(hc)))


def test_object_words_layout(shapes):
    obj = build_object({"a": 13, "prop": 12}, shapes=shapes)
    assert object_words(obj) == [2, obj.hclass.id, 13, 12]
