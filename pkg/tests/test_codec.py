import pytest
from hypothesis import given, strategies as st

from bftflow import codec


def test_roundtrip_basic_values():
    samples = [
        None, True, False, 0, -1, 2**62, -(2**62), 1.5, -0.0,
        "", "hello", "únïcode", b"", b"\x00\xff", [], [1, "a", b"b"],
        {}, {"k": 1}, {"a": [1, 2], "b": {"nested": None}},
    ]
    for value in samples:
        encoded = codec.encode(value)
        assert codec.decode(encoded) == value


def test_tuples_decode_as_lists():
    assert codec.decode(codec.encode((1, 2))) == [1, 2]


def test_map_keys_sorted_deterministically():
    a = codec.encode({"b": 1, "a": 2})
    b = codec.encode({"a": 2, "b": 1})
    assert a == b


def test_int_overflow_rejected():
    with pytest.raises(codec.CodecError):
        codec.encode(2**63)
    with pytest.raises(codec.CodecError):
        codec.encode(-(2**63) - 1)


def test_non_string_map_key_rejected():
    with pytest.raises(codec.CodecError):
        codec.encode({1: "x"})


def test_trailing_bytes_rejected():
    data = codec.encode(1) + b"\x00"
    with pytest.raises(codec.CodecError):
        codec.decode(data)


def test_truncated_input_rejected():
    data = codec.encode([1, 2, 3])
    with pytest.raises(codec.CodecError):
        codec.decode(data[:-3])


def test_unsorted_map_rejected():
    # hand-build a map with keys out of order
    good = codec.encode({"a": 1, "b": 2})
    # swap the two entries: tag, count, then (len,key,value) pairs
    entry = b"\x00\x00\x00\x01"  # key length 1
    a = entry + b"a" + codec.encode(1)
    b = entry + b"b" + codec.encode(2)
    swapped = good[:5] + b + a
    with pytest.raises(codec.CodecError):
        codec.decode(swapped)


def test_digest_is_sha256_of_encoding():
    import hashlib

    value = {"x": [1, "y"]}
    assert codec.digest(value) == hashlib.sha256(codec.encode(value)).digest()


json_like = st.recursive(
    st.none() | st.booleans()
    | st.integers(min_value=codec.INT_MIN, max_value=codec.INT_MAX)
    | st.floats(allow_nan=False) | st.text(max_size=40) | st.binary(max_size=40),
    lambda children: st.lists(children, max_size=4)
    | st.dictionaries(st.text(max_size=8), children, max_size=4),
    max_leaves=20,
)


@given(json_like)
def test_roundtrip_property(value):
    decoded = codec.decode(codec.encode(value))
    assert codec.encode(decoded) == codec.encode(value)
