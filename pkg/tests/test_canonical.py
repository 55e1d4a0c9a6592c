import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from swarmchain.canonical import NonCanonicalValue, canonical_decode, canonical_encode, is_canonical

values = st.recursive(
    st.none() | st.booleans() | st.integers() | st.text(),
    lambda children: st.lists(children, max_size=4) | st.dictionaries(st.text(), children, max_size=4),
    max_leaves=20,
)


def test_sorted_keys_no_whitespace():
    assert canonical_encode({"b": 1, "a": 2}) == b'{"a":2,"b":1}'


def test_empty_list():
    assert canonical_encode([]) == b"[]"


@pytest.mark.parametrize("bad", [{"x": 1.5}, 1.0, {1: "a"}, (1, 2), {"s": {1, 2}}, b"raw"])
def test_rejects_non_ledger_values(bad):
    with pytest.raises(NonCanonicalValue):
        canonical_encode(bad)


def test_utf8_and_minimal_escaping():
    assert canonical_encode({"k": 'é"\n'}) == '{"k":"é\\"\\n"}'.encode()


def test_key_order_is_bytewise():
    # U+00E9 (C3 A9) sorts after "z" (7A) in UTF-8 and in code points
    assert canonical_encode({"é": 1, "z": 2}) == '{"z":2,"é":1}'.encode()


def test_decode_rejects_floats():
    with pytest.raises(NonCanonicalValue):
        canonical_decode(b'{"x":1.5}')


@given(values)
def test_round_trip(value):
    assert canonical_decode(canonical_encode(value)) == value


@given(values)
def test_encoding_is_canonical(value):
    data = canonical_encode(value)
    assert is_canonical(data)
    assert canonical_encode(json.loads(data)) == data


def test_non_canonical_bytes_detected():
    assert not is_canonical(b'{"b":1, "a":2}')
    assert not is_canonical(b'{"b":1,"a":2}')
