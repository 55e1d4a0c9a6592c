"""Canonical JSON encoding used for hashing, bus payloads and every file format.

Keys are sorted, there is no whitespace, text is UTF-8 and only
null/bool/int/str/list/dict values are accepted. Floats are rejected so that
hashes never depend on a float formatter.
"""

from __future__ import annotations

import hashlib
import json
from typing import Any


class NonCanonicalValue(ValueError):
    """Raised for values that have no canonical encoding (floats, non-str keys, ...)."""


def _check(value: Any, path: str) -> None:
    if value is None or isinstance(value, (bool, int, str)):
        if isinstance(value, str):
            try:
                value.encode("utf-8")
            except UnicodeEncodeError as exc:
                raise NonCanonicalValue(f"{path}: unencodable string") from exc
        return
    if isinstance(value, list):
        for i, item in enumerate(value):
            _check(item, f"{path}[{i}]")
        return
    if isinstance(value, dict):
        for key, item in value.items():
            if not isinstance(key, str):
                raise NonCanonicalValue(f"{path}: non-string key {key!r}")
            _check(key, path)
            _check(item, f"{path}.{key}")
        return
    raise NonCanonicalValue(f"{path}: {type(value).__name__} is not a ledger value")


def canonical_encode(value: Any) -> bytes:
    _check(value, "$")
    return json.dumps(
        value, sort_keys=True, separators=(",", ":"), ensure_ascii=False
    ).encode("utf-8")


def _reject_float(text: str) -> Any:
    raise NonCanonicalValue(f"float literal {text!r}")


def canonical_decode(data: bytes | str) -> Any:
    """Parse canonical JSON back into plain values. Float literals are refused."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    return json.loads(
        data,
        parse_float=_reject_float,
        parse_constant=_reject_float,
    )


def is_canonical(data: bytes) -> bool:
    try:
        return canonical_encode(canonical_decode(data)) == data
    except (NonCanonicalValue, ValueError):
        return False


def digest_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def canonical_hash(value: Any) -> str:
    return digest_hex(canonical_encode(value))


def copy_value(value: Any) -> Any:
    """Deep copy through the canonical encoding; also validates ``value``."""
    return canonical_decode(canonical_encode(value))
