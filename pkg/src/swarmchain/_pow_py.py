"""Pure-Python proof-of-work kernel. Same contract as the compiled ``_pow``."""

from __future__ import annotations

import hashlib


def meets_difficulty_digest(digest: bytes, difficulty: int) -> bool:
    if difficulty <= 0:
        return True
    if difficulty > 8 * len(digest):
        return False
    full, rem = divmod(difficulty, 8)
    if any(digest[:full]):
        return False
    return rem == 0 or digest[full] >> (8 - rem) == 0


def search_nonce(prefix: bytes, suffix: bytes, difficulty: int, start: int, stop: int) -> int:
    """First nonce in ``[start, stop)`` whose header digest meets ``difficulty``, else -1.

    The header bytes are ``prefix + str(nonce) + suffix``.
    """
    base = hashlib.sha256(prefix)
    for nonce in range(start, stop):
        h = base.copy()
        h.update(b"%d" % nonce)
        h.update(suffix)
        if meets_difficulty_digest(h.digest(), difficulty):
            return nonce
    return -1
