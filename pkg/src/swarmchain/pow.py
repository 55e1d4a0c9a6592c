"""Proof-of-work kernel selection.

The compiled kernel (``swarmchain._pow``) is used when it was built and
``SWARMCHAIN_PURE_PYTHON`` is unset; otherwise the hashlib fallback runs.
Both expose ``search_nonce`` and ``meets_difficulty_digest`` with identical
results.
"""

from __future__ import annotations

import os

from swarmchain import _pow_py

python_kernel = _pow_py
compiled_kernel = None

if not os.environ.get("SWARMCHAIN_PURE_PYTHON"):
    try:
        from swarmchain import _pow as compiled_kernel  # type: ignore[no-redef]
    except ImportError:
        compiled_kernel = None

kernel = compiled_kernel if compiled_kernel is not None else python_kernel
BACKEND = "cython" if compiled_kernel is not None else "python"

search_nonce = kernel.search_nonce


def meets_difficulty(hash_hex: str, difficulty: int) -> bool:
    """True iff the leading ``difficulty`` bits of ``hash_hex`` are zero."""
    return _pow_py.meets_difficulty_digest(bytes.fromhex(hash_hex), difficulty)
