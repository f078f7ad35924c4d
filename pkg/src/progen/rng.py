"""Deterministic seed derivation for nested RNG streams."""

from __future__ import annotations

import hashlib


def derive_seed(master_seed: int, *tags: object) -> int:
    """Derive a child seed from a master seed and a tag path.

    Stable across runs and platforms (unlike builtin ``hash``).
    """
    text = ":".join([str(master_seed), *(str(t) for t in tags)])
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1
