"""Seed derivation and small shared helpers."""

import hashlib
import json


def derive_seed(master: int, *labels) -> int:
    """Derive a 64-bit stream seed from a master seed and a label path.

    The same (master, labels) pair always yields the same seed; distinct
    labels yield independent streams. All randomness in the package flows
    through seeds derived this way from one master seed.
    """
    h = hashlib.sha256()
    h.update(str(int(master)).encode("ascii"))
    for label in labels:
        h.update(b"/")
        h.update(str(label).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "little")


def stable_json(obj) -> str:
    """Compact JSON with a deterministic byte representation."""
    return json.dumps(obj, separators=(",", ":"), sort_keys=False, allow_nan=False)


def sha256_hex(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
