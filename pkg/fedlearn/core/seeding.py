import hashlib


def derive_seed(*parts) -> int:
    """Deterministic 63-bit seed from an ordered tuple of ints/strings."""
    digest = hashlib.sha256("/".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1
