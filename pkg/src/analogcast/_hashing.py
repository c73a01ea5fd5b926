"""Stable content hashes used to key cache files and tie artifacts together."""

import hashlib

import numpy as np


def content_hash(*parts) -> str:
    """Hex digest (16 chars) over a canonical encoding of arrays/scalars/strings.

    Arrays contribute shape, dtype and raw bytes; everything else contributes
    its repr. Order of arguments matters.
    """
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, np.ndarray):
            arr = np.ascontiguousarray(part)
            h.update(str(arr.shape).encode())
            h.update(str(arr.dtype).encode())
            h.update(arr.tobytes())
        elif part is None:
            h.update(b"<none>")
        elif isinstance(part, (list, tuple)):
            h.update(b"(")
            for item in part:
                h.update(content_hash(item).encode())
            h.update(b")")
        else:
            h.update(repr(part).encode())
    return h.hexdigest()[:16]
