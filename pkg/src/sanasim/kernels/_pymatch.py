"""Pure-Python matching kernels.

Reference implementation of the inner loops; the Cython module ``_cmatch``
exposes the same functions with identical semantics.
"""

WILDCARD = 63  # ord('?')


def match(det: bytes, pat: bytes, r: int) -> bool:
    n = len(det)
    if len(pat) != n:
        raise ValueError(f"length mismatch: detector {n}, pattern {len(pat)}")
    need = n if r <= 0 else r
    run = 0
    for i in range(n):
        d = det[i]
        if d == WILDCARD or d == pat[i]:
            run += 1
            if run >= need:
                return True
        else:
            run = 0
    return need == 0


def hamming(a: bytes, b: bytes) -> int:
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    return sum(1 for x, y in zip(a, b) if x != y)


def first_match(dets, rs, pats):
    """Return ``(detector index, pattern index)`` of the first hit, else ``(-1, -1)``."""
    for i, det in enumerate(dets):
        r = rs[i]
        for j, pat in enumerate(pats):
            if match(det, pat, r):
                return i, j
    return -1, -1


def survivors(dets, rs, selfset):
    """Indices of detectors matching no member of ``selfset``."""
    out = []
    for i, det in enumerate(dets):
        r = rs[i]
        for s in selfset:
            if match(det, s, r):
                break
        else:
            out.append(i)
    return out


def hits(dets, rs, targets):
    """For each detector, index of the first target it matches, or -1."""
    out = []
    for i, det in enumerate(dets):
        r = rs[i]
        found = -1
        for j, t in enumerate(targets):
            if match(det, t, r):
                found = j
                break
        out.append(found)
    return out
