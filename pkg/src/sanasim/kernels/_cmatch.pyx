# cython: language_level=3
"""Compiled matching kernels; mirrors ``_pymatch`` exactly."""

cdef unsigned char WILDCARD = 63


cdef inline bint _match(const unsigned char* det, const unsigned char* pat, Py_ssize_t n, int r) nogil:
    cdef Py_ssize_t i
    cdef int need = n if r <= 0 else r
    cdef int run = 0
    cdef unsigned char d
    if need == 0:
        return True
    for i in range(n):
        d = det[i]
        if d == WILDCARD or d == pat[i]:
            run += 1
            if run >= need:
                return True
        else:
            run = 0
    return False


def match(bytes det, bytes pat, int r):
    cdef Py_ssize_t n = len(det)
    if len(pat) != n:
        raise ValueError(f"length mismatch: detector {n}, pattern {len(pat)}")
    return _match(<const unsigned char*>det, <const unsigned char*>pat, n, r)


def hamming(bytes a, bytes b):
    cdef Py_ssize_t n = len(a)
    cdef Py_ssize_t i
    cdef int d = 0
    cdef const unsigned char[:] x = a
    cdef const unsigned char[:] y = b
    if len(b) != n:
        raise ValueError(f"length mismatch: {n} vs {len(b)}")
    for i in range(n):
        if x[i] != y[i]:
            d += 1
    return d


cdef inline void _check(bytes a, bytes b) except *:
    if len(a) != len(b):
        raise ValueError(f"length mismatch: detector {len(a)}, pattern {len(b)}")


def first_match(list dets, list rs, list pats):
    cdef Py_ssize_t i, j
    cdef bytes det, pat
    cdef int r
    for i in range(len(dets)):
        det = dets[i]
        r = rs[i]
        for j in range(len(pats)):
            pat = pats[j]
            _check(det, pat)
            if _match(<const unsigned char*>det, <const unsigned char*>pat, len(det), r):
                return i, j
    return -1, -1


def survivors(list dets, list rs, list selfset):
    cdef Py_ssize_t i, j
    cdef bytes det, s
    cdef int r
    cdef bint hit
    out = []
    for i in range(len(dets)):
        det = dets[i]
        r = rs[i]
        hit = False
        for j in range(len(selfset)):
            s = selfset[j]
            _check(det, s)
            if _match(<const unsigned char*>det, <const unsigned char*>s, len(det), r):
                hit = True
                break
        if not hit:
            out.append(i)
    return out


def hits(list dets, list rs, list targets):
    cdef Py_ssize_t i, j, found
    cdef bytes det, t
    cdef int r
    out = []
    for i in range(len(dets)):
        det = dets[i]
        r = rs[i]
        found = -1
        for j in range(len(targets)):
            t = targets[j]
            _check(det, t)
            if _match(<const unsigned char*>det, <const unsigned char*>t, len(det), r):
                found = j
                break
        out.append(found)
    return out
