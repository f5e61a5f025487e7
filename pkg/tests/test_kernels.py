import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sanasim import kernels
from sanasim.kernels import pure

from oracles import match as oracle_match

try:
    from sanasim.kernels import _cmatch as compiled
except ImportError:  # extension not built in this environment
    compiled = None

ALPHA = "0123456789ABCDEF|?"
needs_compiled = pytest.mark.skipif(compiled is None, reason="compiled kernel not built")


def _pair(rng, width=24):
    det = "".join(rng.choice(ALPHA) for _ in range(width))
    pat = "".join(rng.choice("0123456789ABCDEF|") for _ in range(width))
    return det, pat


def test_backend_is_named():
    assert kernels.BACKEND in ("pure", "compiled")


def test_short_window_example():
    assert pure.match(b"ABCDE", b"XBCDY", 3)
    assert not pure.match(b"ABCDE", b"XBCDY", 5)


def test_exact_rule_uses_whole_width():
    assert pure.match(b"AB?D", b"ABCD", 0)
    assert not pure.match(b"AB?D", b"ABCE", 0)


def test_length_mismatch_raises():
    with pytest.raises(ValueError):
        pure.match(b"AB", b"ABC", 1)
    with pytest.raises(ValueError):
        pure.hamming(b"AB", b"ABC")


@pytest.mark.parametrize("r", [0, 1, 4, 8, 24])
def test_pure_agrees_with_window_oracle(r):
    rng = random.Random(r)
    for _ in range(3000):
        det, pat = _pair(rng)
        assert pure.match(det.encode(), pat.encode(), r) == oracle_match(det, pat, None if r == 0 else r)


@needs_compiled
@pytest.mark.parametrize("r", [0, 2, 8, 12])
def test_compiled_agrees_with_pure(r):
    rng = random.Random(100 + r)
    dets, pats = [], []
    for _ in range(400):
        d, p = _pair(rng)
        dets.append(d.encode())
        pats.append(p.encode())
    rs = [r] * len(dets)
    for d, p in zip(dets, pats):
        assert compiled.match(d, p, r) == pure.match(d, p, r)
        assert compiled.hamming(d, p) == pure.hamming(d, p)
    assert compiled.survivors(dets, rs, pats[:50]) == pure.survivors(dets, rs, pats[:50])
    assert compiled.hits(dets, rs, pats[:50]) == pure.hits(dets, rs, pats[:50])
    assert tuple(compiled.first_match(dets, rs, pats[:50])) == tuple(pure.first_match(dets, rs, pats[:50]))


@needs_compiled
def test_compiled_first_match_miss():
    assert tuple(compiled.first_match([b"AAAA"], [0], [b"BBBB"])) == (-1, -1)


@settings(max_examples=300, deadline=None)
@given(st.text(alphabet=ALPHA, min_size=12, max_size=12),
       st.text(alphabet=ALPHA[:-1], min_size=12, max_size=12),
       st.integers(min_value=1, max_value=12))
def test_match_is_monotone_in_r(det, pat, r):
    # a run of r agreeing symbols contains a run of r - 1
    if kernels.match(det.encode(), pat.encode(), r) and r > 1:
        assert kernels.match(det.encode(), pat.encode(), r - 1)


@settings(max_examples=200, deadline=None)
@given(st.text(alphabet=ALPHA[:-1], min_size=16, max_size=16))
def test_all_wildcards_match_everything(pat):
    assert kernels.match(b"?" * 16, pat.encode(), 0)
