"""Tie-corrected Kendall rank correlation in O(n log n) (Knight's algorithm)."""

from __future__ import annotations

import math

from ..geo import DomainError


class UndefinedCorrelation(ValueError):
    """One of the inputs is constant, so tau-b has a zero denominator."""


def _tied_pairs(values) -> int:
    """Number of tied pairs in an already sorted sequence."""
    total = 0
    run = 1
    for i in range(1, len(values)):
        if values[i] == values[i - 1]:
            run += 1
        else:
            total += run * (run - 1) // 2
            run = 1
    return total + run * (run - 1) // 2


def _sort_count_swaps(seq: list) -> int:
    """Sort ``seq`` in place (bottom-up merge sort); return the number of inversions."""
    n = len(seq)
    swaps = 0
    buf = seq[:]
    width = 1
    src, dst = seq, buf
    while width < n:
        for lo in range(0, n, 2 * width):
            mid = min(lo + width, n)
            hi = min(lo + 2 * width, n)
            i, j, k = lo, mid, lo
            while i < mid and j < hi:
                if src[j] < src[i]:
                    dst[k] = src[j]
                    swaps += mid - i
                    j += 1
                else:
                    dst[k] = src[i]
                    i += 1
                k += 1
            dst[k:k + mid - i] = src[i:mid]
            k += mid - i
            dst[k:k + hi - j] = src[j:hi]
        src, dst = dst, src
        width *= 2
    if src is not seq:
        seq[:] = src
    return swaps


def kendall_tau(x, y) -> float:
    n = len(x)
    if n != len(y):
        raise DomainError("x and y must have the same length")
    if n < 2:
        raise DomainError("need at least two observations")
    pairs = sorted(zip((float(v) for v in x), (float(v) for v in y)))
    xs = [p[0] for p in pairs]
    n0 = n * (n - 1) // 2
    n1 = _tied_pairs(xs)
    n3 = _tied_pairs(pairs)  # tied in both x and y
    ys = [p[1] for p in pairs]
    swaps = _sort_count_swaps(ys)
    n2 = _tied_pairs(ys)
    if n0 == n1 or n0 == n2:
        raise UndefinedCorrelation("all values tied on one side")
    return (n0 - n1 - n2 + n3 - 2 * swaps) / math.sqrt((n0 - n1) * (n0 - n2))
