"""Tridiagonal helpers; a matrix is a triple ``(lower, diag, upper)``."""

import numpy as np
import scipy.linalg


def matvec(tri, x):
    lo, d, up = tri
    y = d * x
    y[:-1] += up * x[1:]
    y[1:] += lo * x[:-1]
    return y


def combine(*terms):
    """``sum c_k T_k`` for pairs ``(c_k, T_k)``."""
    c0, t0 = terms[0]
    lo, d, up = (c0 * t0[0], c0 * t0[1], c0 * t0[2])
    for c, t in terms[1:]:
        lo = lo + c * t[0]
        d = d + c * t[1]
        up = up + c * t[2]
    return lo, d, up


def scale_columns(tri, s):
    """``T @ diag(s)``."""
    lo, d, up = tri
    s = np.broadcast_to(s, d.shape)
    return lo * s[:-1], d * s, up * s[1:]


def solve(tri, rhs):
    lo, d, up = tri
    ab = np.zeros((3, len(d)))
    ab[0, 1:] = up
    ab[1] = d
    ab[2, :-1] = lo
    return scipy.linalg.solve_banded((1, 1), ab, rhs, check_finite=False)


def solve_block(a11, a12, a21, a22, r1, r2):
    """Solve the 2x2 block system of tridiagonals, unknowns interleaved node by node."""
    n = len(a11[1])
    ab = np.zeros((7, 2 * n))
    # ab[3 + i - j, j] = A[i, j]; even rows/cols carry the first block
    for (blk, roff, coff) in ((a11, 0, 0), (a12, 0, 1), (a21, 1, 0), (a22, 1, 1)):
        lo, d, up = blk
        cols = 2 * np.arange(n) + coff
        rows = 2 * np.arange(n) + roff
        ab[3 + rows - cols, cols] = d
        ab[3 + rows[:-1] - cols[1:], cols[1:]] = up
        ab[3 + rows[1:] - cols[:-1], cols[:-1]] = lo
    rhs = np.empty(2 * n)
    rhs[0::2] = r1
    rhs[1::2] = r2
    z = scipy.linalg.solve_banded((3, 3), ab, rhs, check_finite=False)
    return z[0::2], z[1::2]
