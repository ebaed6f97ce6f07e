"""Solid harmonics and the translation operators built from them.

Conventions (pinned here once; every identity below is covered by tests
against direct kernel evaluation):

    regular   Y_n^m(v) = r^n P_n^m(cos th) e^(i m ph) / (n+m)!
    singular  T_n^m(v) = (n-m)! P_n^m(cos th) e^(i m ph) / r^(n+1)

stored in linear order idx(n, m) = n^2 + n + m for 0 <= n < order,
-n <= m <= n, with Y_n^(-m) = (-1)^m conj(Y_n^m) and likewise for T.
They separate the Newton kernel,

    1/|x-y| = sum_(n,m) conj(T_n^m(x)) Y_n^m(y)        (|y| < |x|),

converging geometrically in |y|/|x|, and satisfy the translations

    Y_n^m(a+b) = sum_(k,l) Y_k^l(a) Y_(n-k)^(m-l)(b)           (exact)
    T_n^m(a+b) = sum_(k,l) (-1)^k conj(Y_k^l(b)) T_(n+k)^(m+l)(a)

for |b| < |a|.  Multipole expansions hold coefficients M with
phi(x) = sum M_n^m conj(T_n^m(x - center)); local expansions are stored
in Taylor form, phi(x) = sum L_n^m Y_n^m(x - center).  For real fields
both satisfy C_n^(-m) = (-1)^m conj(C_n^m).

Everything here is double precision; high precision lives upstream in
the precomputed near-field matrices.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np


def harmonic_index(n: int, m: int) -> int:
    """Linear index of (n, m) in the packed coefficient array."""
    return n * n + n + m


def coefficient_count(order: int) -> int:
    return order * order


def regular_harmonics(points, order: int) -> np.ndarray:
    """Regular solid harmonics Y_n^m at one point or a batch.

    ``points`` has shape (3,) or (N, 3); the result has the matching
    shape (order^2,) or (N, order^2).  Y_0^0 = 1 everywhere and
    Y_n^m(0) = 0 for n > 0.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n_pts = pts.shape[0]
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    r2 = x * x + y * y + z * z
    xy = x + 1j * y
    out = np.zeros((n_pts, order * order), dtype=complex)
    out[:, 0] = 1.0
    for n in range(1, order):
        out[:, harmonic_index(n, n)] = xy * out[:, harmonic_index(n - 1, n - 1)] / (2 * n)
    for m in range(order):
        for n in range(m + 1, order):
            upper = (2 * n - 1) * z * out[:, harmonic_index(n - 1, m)]
            if n - 2 >= m:
                upper = upper - r2 * out[:, harmonic_index(n - 2, m)]
            out[:, harmonic_index(n, m)] = upper / ((n + m) * (n - m))
    _fill_negative_orders(out, order)
    return out[0] if np.ndim(points) == 1 else out


def singular_harmonics(points, order: int) -> np.ndarray:
    """Singular solid harmonics T_n^m at one point or a batch (points != 0)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n_pts = pts.shape[0]
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    r2 = x * x + y * y + z * z
    if np.any(r2 == 0.0):
        raise ValueError("singular harmonics are undefined at the origin")
    xy = x + 1j * y
    out = np.zeros((n_pts, order * order), dtype=complex)
    out[:, 0] = 1.0 / np.sqrt(r2)
    for n in range(1, order):
        out[:, harmonic_index(n, n)] = (
            (2 * n - 1) * xy * out[:, harmonic_index(n - 1, n - 1)] / r2
        )
    for m in range(order):
        for n in range(m + 1, order):
            upper = (2 * n - 1) * z * out[:, harmonic_index(n - 1, m)]
            if n - 2 >= m:
                upper = upper - ((n - 1) ** 2 - m * m) * out[:, harmonic_index(n - 2, m)]
            out[:, harmonic_index(n, m)] = upper / r2
    _fill_negative_orders(out, order)
    return out[0] if np.ndim(points) == 1 else out


def _fill_negative_orders(out: np.ndarray, order: int) -> None:
    for n in range(order):
        for m in range(1, n + 1):
            out[:, harmonic_index(n, -m)] = (-1) ** m * np.conj(
                out[:, harmonic_index(n, m)]
            )


@lru_cache(maxsize=8)
def _regular_shift_index(order: int):
    """Gather map A[(n,m),(k,l)] -> idx(n-k, m-l), with validity mask."""
    size = order * order
    gather = np.zeros((size, size), dtype=np.int64)
    mask = np.zeros((size, size), dtype=bool)
    for n in range(order):
        for m in range(-n, n + 1):
            row = harmonic_index(n, m)
            for k in range(n + 1):
                for l in range(-k, k + 1):
                    if abs(m - l) <= n - k:
                        col = harmonic_index(k, l)
                        gather[row, col] = harmonic_index(n - k, m - l)
                        mask[row, col] = True
    return gather, mask


@lru_cache(maxsize=8)
def _m2l_index(order: int):
    """Gather map B[(k,l),(p,q)] -> idx(p+k, q+l) into an order-(2*order-1)
    singular array, plus the (-1)^k row signs."""
    size = order * order
    gather = np.zeros((size, size), dtype=np.int64)
    signs = np.zeros(size)
    for k in range(order):
        for l in range(-k, k + 1):
            row = harmonic_index(k, l)
            signs[row] = (-1) ** k
            for p in range(order):
                for q in range(-p, p + 1):
                    gather[row, harmonic_index(p, q)] = harmonic_index(p + k, q + l)
    return gather, signs


def regular_shift_matrix(offset, order: int) -> np.ndarray:
    """Matrix S with S[(n,m),(k,l)] = Y_(n-k)^(m-l)(offset).

    Shifts expansions exactly (no truncation): multipoles move by
    M(new) = S @ M(old) with offset = old_center - new_center, and local
    Taylor coefficients by L(child) = S.T @ L(parent) with
    offset = child_center - parent_center.
    """
    ups = regular_harmonics(np.asarray(offset, dtype=float), order)
    gather, mask = _regular_shift_index(order)
    return np.where(mask, ups[gather], 0.0)


def m2l_matrix(offset, order: int) -> np.ndarray:
    """Multipole-to-local operator for expansion centers separated by ``offset``.

    L = T @ M turns multipole moments about z into local Taylor
    coefficients about w, with offset = w - z; entries are
    (-1)^k conj(T_(p+k)^(q+l)(offset)).
    """
    theta = singular_harmonics(np.asarray(offset, dtype=float), 2 * order - 1)
    gather, signs = _m2l_index(order)
    return signs[:, None] * np.conj(theta)[gather]


def m2l_apply_block(offsets, sources: np.ndarray, order: int) -> np.ndarray:
    """Apply one M2L operator to many source expansions at the same offset."""
    return sources @ m2l_matrix(offsets, order).T


def evaluate_multipole(coeffs: np.ndarray, displacement) -> float:
    """phi(x) from multipole coefficients; displacement = x - center."""
    theta = singular_harmonics(np.asarray(displacement, dtype=float), _order_of(coeffs))
    return float(np.real(np.sum(coeffs * np.conj(theta))))

def evaluate_local(coeffs: np.ndarray, displacement) -> float:
    """phi(x) from local Taylor coefficients; displacement = x - center."""
    ups = regular_harmonics(np.asarray(displacement, dtype=float), _order_of(coeffs))
    return float(np.real(np.sum(coeffs * ups)))


def _order_of(coeffs: np.ndarray) -> int:
    order = int(round(len(coeffs) ** 0.5))
    if order * order != len(coeffs):
        raise ValueError(f"coefficient count {len(coeffs)} is not a square")
    return order


def conjugation_defect(coeffs: np.ndarray) -> float:
    """Max |C_n^(-m) - (-1)^m conj(C_n^m)|; zero for real-field expansions."""
    order = _order_of(coeffs)
    worst = 0.0
    for n in range(order):
        for m in range(n + 1):
            lhs = coeffs[harmonic_index(n, -m)]
            rhs = (-1) ** m * np.conj(coeffs[harmonic_index(n, m)])
            worst = max(worst, abs(lhs - rhs))
    return worst
