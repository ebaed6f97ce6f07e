"""Free-space Poisson solver on a Cartesian grid via fast multipole summation.

Pipeline: the source f is L2-projected onto discontinuous orthonormal
Legendre polynomials of total degree < n on a Cartesian grid that covers
supp f plus one layer of cells.  Per-cell multipole moments feed an octree
FMM (upward shifts, multipole-to-local at the standard interaction lists,
downward shifts) whose leaf level IS the grid, so the far field of a cell
is exactly the complement of its 27-cell neighbourhood.  Far-field
coefficients of the potential come from the local expansions through one
precomputed quadrature matrix; near-field coefficients come from the
precomputed exact interaction matrices (scaled by h^2).  The result is
the projection of the potential onto degree < n+2 polynomials.

The FMM phase runs in double precision; exactness lives in the
precomputed near-field matrices.  All per-cell operations preserve a
fixed cell order (lexicographic), so results are reproducible bit for
bit run to run.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import harmonics
from .boxquad import InteractionMatrixSet, legendre_basis, shifted_legendre_coeffs
from .exactmath import Rational, RationalLike

FOUR_PI = 4.0 * np.pi


# ---------------------------------------------------------------------------
# sources and grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SourceField:
    """A compactly supported source term f, with optional exact solution.

    ``f`` maps an (N, 3) array to N values and must vanish outside
    ``support_lo``/``support_hi``.  ``cell_intersects_support`` (optional)
    decides exactly whether a cell [lo, hi] meets supp f; without it the
    grid builder samples ``f`` on a small lattice per cell.
    """

    f: Callable[[np.ndarray], np.ndarray]
    support_lo: tuple[float, float, float]
    support_hi: tuple[float, float, float]
    u_exact: Callable[[np.ndarray], np.ndarray] | None = None
    cell_intersects_support: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None


def mollifier_case() -> SourceField:
    """The bump u = exp(-1/(1-|x|^2)) on the unit ball and f = -Laplace(u).

    With s = |x|^2 and w = 1/(1-s), the radial Laplacian gives
    f = u * (6 w^2 + 8 s w^3 - 4 s w^4), vanishing (with all derivatives)
    at |x| = 1.  Values with w beyond 700 underflow to zero and are
    clamped there to avoid inf * 0.
    """

    def u_exact(points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        s = np.sum(pts * pts, axis=-1)
        out = np.zeros_like(s)
        mask = s < 1.0 - 1.5e-3
        w = 1.0 / (1.0 - s[mask])
        out[mask] = np.exp(-w)
        return out

    def f(points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        s = np.sum(pts * pts, axis=-1)
        out = np.zeros_like(s)
        mask = s < 1.0 - 1.5e-3
        sm = s[mask]
        w = 1.0 / (1.0 - sm)
        w2 = w * w
        out[mask] = np.exp(-w) * (6.0 * w2 + 8.0 * sm * w2 * w - 4.0 * sm * w2 * w2)
        return out

    def cell_intersects(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        closest = np.clip(0.0, lo, hi)
        return np.sum(closest * closest, axis=-1) <= 1.0

    return SourceField(
        f=f,
        support_lo=(-1.0, -1.0, -1.0),
        support_hi=(1.0, 1.0, 1.0),
        u_exact=u_exact,
        cell_intersects_support=cell_intersects,
    )


class Grid:
    """Occupied cells of the mesh: supp f cells plus their neighbours.

    ``cells`` is lexicographically sorted (N, 3) integer indices; cell i
    is the box [h*i, h*(i+1)] per axis.  ``support_mask`` flags cells that
    intersect supp f; the rest form the boundary layer, where the
    projected source is identically zero.
    """

    def __init__(self, h: RationalLike, cells: np.ndarray, support_mask: np.ndarray):
        order = np.lexsort(cells.T[::-1])
        self.h = Rational(h)
        self.cells = np.ascontiguousarray(cells[order], dtype=np.int64)
        self.support_mask = np.ascontiguousarray(support_mask[order])
        self._keys = _encode(self.cells)
        if np.any(np.diff(self._keys) == 0):
            raise ValueError("duplicate cell indices")

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def h_float(self) -> float:
        return float(self.h)

    def centers(self) -> np.ndarray:
        return (self.cells + 0.5) * self.h_float

    def rows_of(self, cells: np.ndarray) -> np.ndarray:
        """Row of each queried cell, or -1 where absent."""
        keys = _encode(np.asarray(cells, dtype=np.int64))
        pos = np.searchsorted(self._keys, keys)
        pos = np.clip(pos, 0, len(self._keys) - 1)
        found = self._keys[pos] == keys
        return np.where(found, pos, -1)


_ENCODE_BIAS = 1 << 20


def _encode(cells: np.ndarray) -> np.ndarray:
    c = cells + _ENCODE_BIAS
    return (c[..., 0] << 42) + (c[..., 1] << 21) + c[..., 2]


def build_grid(source: SourceField, h: RationalLike, samples_per_axis: int = 4) -> Grid:
    """Occupied-cell set for mesh size h (supp f cells plus one layer).

    Support detection uses the source's exact cell predicate when present
    and otherwise samples f on a ``samples_per_axis``^3 lattice per cell
    within the declared support box.
    """
    hf = float(Rational(h))
    lo_cell = [int(np.floor(lo / hf)) for lo in source.support_lo]
    hi_cell = [int(np.ceil(hi / hf)) for hi in source.support_hi]
    axes = [np.arange(lo, hi + 1) for lo, hi in zip(lo_cell, hi_cell)]
    cand = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)

    lo = cand * hf
    hi = (cand + 1) * hf
    if source.cell_intersects_support is not None:
        mask = np.asarray(source.cell_intersects_support(lo, hi), dtype=bool)
    else:
        ticks = np.linspace(0.0, 1.0, samples_per_axis)
        offs = np.stack(np.meshgrid(ticks, ticks, ticks, indexing="ij"), axis=-1).reshape(-1, 3)
        pts = lo[:, None, :] + offs[None, :, :] * hf
        vals = source.f(pts.reshape(-1, 3)).reshape(len(cand), -1)
        mask = np.any(vals != 0.0, axis=1)
    support = cand[mask]
    if len(support) == 0:
        raise ValueError("no cells intersect the source support")

    neighbor = np.stack(
        np.meshgrid([-1, 0, 1], [-1, 0, 1], [-1, 0, 1], indexing="ij"), axis=-1
    ).reshape(-1, 3)
    occupied_keys = {}
    for d in neighbor:
        for cell in support + d:
            occupied_keys[tuple(cell)] = False
    for cell in support:
        occupied_keys[tuple(cell)] = True
    cells = np.array(sorted(occupied_keys), dtype=np.int64)
    flags = np.array([occupied_keys[tuple(c)] for c in cells], dtype=bool)
    return Grid(h, cells, flags)


# ---------------------------------------------------------------------------
# bases and quadrature on the unit cell
# ---------------------------------------------------------------------------


def _gauss_unit(points_per_axis: int):
    x, w = np.polynomial.legendre.leggauss(points_per_axis)
    return (x + 1.0) / 2.0, w / 2.0


def _unit_nodes(points_per_axis: int):
    """Tensor Gauss nodes/weights on [0,1]^3, C-ordered."""
    t, w = _gauss_unit(points_per_axis)
    pts = np.stack(np.meshgrid(t, t, t, indexing="ij"), axis=-1).reshape(-1, 3)
    wts = (w[:, None, None] * w[None, :, None] * w[None, None, :]).reshape(-1)
    return pts, wts

def basis_values(order: int, pts: np.ndarray) -> np.ndarray:
    """Orthonormal basis values on the unit cell: (K, len(pts)) array."""
    basis = legendre_basis(order)
    max_deg = order - 1
    axis_vals = []
    for axis in range(3):
        rows = []
        for k in range(max_deg + 1):
            coeffs = [float(c) for c in shifted_legendre_coeffs(k)]
            rows.append(np.polynomial.polynomial.polyval(pts[:, axis], coeffs))
        axis_vals.append(np.stack(rows))
    out = np.empty((basis.size, len(pts)))
    for i, bf in enumerate(basis.functions):
        k1, k2, k3 = bf.degrees
        out[i] = (
            np.sqrt(float(bf.norm_square))
            * axis_vals[0][k1]
            * axis_vals[1][k2]
            * axis_vals[2][k3]
        )
    return out


def project_source(
    source: SourceField, grid: Grid, order: int, points_per_axis: int | None = None
) -> np.ndarray:
    """L2 projection coefficients of f per cell: (N, K) with K = C(order+2,3).

    Per-cell tensor Gauss quadrature with 2*order+2 points per axis by
    default.  Boundary-layer cells get exactly zero rows whenever f
    vanishes there (it does, by the grid construction).
    """
    if order < 2:
        raise ValueError("projection order must be >= 2")
    g = points_per_axis or (2 * order + 2)
    pts, wts = _unit_nodes(g)
    bvals = basis_values(order, pts) * wts  # (K, G)
    h = grid.h_float
    scale = h**1.5
    out = np.zeros((grid.n_cells, bvals.shape[0]))
    block = max(1, 2**22 // len(pts))
    for start in range(0, grid.n_cells, block):
        cells = grid.cells[start : start + block]
        pos = (cells[:, None, :] + pts[None, :, :]) * h
        vals = source.f(pos.reshape(-1, 3)).reshape(len(cells), -1)
        out[start : start + len(cells)] = scale * (vals @ bvals.T)
    return out


# ---------------------------------------------------------------------------
# expansions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Expansion:
    """One cell's expansion: coeffs[n^2+n+m] for 0 <= n < order, |m| <= n.

    Multipole coefficients satisfy phi(x) = sum M conj(T(x - center));
    local coefficients are Taylor-like, phi(x) = sum L Y(x - center).
    Real fields obey coeffs[(n,-m)] = (-1)^m conj(coeffs[(n,m)]).
    """

    kind: str
    order: int
    center: tuple[float, float, float]
    coeffs: np.ndarray

    def __post_init__(self):
        if self.kind not in ("multipole", "local"):
            raise ValueError(f"unknown expansion kind {self.kind!r}")
        if len(self.coeffs) != self.order * self.order:
            raise ValueError("coefficient count must be order^2")


def p2m_matrix(order: int, order_p: int, h: RationalLike) -> np.ndarray:
    """Map from basis coefficients to multipole moments, one cell, any cell.

    Entries (1/4pi) * int_Q Y_pq(y - center) b_k(y) dy on a cell of size
    h; the integrand is polynomial, so Gauss quadrature of the matching
    order is exact and the matrix is cell-independent.
    """
    hf = float(Rational(h))
    g = (order_p - 1 + order - 1) // 2 + 1
    pts, wts = _unit_nodes(g)
    ups = harmonics.regular_harmonics((pts - 0.5) * hf, order_p)  # (G, P^2)
    bvals = basis_values(order, pts)  # (K, G)
    return (hf**1.5 / FOUR_PI) * ((ups.T * wts) @ bvals.T)


def l2p_matrix(order: int, order_p: int, h: RationalLike) -> np.ndarray:
    """Map from local coefficients to basis coefficients of the potential.

    Entries int_Q Y_pq(x - center) b_l(x) dx: d_far = Re(L @ matrix)."""
    hf = float(Rational(h))
    g = (order_p - 1 + order - 1) // 2 + 1
    pts, wts = _unit_nodes(g)
    ups = harmonics.regular_harmonics((pts - 0.5) * hf, order_p)
    bvals = basis_values(order, pts)
    return hf**1.5 * ((ups.T * wts) @ bvals.T)


def cell_multipoles(coefficients: np.ndarray, grid: Grid, order_p: int) -> np.ndarray:
    """Multipole moments of every cell about its center: (N, P^2) complex."""
    order = _order_from_size(coefficients.shape[1])
    matrix = p2m_matrix(order, order_p, grid.h)
    return coefficients @ matrix.T


def _order_from_size(k: int) -> int:
    order = 1
    while legendre_basis(order).size < k:
        order += 1
    if legendre_basis(order).size != k:
        raise ValueError(f"{k} is not a total-degree basis size")
    return order


# ---------------------------------------------------------------------------
# octree
# ---------------------------------------------------------------------------


class Octree:
    """Cell hierarchy over the occupied leaves; level 0 is the grid itself.

    Level t boxes have side h * 2^t; the parent of index i is i // 2
    (floor division, so negative indices halve correctly).  The top level
    has a single box.
    """

    def __init__(self, grid: Grid):
        self.grid = grid
        levels = [grid.cells]
        keys = [grid._keys]
        while len(levels[-1]) > 1:
            parents = np.unique(_encode(levels[-1] // 2))
            levels.append(_decode(parents))
            keys.append(parents)
        self.levels = levels
        self.keys = keys

    @property
    def depth(self) -> int:
        return len(self.levels)

    def rows_of(self, level: int, cells: np.ndarray) -> np.ndarray:
        k = _encode(np.asarray(cells, dtype=np.int64))
        pos = np.searchsorted(self.keys[level], k)
        pos = np.clip(pos, 0, len(self.keys[level]) - 1)
        return np.where(self.keys[level][pos] == k, pos, -1)

    def interaction_pairs(self, level: int):
        """(offset, target rows, source rows) groups at one level.

        Sources are boxes separated by 2 or 3 in the infinity norm whose
        parents are neighbours (or identical); together with the leaf
        27-neighbourhood this covers every box pair exactly once.
        """
        cells = self.levels[level]
        parents = cells // 2
        out = []
        for d in _M2L_OFFSETS:
            cand = cells + d
            rows = self.rows_of(level, cand)
            ok = rows >= 0
            if not np.any(ok):
                continue
            pdiff = cand // 2 - parents
            ok &= np.all(np.abs(pdiff) <= 1, axis=1)
            if not np.any(ok):
                continue
            out.append((d, np.nonzero(ok)[0], rows[ok]))
        return out


def _decode(keys: np.ndarray) -> np.ndarray:
    c0 = (keys >> 42) - _ENCODE_BIAS
    c1 = ((keys >> 21) & ((1 << 21) - 1)) - _ENCODE_BIAS
    c2 = (keys & ((1 << 21) - 1)) - _ENCODE_BIAS
    return np.stack([c0, c1, c2], axis=-1).astype(np.int64)


_M2L_OFFSETS = np.array(
    [
        (dx, dy, dz)
        for dx in range(-3, 4)
        for dy in range(-3, 4)
        for dz in range(-3, 4)
        if max(abs(dx), abs(dy), abs(dz)) >= 2
    ],
    dtype=np.int64,
)

_CHILD_OFFSETS = np.array(
    [(a, b, c) for a in (0, 1) for b in (0, 1) for c in (0, 1)], dtype=np.int64
)


def fmm_pass(grid: Grid, multipoles: np.ndarray, order_p: int) -> np.ndarray:
    """Local expansions of the far field for every cell: (N, P^2) complex.

    Upward: shift children moments to parents.  Downward: apply the
    multipole-to-local operator over each level's interaction list and
    shift parent locals onto children.  The leaf level equals the grid,
    so each cell's local expansion represents exactly the potential of
    all cells outside its 27-cell neighbourhood.
    """
    tree = Octree(grid)
    h0 = grid.h_float
    p2 = order_p * order_p

    # upward; within one child-position class the child -> parent map is
    # one to one, so plain fancy-index accumulation is race-free
    moments = [np.ascontiguousarray(multipoles, dtype=complex)]
    for level in range(1, tree.depth):
        child_cells = tree.levels[level - 1]
        parent_rows = tree.rows_of(level, child_cells // 2)
        m_parent = np.zeros((len(tree.levels[level]), p2), dtype=complex)
        h_child = h0 * 2 ** (level - 1)
        deltas = child_cells - 2 * (child_cells // 2)
        for d in _CHILD_OFFSETS:
            sel = np.all(deltas == d, axis=1)
            if not np.any(sel):
                continue
            offset = (np.asarray(d, dtype=float) - 0.5) * h_child
            shift = harmonics.regular_shift_matrix(offset, order_p)
            m_parent[parent_rows[sel]] += moments[level - 1][sel] @ shift.T
        moments.append(m_parent)

    # downward
    locals_ = np.zeros((len(tree.levels[-1]), p2), dtype=complex)
    for level in range(tree.depth - 1, -1, -1):
        h_level = h0 * 2**level
        for d, target_rows, source_rows in tree.interaction_pairs(level):
            # sources sit at target + d, so the center separation
            # (target - source) is -d at this level's box size
            t_mat = harmonics.m2l_matrix(np.asarray(d, dtype=float) * -h_level, order_p)
            locals_[target_rows] += moments[level][source_rows] @ t_mat.T
        if level > 0:
            child_cells = tree.levels[level - 1]
            parent_rows = tree.rows_of(level, child_cells // 2)
            child_locals = np.zeros((len(child_cells), p2), dtype=complex)
            h_child = h0 * 2 ** (level - 1)
            deltas = child_cells - 2 * (child_cells // 2)
            for d in _CHILD_OFFSETS:
                sel = np.all(deltas == d, axis=1)
                if not np.any(sel):
                    continue
                offset = (np.asarray(d, dtype=float) - 0.5) * h_child
                shift = harmonics.regular_shift_matrix(offset, order_p)
                child_locals[sel] = locals_[parent_rows[sel]] @ shift
            locals_ = child_locals
    return locals_


# ---------------------------------------------------------------------------
# near and far field assembly
# ---------------------------------------------------------------------------

_NEIGHBOR_OFFSETS = np.array(
    [(a, b, c) for a in (-1, 0, 1) for b in (-1, 0, 1) for c in (-1, 0, 1)],
    dtype=np.int64,
)


def far_coefficients(locals_: np.ndarray, grid: Grid, order_dst: int, order_p: int) -> np.ndarray:
    """Potential coefficients of the far field: Re(L @ l2p)."""
    matrix = l2p_matrix(order_dst, order_p, grid.h)
    return np.real(locals_ @ matrix)


def near_coefficients(
    coefficients: np.ndarray, grid: Grid, matrices: InteractionMatrixSet
) -> np.ndarray:
    """Near-field potential coefficients from the exact interaction matrices.

    d[i] += M(offset) @ c[i + offset] over the 27 neighbour offsets;
    missing neighbours contribute nothing.  Matrices are rescaled by h^2.
    """
    mats = matrices.as_float_arrays(grid.h)
    out = np.zeros((grid.n_cells, legendre_basis(matrices.n_dst).size))
    for offset in _NEIGHBOR_OFFSETS:
        rows = grid.rows_of(grid.cells + offset)
        ok = rows >= 0
        if not np.any(ok):
            continue
        mat = mats[tuple(int(v) for v in offset)]
        out[ok] += coefficients[rows[ok]] @ mat.T
    return out


# ---------------------------------------------------------------------------
# the solver
# ---------------------------------------------------------------------------


@dataclass
class Solution:
    """Projected potential with its inputs and per-phase timings."""

    grid: Grid
    order: int
    order_dst: int
    order_p: int
    source_coefficients: np.ndarray  # (N, dim P_n)
    potential_coefficients: np.ndarray  # (N, dim P_(n+2))
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_dof(self) -> int:
        return self.grid.n_cells * (
            legendre_basis(self.order).size + legendre_basis(self.order_dst).size
        )


def solve(
    source: SourceField,
    h: RationalLike,
    order: int,
    order_p: int,
    matrices: InteractionMatrixSet,
    points_per_axis: int | None = None,
) -> Solution:
    """Project f, run the multipole pass, and assemble the potential.

    ``matrices`` must be a (order -> order+2) interaction set; the time of
    every phase lands in ``diagnostics`` together with the DOF count
    N = dim V_n + dim V_(n+2).
    """
    if matrices.n_src != order or matrices.n_dst != order + 2:
        raise ValueError(
            f"interaction matrices are ({matrices.n_src} -> {matrices.n_dst}), "
            f"need ({order} -> {order + 2})"
        )
    timings: dict[str, float] = {}
    t_total = time.perf_counter()

    t = time.perf_counter()
    grid = build_grid(source, h)
    timings["grid"] = time.perf_counter() - t

    t = time.perf_counter()
    c = project_source(source, grid, order, points_per_axis)
    timings["project"] = time.perf_counter() - t

    t = time.perf_counter()
    m = cell_multipoles(c, grid, order_p)
    timings["p2m"] = time.perf_counter() - t

    t = time.perf_counter()
    locals_ = fmm_pass(grid, m, order_p)
    timings["tree"] = time.perf_counter() - t

    t = time.perf_counter()
    d_far = far_coefficients(locals_, grid, order + 2, order_p)
    timings["far"] = time.perf_counter() - t

    t = time.perf_counter()
    d_near = near_coefficients(c, grid, matrices)
    timings["near"] = time.perf_counter() - t

    timings["total"] = time.perf_counter() - t_total
    sol = Solution(
        grid=grid,
        order=order,
        order_dst=order + 2,
        order_p=order_p,
        source_coefficients=c,
        potential_coefficients=d_near + d_far,
        diagnostics={"timings": timings, "cells": grid.n_cells},
    )
    sol.diagnostics["n_dof"] = sol.n_dof
    return sol


def error_norms(
    solution: Solution, source: SourceField, points_per_axis: int | None = None
) -> tuple[float, float]:
    """L2 errors over the grid of (f - f_h, u - u_h~); needs u_exact.

    Cellwise Gauss quadrature with basis order + 4 points per axis by
    default.
    """
    if source.u_exact is None:
        raise ValueError("source field has no exact solution attached")
    grid = solution.grid
    h = grid.h_float

    def accumulate(order, coeffs, reference):
        g = points_per_axis or (order + 4)
        pts, wts = _unit_nodes(g)
        bvals = basis_values(order, pts)
        total = 0.0
        block = max(1, 2**22 // len(pts))
        for start in range(0, grid.n_cells, block):
            cells = grid.cells[start : start + block]
            pos = (cells[:, None, :] + pts[None, :, :]) * h
            ref = reference(pos.reshape(-1, 3)).reshape(len(cells), -1)
            approx = (coeffs[start : start + len(cells)] @ bvals) * h**-1.5
            total += float(np.sum((ref - approx) ** 2 * wts) * h**3)
        return np.sqrt(total)

    f_err = accumulate(solution.order, solution.source_coefficients, source.f)
    u_err = accumulate(solution.order_dst, solution.potential_coefficients, source.u_exact)
    return f_err, u_err


def convergence_study(
    source: SourceField,
    order: int,
    order_p: int,
    matrices: InteractionMatrixSet,
    k_min: int,
    k_max: int,
) -> list[dict]:
    """Solve at h = 2^-k for k in [k_min, k_max]; one result row per level."""
    rows = []
    for k in range(k_min, k_max + 1):
        h = Rational(1, 2**k)
        sol = solve(source, h, order, order_p, matrices)
        f_err, u_err = error_norms(sol, source)
        rows.append(
            {
                "k": k,
                "h": float(h),
                "cells": sol.grid.n_cells,
                "n_dof": sol.n_dof,
                "f_error": f_err,
                "u_error": u_err,
                "time": sol.diagnostics["timings"]["total"],
                "timings": sol.diagnostics["timings"],
            }
        )
    return rows
