"""Definite double-box integrals, diagnostics, and near-field matrices.

Definite integrals of monomial-weighted kernels over box pairs are
evaluated by the alternating corner sum of the fully integrated
antiderivative: corners are enumerated lexicographically over
(x1, x2, x3, y1, y2, y3) and each corner carries the sign
(-1)^(number of lower limits).  The implementation substitutes one bound
at a time, so partial substitutions are shared between the 2^6 corners.

Kernel convention: these operators integrate the RAW kernels 1/R (3-D)
and ln(X^2+Y^2) (2-D).  The physical constants 1/(4 pi) and -1/(4 pi) of
the Newton potential are applied exactly once, where potentials are
assembled (interaction matrices here, far field in the fmm module).

The near-field interaction matrices couple orthonormal shifted-Legendre
bases of two cells at offsets in {-1,0,1}^3.  They are precomputed at
mesh size 1 in high precision (default 120 digits) and stored as decimal
strings; consumers rescale by h^2 and round to their working precision.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import mpmath as mp

from . import antideriv2d, antideriv3d
from .antideriv3d import EvalConfig, SingularTermError
from .exactmath import (
    BigFloat,
    Polynomial,
    Rational,
    RationalLike,
    bigfloat_str,
    multi_index,
    parse_rational,
    format_rational,
    to_bigfloat,
    working_dps,
)

_ZERO = Rational(0)
_ONE = Rational(1)


class Box:
    """Cartesian product of rational intervals [a_i, b_i] (a_i <= b_i)."""

    __slots__ = ("intervals",)

    def __init__(self, intervals: Iterable[tuple[RationalLike, RationalLike]]):
        spans = []
        for lo, hi in intervals:
            lo_q, hi_q = Rational(lo), Rational(hi)
            if lo_q > hi_q:
                raise ValueError(f"interval [{lo_q}, {hi_q}] is reversed")
            spans.append((lo_q, hi_q))
        object.__setattr__(self, "intervals", tuple(spans))

    def __setattr__(self, name, value):
        raise AttributeError("Box is immutable")

    @property
    def dim(self) -> int:
        return len(self.intervals)

    @classmethod
    def parse(cls, text: str) -> "Box":
        """Parse "a,b:c,d[:e,f]"; endpoints are fractions or decimals, exact."""
        intervals = []
        for part in text.split(":"):
            ends = part.split(",")
            if len(ends) != 2:
                raise ValueError(f"interval {part!r} must be 'lo,hi'")
            intervals.append((parse_rational(ends[0]), parse_rational(ends[1])))
        return cls(intervals)

    @classmethod
    def cube(cls, lo: RationalLike, hi: RationalLike, dim: int = 3) -> "Box":
        return cls([(lo, hi)] * dim)

    @classmethod
    def unit_cell(cls, index: Sequence[int], h: RationalLike = 1, dim: int = 3) -> "Box":
        """The grid cell [h*i, h*(i+1)] per axis."""
        hq = Rational(h)
        return cls([(hq * i, hq * (i + 1)) for i in index[:dim]])

    def shifted(self, offset: Sequence[RationalLike]) -> "Box":
        return Box(
            [(lo + Rational(t), hi + Rational(t)) for (lo, hi), t in zip(self.intervals, offset)]
        )

    def is_degenerate(self) -> bool:
        return any(lo == hi for lo, hi in self.intervals)

    def __eq__(self, other):
        if isinstance(other, Box):
            return self.intervals == other.intervals
        return NotImplemented

    def __repr__(self):
        parts = ":".join(f"{format_rational(lo)},{format_rational(hi)}" for lo, hi in self.intervals)
        return f"Box({parts})"


# ---------------------------------------------------------------------------
# corner sums
# ---------------------------------------------------------------------------


def _corner_sum(f, bounds, config: EvalConfig) -> BigFloat:
    """Alternating corner sum, sharing partial substitutions between corners.

    Leaves are evaluated with a few guard digits so that the final rounded
    value carries the full requested precision (minus whatever the
    condition number of the sum costs).
    """
    n = len(bounds)
    leaf_cfg = EvalConfig(config.digits + 10, config.policy, config.guard_c)
    point = [None] * n

    def rec(g, var):
        if var == n:
            return g.evaluate(point, leaf_cfg)
        lo, hi = bounds[var]
        if lo == hi:
            return mp.mpf(0)
        point[var] = hi
        upper = rec(g.substitute(var, hi), var + 1)
        point[var] = lo
        lower = rec(g.substitute(var, lo), var + 1)
        point[var] = None
        return upper - lower

    with working_dps(config.digits + 10):
        total = rec(f, 0)
    with working_dps(config.digits):
        return +total


def definite_integral_3d(lam, mu, box_y: Box, box_x: Box, config: EvalConfig | None = None) -> BigFloat:
    """Integral of x^mu * y^lam / |x-y| over box_x times box_y (raw kernel).

    lam pairs with the y variables, mu with the x variables.  No 1/(4 pi).
    """
    config = config or EvalConfig()
    lam = multi_index(lam, 3)
    mu = multi_index(mu, 3)
    if box_y.dim != 3 or box_x.dim != 3:
        raise ValueError("boxes must be three-dimensional")
    f = antideriv3d.integrate_box_kernel(mu, lam)
    bounds = box_x.intervals + box_y.intervals
    return _corner_sum(f, bounds, config)


def definite_integral_2d(lam, mu, box_y: Box, box_x: Box, config: EvalConfig | None = None) -> BigFloat:
    """Integral of x^mu * y^lam * ln(|x-y|^2) over box_x times box_y."""
    config = config or EvalConfig()
    lam = multi_index(lam, 2)
    mu = multi_index(mu, 2)
    if box_y.dim != 2 or box_x.dim != 2:
        raise ValueError("boxes must be two-dimensional")
    h = antideriv2d.integrate_box_kernel_2d(mu, lam)
    bounds = box_x.intervals + box_y.intervals
    return _corner_sum(h, bounds, config)


def corner_summands_3d(lam, mu, box_y: Box, box_x: Box, config: EvalConfig | None = None):
    """All 512 signed corner summands (8 terms x 64 corners) of the 3-D integral.

    Corners are enumerated lexicographically over the six (lower, upper)
    choices; the sign of a corner is (-1)^(number of lower limits).
    """
    config = config or EvalConfig()
    f = antideriv3d.integrate_box_kernel(multi_index(mu, 3), multi_index(lam, 3))
    bounds = box_x.intervals + box_y.intervals
    out = []
    with working_dps(config.digits + 10):
        for mask in range(64):
            point = []
            lower_count = 0
            for var in range(6):
                upper = (mask >> (5 - var)) & 1
                lo, hi = bounds[var]
                point.append(hi if upper else lo)
                lower_count += 0 if upper else 1
            sign = -1 if lower_count % 2 else 1
            for value in f.summands(point, config):
                out.append(sign * value)
    return out


def condition_number(lam, mu, box_y: Box, box_x: Box, config: EvalConfig | None = None) -> BigFloat:
    """Condition kappa = sum|a_k| / |sum a_k| of the full corner-term sum."""
    config = config or EvalConfig()
    summands = corner_summands_3d(lam, mu, box_y, box_x, config)
    with working_dps(config.digits):
        total = mp.fsum(summands)
        absolute = mp.fsum([abs(s) for s in summands])
        if total == 0:
            return mp.inf
        return absolute / abs(total)


# ---------------------------------------------------------------------------
# reference computation: Hackbusch's ill-conditioned example
# ---------------------------------------------------------------------------

HACKBUSCH_BOX_Y = Box([(0, 1), (0, 100), (0, 1)])
HACKBUSCH_BOX_X = Box([(0, 1), (0, 1), (0, 100)])


@dataclass(frozen=True)
class HackbuschResult:
    value: BigFloat
    kappa: BigFloat
    digits: int
    double_value: float | None = None


def hackbusch_example(config: EvalConfig | None = None, with_double: bool = False) -> HackbuschResult:
    """The classic 181.439... double-box integral with its condition number.

    ``with_double`` additionally evaluates the corner sum entirely in
    machine doubles (weights included) with guarded atanh arguments and
    exact (Shewchuk) summation of the 512 summands, for comparison with
    the arbitrary-precision value.
    """
    config = config or EvalConfig(digits=100)
    zero = (0, 0, 0)
    value = definite_integral_3d(zero, zero, HACKBUSCH_BOX_Y, HACKBUSCH_BOX_X, config)
    kappa = condition_number(zero, zero, HACKBUSCH_BOX_Y, HACKBUSCH_BOX_X, config)
    dbl = _hackbusch_double() if with_double else None
    return HackbuschResult(value=value, kappa=kappa, digits=config.digits, double_value=dbl)


def _hackbusch_double(guard_c: float = 4.0) -> float:
    """Corner sum in pure double precision with compensated summation.

    Singular atanh arguments are pulled inside (-1, 1) by the factor
    (1 - c*eps); an atan with vanishing denominator contributes the
    directional limit +-pi/2 (0 for vanishing numerator).  Every monomial
    term of every weight enters the exactly-rounded sum (math.fsum, a
    Shewchuk accumulator) individually, so cancellation costs nothing and
    only the per-term products round.
    """
    f = antideriv3d.integrate_box_kernel((0, 0, 0), (0, 0, 0))
    weights = [
        [(exps, float(c)) for exps, c in w.sorted_terms()] for w in f.weights
    ]
    bounds = HACKBUSCH_BOX_X.intervals + HACKBUSCH_BOX_Y.intervals
    bounds = [(float(lo), float(hi)) for lo, hi in bounds]
    eps = 2.0**-52
    clip = 1.0 - guard_c * eps

    def factors(p):
        X = p[0] - p[3]
        Y = p[1] - p[4]
        Z = p[2] - p[5]
        R = math.sqrt(X * X + Y * Y + Z * Z)

        def guarded_atanh(num):
            if R == 0.0:
                return math.copysign(math.atanh(clip), num if num else 1.0)
            u = (num / R) * clip
            u = max(-clip, min(clip, u))
            return math.atanh(u)

        def guarded_atan(num, den):
            if den == 0.0 or R == 0.0:
                if num == 0.0:
                    return 0.0
                return math.copysign(math.pi / 2, num * (den if den else 1.0))
            return math.atan(num / (den * R))

        return [
            0.0 if R == 0.0 else 1.0 / R,
            R,
            guarded_atanh(X),
            guarded_atanh(Y),
            guarded_atanh(Z),
            guarded_atan(X * Y, Z),
            guarded_atan(X * Z, Y),
            guarded_atan(Y * Z, X),
        ]

    summands = []
    for mask in range(64):
        point = []
        lower_count = 0
        for var in range(6):
            upper = (mask >> (5 - var)) & 1
            lo, hi = bounds[var]
            point.append(hi if upper else lo)
            lower_count += 0 if upper else 1
        sign = -1.0 if lower_count % 2 else 1.0
        facs = factors(point)
        for slot in range(8):
            fv = facs[slot]
            if fv == 0.0:
                continue
            for exps, c in weights[slot]:
                term = c
                for v, e in zip(point, exps):
                    if e:
                        term *= v**e
                if term:
                    summands.append(sign * term * fv)
    return math.fsum(summands)


# ---------------------------------------------------------------------------
# orthonormal shifted-Legendre basis on the unit cell
# ---------------------------------------------------------------------------


@lru_cache(maxsize=64)
def shifted_legendre_coeffs(degree: int) -> tuple:
    """Monomial coefficients of the shifted Legendre polynomial on [0, 1].

    P~_k(t) = sum_j (-1)^(k+j) C(k,j) C(k+j,j) t^j; orthogonal with
    integral of P~_k^2 equal to 1/(2k+1).
    """
    return tuple(
        Rational((-1) ** (degree + j) * math.comb(degree, j) * math.comb(degree + j, j))
        for j in range(degree + 1)
    )


@dataclass(frozen=True)
class BasisFunction:
    """One tensor basis function: rational polynomial times sqrt(norm_square)."""

    degrees: tuple[int, ...]
    monomials: tuple  # ((exps, coeff), ...) exact expansion of the rational part
    norm_square: int  # product of (2k+1); the normalization factor is its sqrt

    @property
    def total_degree(self) -> int:
        return sum(self.degrees)


@dataclass(frozen=True)
class LegendreBasis:
    """Ordered orthonormal basis of total degree < order on the unit cell."""

    order: int
    dim: int
    functions: tuple[BasisFunction, ...]

    @property
    def size(self) -> int:
        return len(self.functions)


@lru_cache(maxsize=32)
def legendre_basis(order: int, dim: int = 3) -> LegendreBasis:
    """Basis of polynomials of total degree <= order-1, orthonormal on [0,1]^dim.

    Functions are ordered by (total degree, degree tuple); for dim 3 the
    count is C(order+2, 3).
    """
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    degree_tuples = sorted(
        (degs for degs in _degree_tuples(order - 1, dim)),
        key=lambda t: (sum(t), t),
    )
    functions = []
    for degs in degree_tuples:
        axis_coeffs = [shifted_legendre_coeffs(k) for k in degs]
        monos: dict[tuple, Rational] = {}
        for exps, coeff in _tensor_product(axis_coeffs):
            monos[exps] = coeff
        norm_square = 1
        for k in degs:
            norm_square *= 2 * k + 1
        functions.append(
            BasisFunction(degrees=degs, monomials=tuple(sorted(monos.items())), norm_square=norm_square)
        )
    return LegendreBasis(order=order, dim=dim, functions=tuple(functions))


def _degree_tuples(max_total: int, dim: int):
    if dim == 1:
        for k in range(max_total + 1):
            yield (k,)
        return
    for k in range(max_total + 1):
        for rest in _degree_tuples(max_total - k, dim - 1):
            yield (k,) + rest


def _tensor_product(axis_coeffs):
    def rec(i):
        if i == len(axis_coeffs):
            yield (), _ONE
            return
        for exps, coeff in rec(i + 1):
            for e, c in enumerate(axis_coeffs[i]):
                if c != 0:
                    yield (e,) + exps, c * coeff

    yield from rec(0)


def total_degree_monomials(order: int, dim: int = 3) -> tuple:
    """All exponent tuples of total degree <= order-1, sorted."""
    return tuple(sorted(_degree_tuples(order - 1, dim), key=lambda t: (sum(t), t)))


# ---------------------------------------------------------------------------
# interaction matrices
# ---------------------------------------------------------------------------

OFFSETS_3D = tuple(
    (dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)
)

FILE_VERSION = 1
DEFAULT_MATRIX_DIGITS = 120


@dataclass(frozen=True)
class InteractionMatrixSet:
    """Per-offset Galerkin matrices of the 3-D Newton kernel at mesh size h.

    Entry [l][k] of the matrix for offset o is

        1/(4 pi) * int_{Q_0} int_{Q_o} b_k(y) b_l(x) / |x-y|  dy dx

    with b_k the source basis (order ``n_src``, cell at offset o) and b_l
    the destination basis (order ``n_dst``, cell at the origin), both
    orthonormal on their cells.  Scaling both cells by s multiplies every
    entry by s^2, so sets are precomputed once at h = 1 and rescaled on
    load.
    """

    n_src: int
    n_dst: int
    digits: int
    h: Rational
    matrices: dict  # offset tuple -> list of rows of BigFloat

    @property
    def rows(self) -> int:
        return legendre_basis(self.n_dst).size

    @property
    def cols(self) -> int:
        return legendre_basis(self.n_src).size

    def matrix(self, offset) -> list:
        return self.matrices[tuple(offset)]

    def as_float_arrays(self, h: RationalLike = 1):
        """Matrices as float64 numpy arrays, rescaled to mesh size h."""
        import numpy as np

        scale = (float(Rational(h)) / float(self.h)) ** 2
        return {
            offset: np.array([[float(v) for v in row] for row in rows], dtype=float) * scale
            for offset, rows in self.matrices.items()
        }

    def save(self, path) -> None:
        doc = {
            "version": FILE_VERSION,
            "kernel": "newton3d",
            "constant": "1/(4*pi)",
            "h": 1 if self.h == 1 else format_rational(self.h),
            "n_src": self.n_src,
            "n_dst": self.n_dst,
            "basis": "shifted-legendre-orthonormal-total-degree",
            "precision_digits": self.digits,
            "offsets": [
                {
                    "offset": list(offset),
                    "rows": self.rows,
                    "cols": self.cols,
                    "entries": [
                        bigfloat_str(v, self.digits) for row in self.matrices[offset] for v in row
                    ],
                }
                for offset in sorted(self.matrices)
            ],
        }
        with open(path, "w", encoding="ascii") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "InteractionMatrixSet":
        with open(path, "r", encoding="ascii") as fh:
            doc = json.load(fh)
        if doc.get("version") != FILE_VERSION or doc.get("kernel") != "newton3d":
            raise ValueError(f"unsupported interaction-matrix file {path}")
        digits = doc["precision_digits"]
        matrices = {}
        with working_dps(digits):
            for block in doc["offsets"]:
                rows, cols = block["rows"], block["cols"]
                entries = [mp.mpf(s) for s in block["entries"]]
                matrices[tuple(block["offset"])] = [
                    entries[r * cols : (r + 1) * cols] for r in range(rows)
                ]
        h = doc.get("h", 1)
        return cls(
            n_src=doc["n_src"],
            n_dst=doc["n_dst"],
            digits=digits,
            h=Rational(h) if isinstance(h, int) else parse_rational(h),
            matrices=matrices,
        )


class _CornerGrid:
    """Product grid holding every corner point needed by all 27 offsets.

    ``x_axis``/``y_axis`` are the per-axis coordinate lists for the
    destination (x) and source (y) variables; ``swapped`` exchanges the
    roles (used to evaluate the antiderivative of x^a y^b at the corner
    points of the x^b y^a integrand, which equals it with x and y slots
    exchanged).
    """

    def __init__(self, h: Rational, swapped: bool):
        near = [h * v for v in (-1, 0, 1, 2)]
        cell = [h * v for v in (0, 1)]
        self.swapped = swapped
        self.x_axis = near if swapped else cell
        self.y_axis = cell if swapped else near
        self.axes = [self.x_axis] * 3 + [self.y_axis] * 3
        self.sizes = [len(a) for a in self.axes]
        self.strides = [0] * 6
        acc = 1
        for i in range(5, -1, -1):
            self.strides[i] = acc
            acc *= self.sizes[i]
        self.n_points = acc
        self.points = self._enumerate_points()
        self.corner_maps = {o: self._corner_map(o) for o in OFFSETS_3D}

    def _enumerate_points(self):
        pts = []
        idx = [0] * 6
        for flat in range(self.n_points):
            rem = flat
            for i in range(6):
                idx[i] = rem // self.strides[i]
                rem %= self.strides[i]
            pts.append(tuple(self.axes[i][idx[i]] for i in range(6)))
        return pts

    def _corner_map(self, offset):
        """(flat index, sign) for the 64 corners of the offset's box pair."""
        lo_hi = []
        for var in range(6):
            on_offset_cell = (var >= 3) != self.swapped
            if on_offset_cell:
                o = offset[var - 3] if var >= 3 else offset[var]
                lo_hi.append((o + 1, o + 2))
            else:
                lo_hi.append((0, 1))
        out = []
        for mask in range(64):
            flat = 0
            lower_count = 0
            for var in range(6):
                upper = (mask >> (5 - var)) & 1
                flat += self.strides[var] * lo_hi[var][upper]
                lower_count += 0 if upper else 1
            out.append((flat, -1 if lower_count % 2 else 1))
        return out


def _grid_factor_table(grid: _CornerGrid, digits: int):
    """Transcendental factors of the 3-D family at every grid point.

    Singular factors are stored as None; they may only ever be multiplied
    by exactly-zero weights.
    """
    table = []
    for pt in grid.points:
        X = pt[0] - pt[3]
        Y = pt[1] - pt[4]
        Z = pt[2] - pt[5]
        rho = X * X + Y * Y + Z * Z
        row = [None] * 8
        r_val = mp.sqrt(to_bigfloat(rho)) if rho != 0 else mp.mpf(0)
        row[antideriv3d.R_TERM] = r_val
        if rho != 0:
            row[antideriv3d.R_INV] = 1 / r_val
            for slot, num in (
                (antideriv3d.ATANH_X, X),
                (antideriv3d.ATANH_Y, Y),
                (antideriv3d.ATANH_Z, Z),
            ):
                rest = rho - num * num
                if rest != 0:
                    if num == 0:
                        row[slot] = mp.mpf(0)
                    else:
                        mag = mp.log(r_val + to_bigfloat(abs(num))) - mp.log(to_bigfloat(rest)) / 2
                        row[slot] = mag if num > 0 else -mag
            for slot, num, den in (
                (antideriv3d.ATAN_XY, X * Y, Z),
                (antideriv3d.ATAN_XZ, X * Z, Y),
                (antideriv3d.ATAN_YZ, Y * Z, X),
            ):
                if den != 0:
                    row[slot] = mp.atan(to_bigfloat(num / den) / r_val)
        table.append(row)
    return table


def _weights_on_grid(terms: dict, axes) -> tuple[list, int]:
    """Exact values of a sparse polynomial on a product grid (flat, C order).

    Returns (integer values, common denominator): point p has the exact
    value values[p] / denominator.  Coefficient denominators and the axis
    scale are cleared up front so the whole tensor evaluation runs in
    integer arithmetic; substituting one axis at a time shares the partial
    evaluations between all points that agree in the leading coordinates,
    and zero substitutions (half of all grid coordinates are cell corners
    at 0) short-circuit.
    """
    n_axes = len(axes)
    block = [1] * (n_axes + 1)
    for i in range(n_axes - 1, -1, -1):
        block[i] = block[i + 1] * len(axes[i])

    # clear denominators: axis scale s makes every coordinate integral,
    # D clears the coefficients, and each term picks up s^(deg - |e|)
    # so that P(point) = int_result / (D * s^deg).
    scale = 1
    for axis in axes:
        for v in axis:
            scale = math.lcm(scale, int(v.denominator))
    denom = 1
    deg = 0
    for exps, coeff in terms.items():
        denom = math.lcm(denom, int(coeff.denominator))
        deg = max(deg, sum(exps))
    int_axes = [[int(v * scale) for v in axis] for axis in axes]
    int_terms = {
        exps: int(coeff.numerator) * (denom // int(coeff.denominator)) * scale ** (deg - sum(exps))
        for exps, coeff in terms.items()
    }

    def rec(sub_terms: dict, var: int):
        if not sub_terms:
            return [0] * block[var]
        if var == n_axes:
            return [sub_terms[()]]
        out = []
        for v in int_axes[var]:
            collapsed: dict = {}
            if v == 0:
                for exps, coeff in sub_terms.items():
                    if exps[0] == 0:
                        collapsed[exps[1:]] = coeff
            else:
                powers: dict[int, int] = {}
                for exps, coeff in sub_terms.items():
                    e = exps[0]
                    if e:
                        p = powers.get(e)
                        if p is None:
                            p = v**e
                            powers[e] = p
                        coeff = coeff * p
                    rest = exps[1:]
                    prev = collapsed.get(rest)
                    s = coeff if prev is None else prev + coeff
                    if s == 0:
                        collapsed.pop(rest, None)
                    else:
                        collapsed[rest] = s
            out.extend(rec(collapsed, var + 1))
        return out

    return rec(int_terms, 0), denom * scale**deg


def _pair_point_values(f, grid: _CornerGrid, factor_table, digits: int):
    """S(pt) = sum over terms of weight * factor at every grid point.

    Rational-to-float conversions are cached per distinct weight value;
    cell corners produce the same small rationals over and over.
    """
    zero = mp.mpf(0)
    totals = [zero] * grid.n_points
    prec = mp.mp.prec
    from_rational = mp.libmp.from_rational
    round_nearest = mp.libmp.round_nearest
    make_mpf = mp.mp.make_mpf
    for slot in range(8):
        w = f.weights[slot]
        if w.is_zero():
            continue
        wg, denom = _weights_on_grid(w.terms, grid.axes)
        conv: dict = {}
        for p in range(grid.n_points):
            wv = wg[p]
            if wv == 0:
                continue
            fv = factor_table[p][slot]
            if fv is None:
                raise SingularTermError(
                    antideriv3d.TERM_NAMES[slot], grid.points[p], Rational(wv, denom)
                )
            m = conv.get(wv)
            if m is None:
                m = make_mpf(from_rational(wv, denom, prec, round_nearest))
                conv[wv] = m
            totals[p] = totals[p] + m * fv
    return totals


def _corner_sums(values, grid: _CornerGrid):
    out = {}
    for offset, cmap in grid.corner_maps.items():
        out[offset] = mp.fsum(
            values[flat] if sign > 0 else -values[flat] for flat, sign in cmap
        )
    return out


def _basis_monomial_matrix(order: int, h: Rational, shift, mons, digits: int):
    """Rows: basis functions scaled to a cell of size h at integer offset
    ``shift``; columns: global monomials.  Includes the h^(-3/2)
    normalization and the sqrt(norm_square) factor (hence BigFloat)."""
    basis = legendre_basis(order)
    mon_pos = {m: i for i, m in enumerate(mons)}
    h_norm = mp.power(to_bigfloat(_ONE / (h * h * h)), mp.mpf(1) / 2)
    rows = []
    for bf in basis.functions:
        axis_coeff = [
            _shifted_axis_coeffs(k, h, shift[axis] if shift is not None else 0)
            for axis, k in enumerate(bf.degrees)
        ]
        row = [mp.mpf(0)] * len(mons)
        scale = mp.sqrt(to_bigfloat(bf.norm_square)) * h_norm
        for e1, c1 in enumerate(axis_coeff[0]):
            if c1 == 0:
                continue
            for e2, c2 in enumerate(axis_coeff[1]):
                if c2 == 0:
                    continue
                c12 = c1 * c2
                for e3, c3 in enumerate(axis_coeff[2]):
                    if c3 == 0:
                        continue
                    pos = mon_pos.get((e1, e2, e3))
                    if pos is None:
                        raise AssertionError("basis monomial outside table")
                    row[pos] += to_bigfloat(c12 * c3) * scale
        rows.append(row)
    return rows


def _shifted_axis_coeffs(degree: int, h: Rational, shift: int):
    """Coefficients in y of p_degree(y/h - shift), p the unit-cell 1-D basis."""
    base = shifted_legendre_coeffs(degree)
    out = [_ZERO] * (degree + 1)
    inv_h = _ONE / h
    for j, c in enumerate(base):
        if c == 0:
            continue
        for m_exp in range(j + 1):
            out[m_exp] += (
                c
                * math.comb(j, m_exp)
                * Rational(-shift) ** (j - m_exp)
                * inv_h**m_exp
            )
    return out


def _mat_mul(a, b):
    rows = len(a)
    inner = len(b)
    cols = len(b[0]) if inner else 0
    zero = mp.mpf(0)
    out = []
    for r in range(rows):
        ar = a[r]
        row = [zero] * cols
        for i in range(inner):
            f = ar[i]
            if f == 0:
                continue
            br = b[i]
            for c in range(cols):
                row[c] += f * br[c]
        out.append(row)
    return out


def _assemble_set(src_order, dst_order, src_mons, dst_mons, tables, h, digits):
    """tables[offset][src_mon_index][dst_mon_index] -> matrix per offset."""
    with working_dps(digits + 10):
        a_dst = _basis_monomial_matrix(dst_order, h, None, dst_mons, digits)
        inv_4pi = 1 / (4 * mp.pi)
        matrices = {}
        for offset in OFFSETS_3D:
            a_src = _basis_monomial_matrix(src_order, h, offset, src_mons, digits)
            table = tables[offset]  # len(src_mons) x len(dst_mons)
            # M = a_dst (Kd x Md) . table^T (Md x Ms) . a_src^T (Ms x Ks)
            t_transposed = [
                [table[s][d] for s in range(len(src_mons))] for d in range(len(dst_mons))
            ]
            inter = _mat_mul(a_dst, t_transposed)  # Kd x Ms
            a_src_t = [[a_src[k][s] for k in range(len(a_src))] for s in range(len(src_mons))]
            full = _mat_mul(inter, a_src_t)  # Kd x Ks
            matrices[offset] = [[inv_4pi * v for v in row] for row in full]
    with working_dps(digits):
        matrices = {o: [[+v for v in row] for row in rows] for o, rows in matrices.items()}
    return matrices


def _empty_tables(n_src_mons, n_dst_mons):
    return {
        o: [[None] * n_dst_mons for _ in range(n_src_mons)] for o in OFFSETS_3D
    }


def interaction_matrices(
    n_src: int,
    n_dst: int,
    config: EvalConfig | None = None,
    h: RationalLike = 1,
) -> InteractionMatrixSet:
    """Newton-kernel Galerkin matrices for all 27 cell offsets at size h."""
    sets = _interaction_sets(n_src, n_dst, config, h, swapped=False, half=False)
    return sets[0]


def interaction_matrix_bundle(
    n_src: int,
    n_dst: int,
    config: EvalConfig | None = None,
):
    """The (n_src -> n_dst) set plus the order-swapped set and the set
    recomputed on cells of size 1/2 (consistency checks); one pass over
    the shared antiderivative family."""
    return _interaction_sets(n_src, n_dst, config, 1, swapped=True, half=True)


def _interaction_sets(n_src, n_dst, config, h, swapped, half):
    if n_src < 1 or n_dst < 1:
        raise ValueError("basis orders must be >= 1")
    config = config or EvalConfig(digits=DEFAULT_MATRIX_DIGITS)
    digits = config.digits
    hq = Rational(h)
    src_mons = total_degree_monomials(n_src)
    dst_mons = total_degree_monomials(n_dst)

    grids = {"main": _CornerGrid(hq, swapped=False)}
    if swapped:
        grids["swap"] = _CornerGrid(hq, swapped=True)
    if half:
        grids["half"] = _CornerGrid(hq / 2, swapped=False)

    with working_dps(digits + 10):
        factor_tables = {name: _grid_factor_table(g, digits) for name, g in grids.items()}
        tables = {name: _empty_tables(len(src_mons), len(dst_mons)) for name in grids}
        # swapped set: source monomials are dst_mons and vice versa
        if swapped:
            tables["swap"] = _empty_tables(len(dst_mons), len(src_mons))

        for bi, b in enumerate(src_mons):
            for ai, a in enumerate(dst_mons):
                f = antideriv3d.integrate_box_kernel.__wrapped__(a, b)
                for name, grid in grids.items():
                    values = _pair_point_values(f, grid, factor_tables[name], digits)
                    sums = _corner_sums(values, grid)
                    if name == "swap":
                        for offset, s in sums.items():
                            tables[name][offset][ai][bi] = s
                    else:
                        for offset, s in sums.items():
                            tables[name][offset][bi][ai] = s

    out = [
        InteractionMatrixSet(
            n_src=n_src,
            n_dst=n_dst,
            digits=digits,
            h=hq,
            matrices=_assemble_set(n_src, n_dst, src_mons, dst_mons, tables["main"], hq, digits),
        )
    ]
    if swapped:
        out.append(
            InteractionMatrixSet(
                n_src=n_dst,
                n_dst=n_src,
                digits=digits,
                h=hq,
                matrices=_assemble_set(
                    n_dst, n_src, dst_mons, src_mons, tables["swap"], hq, digits
                ),
            )
        )
    if half:
        out.append(
            InteractionMatrixSet(
                n_src=n_src,
                n_dst=n_dst,
                digits=digits,
                h=hq / 2,
                matrices=_assemble_set(
                    n_src, n_dst, src_mons, dst_mons, tables["half"], hq / 2, digits
                ),
            )
        )
    return tuple(out)
