"""Exact rational arithmetic, multi-indices, and sparse multivariate polynomials.

A polynomial is a sparse map from exponent tuples to rational coefficients:

    x1 * y2**3   ->   {(1, 0, 0, 0, 3, 0): 1}

Variables are ordered ``(x1, x2, x3, y1, y2, y3)`` in dimension 6 and
``(x1, x2, y1, y2)`` in dimension 4.  Zero coefficients are never stored,
so two polynomials are equal exactly when their term maps are equal.
Coefficients are exact rationals (``gmpy2.mpq`` when available, else
``fractions.Fraction``); no polynomial operation ever rounds.

Arbitrary-precision floating point ("BigFloat") is provided by mpmath.
Precision is always a per-call parameter expressed in decimal digits; the
helpers below wrap the conversion from exact rationals and keep formatting
deterministic.

All values in this module are immutable after construction and can be
shared freely between threads.
"""

from __future__ import annotations

import fractions
from typing import Iterable, Iterator, Mapping, Sequence, Union

import mpmath as mp

try:
    from gmpy2 import mpq as _mpq

    Rational = _mpq
except ImportError:  # pragma: no cover - gmpy2 is an optional speedup
    Rational = fractions.Fraction

RationalLike = Union[int, str, fractions.Fraction, "Rational"]

#: Exponent tuple; entry i is the degree of variable i.
MultiIndex = tuple

_ZERO = Rational(0)
_ONE = Rational(1)


def rational(numerator: RationalLike, denominator: RationalLike = 1) -> Rational:
    """Build an exact rational in canonical form (gcd 1, positive denominator)."""
    if denominator == 1:
        if isinstance(numerator, str):
            return parse_rational(numerator)
        return Rational(numerator)
    return Rational(numerator) / Rational(denominator)


def parse_rational(text: str) -> Rational:
    """Parse "a/b", an integer, or a decimal string, all exactly.

    Decimals go through :class:`fractions.Fraction` so "1.234" becomes
    617/500 (= 1234/1000) without ever touching binary floating point.
    """
    text = text.strip()
    if "/" in text:
        num, den = text.split("/", 1)
        den_q = Rational(fractions.Fraction(den.strip()))
        if den_q == 0:
            raise ZeroDivisionError(f"zero denominator in {text!r}")
        return Rational(fractions.Fraction(num.strip())) / den_q
    return Rational(fractions.Fraction(text))


def format_rational(value: RationalLike) -> str:
    """Format as "num/den" ("num" when the denominator is 1); lossless."""
    q = Rational(value)
    if q.denominator == 1:
        return str(q.numerator)
    return f"{q.numerator}/{q.denominator}"


def multi_index(entries: Iterable[int], dim: int | None = None) -> MultiIndex:
    """Validate and freeze an exponent tuple (all entries non-negative)."""
    idx = tuple(int(e) for e in entries)
    if dim is not None and len(idx) != dim:
        raise ValueError(f"expected {dim} exponents, got {len(idx)}")
    if any(e < 0 for e in idx):
        raise ValueError(f"negative exponent in {idx}")
    return idx


def total_degree(idx: MultiIndex) -> int:
    return sum(idx)


class Polynomial:
    """Sparse multivariate polynomial with exact rational coefficients.

    Instances are immutable; all operations allocate fresh results and
    normalize by dropping zero coefficients, so ``p == q`` is structural
    equality of term maps.
    """

    __slots__ = ("dim", "terms")

    def __init__(self, dim: int, terms: Mapping[MultiIndex, RationalLike] | None = None):
        clean: dict[MultiIndex, Rational] = {}
        if terms:
            for exps, coeff in terms.items():
                idx = multi_index(exps, dim)
                q = coeff if type(coeff) is Rational else Rational(coeff)
                if q != 0:
                    prev = clean.get(idx)
                    q = q if prev is None else prev + q
                    if q != 0:
                        clean[idx] = q
                    elif prev is not None:
                        del clean[idx]
        object.__setattr__(self, "dim", dim)
        object.__setattr__(self, "terms", clean)

    def __setattr__(self, name, value):
        raise AttributeError("Polynomial is immutable")

    # -- constructors -------------------------------------------------

    @classmethod
    def _raw(cls, dim: int, terms: dict) -> "Polynomial":
        """Wrap a pre-normalized term dict without copying (internal)."""
        obj = object.__new__(cls)
        object.__setattr__(obj, "dim", dim)
        object.__setattr__(obj, "terms", terms)
        return obj

    @classmethod
    def zero(cls, dim: int) -> "Polynomial":
        return cls._raw(dim, {})

    @classmethod
    def constant(cls, dim: int, value: RationalLike) -> "Polynomial":
        q = Rational(value)
        return cls._raw(dim, {} if q == 0 else {(0,) * dim: q})

    @classmethod
    def monomial(cls, dim: int, exps: Iterable[int], coeff: RationalLike = 1) -> "Polynomial":
        q = Rational(coeff)
        if q == 0:
            return cls.zero(dim)
        return cls._raw(dim, {multi_index(exps, dim): q})

    @classmethod
    def variable(cls, dim: int, var: int) -> "Polynomial":
        if not 0 <= var < dim:
            raise ValueError(f"variable index {var} out of range for dim {dim}")
        exps = [0] * dim
        exps[var] = 1
        return cls.monomial(dim, exps)

    # -- ring operations ----------------------------------------------

    def _check_dim(self, other: "Polynomial") -> None:
        if self.dim != other.dim:
            raise ValueError(f"dimension mismatch: {self.dim} vs {other.dim}")

    def __add__(self, other):
        if not isinstance(other, Polynomial):
            other = Polynomial.constant(self.dim, other)
        self._check_dim(other)
        out = dict(self.terms)
        for exps, coeff in other.terms.items():
            prev = out.get(exps)
            if prev is None:
                out[exps] = coeff
            else:
                s = prev + coeff
                if s == 0:
                    del out[exps]
                else:
                    out[exps] = s
        return Polynomial._raw(self.dim, out)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial._raw(self.dim, {e: -c for e, c in self.terms.items()})

    def __sub__(self, other):
        if not isinstance(other, Polynomial):
            other = Polynomial.constant(self.dim, other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Polynomial):
            q = Rational(other)
            if q == 0:
                return Polynomial.zero(self.dim)
            return Polynomial._raw(self.dim, {e: c * q for e, c in self.terms.items()})
        self._check_dim(other)
        out: dict[MultiIndex, Rational] = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                key = tuple(a + b for a, b in zip(e1, e2))
                prev = out.get(key)
                s = c1 * c2 if prev is None else prev + c1 * c2
                if s == 0:
                    out.pop(key, None)
                else:
                    out[key] = s
        return Polynomial._raw(self.dim, out)

    __rmul__ = __mul__

    def __truediv__(self, scalar: RationalLike):
        q = Rational(scalar)
        if q == 0:
            raise ZeroDivisionError("division of polynomial by zero scalar")
        return Polynomial._raw(self.dim, {e: c / q for e, c in self.terms.items()})

    def __pow__(self, exponent: int):
        if exponent < 0:
            raise ValueError("negative power of a polynomial")
        result = Polynomial.constant(self.dim, 1)
        base = self
        n = exponent
        while n:
            if n & 1:
                result = result * base
            base = base * base
            n >>= 1
        return result

    def __eq__(self, other):
        if isinstance(other, Polynomial):
            return self.dim == other.dim and self.terms == other.terms
        return NotImplemented

    def __hash__(self):
        return hash((self.dim, frozenset(self.terms.items())))

    def __bool__(self):
        return bool(self.terms)

    def is_zero(self) -> bool:
        return not self.terms

    # -- queries --------------------------------------------------------

    def degree(self) -> int:
        """Total degree; 0 for the zero polynomial."""
        return max((sum(e) for e in self.terms), default=0)

    def degree_in(self, var: int) -> int:
        return max((e[var] for e in self.terms), default=0)

    def sorted_terms(self) -> list[tuple[MultiIndex, Rational]]:
        return sorted(self.terms.items())

    def __iter__(self) -> Iterator[tuple[MultiIndex, Rational]]:
        return iter(self.sorted_terms())

    def constant_value(self) -> Rational:
        """The value of a constant polynomial (raises if non-constant)."""
        if not self.terms:
            return _ZERO
        if len(self.terms) == 1:
            (exps, coeff), = self.terms.items()
            if not any(exps):
                return coeff
        raise ValueError("polynomial is not constant")

    # -- evaluation and calculus ----------------------------------------

    def evaluate(self, point: Sequence[RationalLike]) -> Rational:
        """Exact value at a rational point; never rounds."""
        if len(point) != self.dim:
            raise ValueError(f"point has {len(point)} entries, dim is {self.dim}")
        vals = [v if type(v) is Rational else Rational(v) for v in point]
        total = _ZERO
        for exps, coeff in self.terms.items():
            term = coeff
            for v, e in zip(vals, exps):
                if e:
                    term = term * v**e
            total += term
        return total

    def partial_derivative(self, var: int) -> "Polynomial":
        """Exact formal partial derivative with respect to variable ``var``."""
        if not 0 <= var < self.dim:
            raise ValueError(f"variable index {var} out of range for dim {self.dim}")
        out: dict[MultiIndex, Rational] = {}
        for exps, coeff in self.terms.items():
            e = exps[var]
            if e:
                key = exps[:var] + (e - 1,) + exps[var + 1 :]
                prev = out.get(key)
                s = coeff * e if prev is None else prev + coeff * e
                if s == 0:
                    out.pop(key, None)
                else:
                    out[key] = s
        return Polynomial._raw(self.dim, out)

    def substitute(self, var: int, value: RationalLike) -> "Polynomial":
        """Substitute an exact rational for one variable.

        The dimension tag is kept; the substituted variable simply no
        longer occurs in the result.
        """
        q = Rational(value)
        powers = {0: _ONE}
        out: dict[MultiIndex, Rational] = {}
        for exps, coeff in self.terms.items():
            e = exps[var]
            p = powers.get(e)
            if p is None:
                p = q**e
                powers[e] = p
            c = coeff * p
            if c == 0:
                continue
            key = exps[:var] + (0,) + exps[var + 1 :]
            prev = out.get(key)
            s = c if prev is None else prev + c
            if s == 0:
                out.pop(key, None)
            else:
                out[key] = s
        return Polynomial._raw(self.dim, out)

    def permute_variables(self, perm: Sequence[int]) -> "Polynomial":
        """Relabel variables: variable i of self becomes variable perm[i]."""
        if sorted(perm) != list(range(self.dim)):
            raise ValueError(f"not a permutation of 0..{self.dim - 1}: {perm}")
        out = {}
        for exps, coeff in self.terms.items():
            new = [0] * self.dim
            for i, e in enumerate(exps):
                new[perm[i]] = e
            out[tuple(new)] = coeff
        return Polynomial._raw(self.dim, out)

    # -- serialization ----------------------------------------------------

    def to_text(self) -> str:
        """Lossless text form: one sorted "coeff * x1^a ... yD^f" line per term."""
        names = variable_names(self.dim)
        lines = []
        for exps, coeff in self.sorted_terms():
            factors = " ".join(f"{n}^{e}" for n, e in zip(names, exps))
            lines.append(f"{format_rational(coeff)} * {factors}")
        return "\n".join(lines) if lines else "0"

    @classmethod
    def from_text(cls, text: str, dim: int) -> "Polynomial":
        names = variable_names(dim)
        pos = {n: i for i, n in enumerate(names)}
        terms: dict[MultiIndex, Rational] = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line == "0":
                continue
            coeff_text, _, factors = line.partition("*")
            exps = [0] * dim
            for factor in factors.split():
                name, _, power = factor.partition("^")
                exps[pos[name]] = int(power)
            key = tuple(exps)
            terms[key] = terms.get(key, _ZERO) + parse_rational(coeff_text)
        return cls(dim, terms)

    def __repr__(self):
        if not self.terms:
            return "Polynomial(0)"
        return f"Polynomial({' + '.join(self.to_text().splitlines())})"


def variable_names(dim: int) -> tuple[str, ...]:
    """Canonical variable names: x-block then y-block, each of length dim/2."""
    if dim % 2:
        raise ValueError(f"dimension must be even (x and y blocks), got {dim}")
    half = dim // 2
    return tuple(f"x{i + 1}" for i in range(half)) + tuple(f"y{i + 1}" for i in range(half))


# Spec-level operation aliases; the methods above carry the implementation.


def poly_add(p: Polynomial, q: Polynomial) -> Polynomial:
    return p + q


def poly_mul(p: Polynomial, q: Polynomial) -> Polynomial:
    return p * q


def poly_eval(p: Polynomial, point: Sequence[RationalLike]) -> Rational:
    return p.evaluate(point)


def poly_partial_derivative(p: Polynomial, var: int) -> Polynomial:
    return p.partial_derivative(var)


# ---------------------------------------------------------------------------
# BigFloat: mpmath values at per-call decimal precision
# ---------------------------------------------------------------------------

#: Arbitrary-precision floating point type (immutable mpmath values).
BigFloat = mp.mpf

MIN_DIGITS = 16


def working_dps(digits: int):
    """Context manager setting the mpmath working precision in decimal digits.

    Precision is a per-call parameter throughout this package: callers wrap
    the computation, values created inside keep their precision afterwards.
    """
    if digits < MIN_DIGITS:
        raise ValueError(f"precision must be at least {MIN_DIGITS} digits, got {digits}")
    return mp.workdps(digits)


_from_rational = mp.libmp.from_rational
_from_int = mp.libmp.from_int
_round_nearest = mp.libmp.round_nearest
_mp_ctx = mp.mp


def to_bigfloat(value: RationalLike, digits: int | None = None) -> BigFloat:
    """Round an exact rational (or int) to a BigFloat in one rounding.

    With ``digits`` given, the conversion happens at that precision;
    otherwise the ambient mpmath precision is used.
    """
    if digits is not None:
        with working_dps(digits):
            return to_bigfloat(value)
    q = value if type(value) is Rational else Rational(value)
    num, den = int(q.numerator), int(q.denominator)
    prec = _mp_ctx.prec
    if den == 1:
        return _mp_ctx.make_mpf(_from_int(num, prec, _round_nearest))
    return _mp_ctx.make_mpf(_from_rational(num, den, prec, _round_nearest))


def bigfloat_str(x: BigFloat, digits: int) -> str:
    """Deterministic decimal rendering with ``digits`` significant digits.

    Rounds to nearest and keeps trailing zeros, so equal inputs always give
    byte-identical output.
    """
    return mp.nstr(x, digits, strip_zeros=False)
