"""Closed antiderivative family for the three-dimensional Newton kernel.

With the abbreviations

    X = x1 - y1,   Y = x2 - y2,   Z = x3 - y3,   R = sqrt(X^2 + Y^2 + Z^2)

every iterated antiderivative of x^a * y^b / R with respect to the six
coordinates stays inside an eight-term family: polynomial weights (exact
rational coefficients, variables x1..y3) times the fixed factors

    1/R,  R,  atanh(X/R), atanh(Y/R), atanh(Z/R),
    atan(XY/(Z R)), atan(XZ/(Y R)), atan(YZ/(X R)).

There is no stand-alone polynomial term, and the 1/R weight of any
integration result is identically zero.

Integration is driven by a small table of one-term integrals for x1; the
x2/x3 tables follow by exchanging the roles of X/Y and X/Z (which also
permutes the atan factors), and y-integrals are the negated x-integrals
because all factors are odd in each of X, Y, Z.  Monomial weights
x1^k are reduced with integration by parts directly on the exponent; the
resulting one-term rules are memoized per (variable, exponent, factor).

Evaluation splits each term into an exact rational weight and a
transcendental factor computed with mpmath at a per-call decimal
precision.  A term whose weight is exactly zero contributes exactly zero
even when its factor is singular at the point; a singular factor under a
nonzero weight raises :class:`SingularTermError` (after full integration
this indicates a bug, since the weights carry zeros on all singular loci).

All values are immutable; integration and evaluation are pure functions.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import mpmath as mp

from .exactmath import (
    BigFloat,
    MultiIndex,
    Polynomial,
    Rational,
    RationalLike,
    multi_index,
    to_bigfloat,
    working_dps,
)

DIM = 6
VARIABLES = ("x1", "x2", "x3", "y1", "y2", "y3")

# Term slots of the family, in fixed evaluation/serialization order.
R_INV, R_TERM, ATANH_X, ATANH_Y, ATANH_Z, ATAN_XY, ATAN_XZ, ATAN_YZ = range(8)
TERM_NAMES = (
    "Rinv",
    "R",
    "atanh_X",
    "atanh_Y",
    "atanh_Z",
    "atan_XY",
    "atan_XZ",
    "atan_YZ",
)
N_TERMS = 8

_ZERO = Rational(0)
_ONE = Rational(1)


class SingularTermError(ArithmeticError):
    """A transcendental factor is undefined while its weight is nonzero."""

    def __init__(self, term: str, point, weight):
        self.term = term
        self.point = tuple(point)
        self.weight = weight
        super().__init__(
            f"singular factor {term} with nonzero weight {weight} at point {self.point}"
        )


@dataclass(frozen=True)
class EvalConfig:
    """Evaluation policy: decimal precision and treatment of singular terms.

    ``exact-skip`` (default) relies on exact rational weights: zero weights
    are skipped, nonzero weights under a singular factor raise.
    ``eps-guard`` instead nudges singular atanh/atan arguments away from
    the singularity by a factor (1 - guard_c * eps) with eps = 10^-digits;
    it exists for experiments mirroring machine-precision behaviour.
    """

    digits: int = 50
    policy: str = "exact-skip"
    guard_c: float = 4.0

    def __post_init__(self):
        if self.digits < 16:
            raise ValueError(f"precision must be >= 16 digits, got {self.digits}")
        if self.policy not in ("exact-skip", "eps-guard"):
            raise ValueError(f"unknown singular-term policy {self.policy!r}")
        if self.policy == "eps-guard" and not self.guard_c > 1:
            raise ValueError("eps-guard constant must exceed 1")


def variable_index(var) -> int:
    if isinstance(var, str):
        return VARIABLES.index(var)
    var = int(var)
    if not 0 <= var < DIM:
        raise ValueError(f"variable index {var} out of range")
    return var


def _var_poly(i: int) -> Polynomial:
    return Polynomial.variable(DIM, i)


_X = _var_poly(0) - _var_poly(3)
_Y = _var_poly(1) - _var_poly(4)
_Z = _var_poly(2) - _var_poly(5)
_HALF = Rational(1) / 2


def _build_x1_table():
    """One-term integrals with respect to x1, weights in the six variables."""
    one = Polynomial.constant(DIM, 1)
    return {
        R_INV: ((ATANH_X, one),),
        R_TERM: ((R_TERM, _X * _HALF), (ATANH_X, (_Y * _Y + _Z * _Z) * _HALF)),
        ATANH_X: ((ATANH_X, _X), (R_TERM, -one)),
        ATANH_Y: ((ATANH_Y, _X), (ATANH_X, _Y), (ATAN_XY, -_Z)),
        ATANH_Z: ((ATANH_Z, _X), (ATANH_X, _Z), (ATAN_XZ, -_Y)),
        ATAN_XY: ((ATAN_XY, _X), (ATANH_Y, _Z)),
        ATAN_XZ: ((ATAN_XZ, _X), (ATANH_Z, _Y)),
        ATAN_YZ: ((ATAN_YZ, _X), (ATANH_Z, -_Y), (ATANH_Y, -_Z)),
    }


# Exchanging X<->Y maps (x1,y1)<->(x2,y2), fixes atan(XY/(ZR)), and swaps
# the other two atan factors; X<->Z is analogous.
_PERM_XY = (1, 0, 2, 4, 3, 5)
_PERM_XZ = (2, 1, 0, 5, 4, 3)
_SIGMA_XY = {
    R_INV: R_INV,
    R_TERM: R_TERM,
    ATANH_X: ATANH_Y,
    ATANH_Y: ATANH_X,
    ATANH_Z: ATANH_Z,
    ATAN_XY: ATAN_XY,
    ATAN_XZ: ATAN_YZ,
    ATAN_YZ: ATAN_XZ,
}
_SIGMA_XZ = {
    R_INV: R_INV,
    R_TERM: R_TERM,
    ATANH_X: ATANH_Z,
    ATANH_Y: ATANH_Y,
    ATANH_Z: ATANH_X,
    ATAN_XY: ATAN_YZ,
    ATAN_XZ: ATAN_XZ,
    ATAN_YZ: ATAN_XY,
}


def _transform_table(table, sigma, perm):
    return {
        sigma[gen]: tuple((sigma[g2], w.permute_variables(perm)) for g2, w in rules)
        for gen, rules in table.items()
    }


def _negate_table(table):
    return {
        gen: tuple((g2, -w) for g2, w in rules) for gen, rules in table.items()
    }


def _build_tables():
    x1 = _build_x1_table()
    x2 = _transform_table(x1, _SIGMA_XY, _PERM_XY)
    x3 = _transform_table(x1, _SIGMA_XZ, _PERM_XZ)
    return (x1, x2, x3, _negate_table(x1), _negate_table(x2), _negate_table(x3))


_TABLES = _build_tables()

# weights of the memoized one-term rules are stored as bare term dicts
_RuleWeights = tuple
_rule_cache: dict[tuple[int, int, int], _RuleWeights] = {}


def _split_by_var(poly: Polynomial, var: int):
    """Split a weight into { exponent of var : residual term dict }."""
    parts: dict[int, dict] = {}
    for exps, coeff in poly.terms.items():
        m = exps[var]
        rest = exps[:var] + (0,) + exps[var + 1 :]
        bucket = parts.setdefault(m, {})
        bucket[rest] = bucket.get(rest, _ZERO) + coeff
    return parts


def _acc_add(acc: list[dict], slot: int, exps, coeff) -> None:
    d = acc[slot]
    prev = d.get(exps)
    s = coeff if prev is None else prev + coeff
    if s == 0:
        d.pop(exps, None)
    else:
        d[exps] = s


def _monomial_rule(var: int, k: int, gen: int) -> _RuleWeights:
    """Antiderivative of x_var^k * factor(gen), as 8 weight term-dicts.

    Integration by parts lowers k directly:

        I(k) = x^k * G - k * sum_j w_j * I_{g_j}(k - 1 + m_j)

    where G is the one-term integral of the factor and w_j * x^m_j runs
    over the variable-split of G's weights.  The self-referential term
    (g_j the factor itself, m_j = 1, constant w_j) is moved to the left
    and divided out; everything else recurses with a smaller exponent.
    """
    key = (var, k, gen)
    cached = _rule_cache.get(key)
    if cached is not None:
        return cached

    base = _TABLES[var][gen]
    acc: list[dict] = [{} for _ in range(N_TERMS)]

    if k == 0:
        for g2, w in base:
            for exps, c in w.terms.items():
                _acc_add(acc, g2, exps, c)
    else:
        # x^k * G
        for g2, w in base:
            for exps, c in w.terms.items():
                lifted = exps[:var] + (exps[var] + k,) + exps[var + 1 :]
                _acc_add(acc, g2, lifted, c)
        self_coeff = _ZERO
        kq = Rational(k)
        for g2, w in base:
            for m, residual in _split_by_var(w, var).items():
                if g2 == gen and m == 1:
                    const = residual.get((0,) * DIM, _ZERO)
                    if len(residual) != 1 or const == 0:
                        raise AssertionError("self-term weight must be constant")
                    self_coeff += const
                    continue
                sub = _monomial_rule(var, k - 1 + m, g2)
                for slot in range(N_TERMS):
                    sw = sub[slot]
                    if not sw:
                        continue
                    for rexps, rc in residual.items():
                        factor = kq * rc
                        for sexps, sc in sw.items():
                            key2 = tuple(a + b for a, b in zip(rexps, sexps))
                            _acc_add(acc, slot, key2, -factor * sc)
        scale = _ONE / (_ONE + kq * self_coeff)
        if scale != 1:
            acc = [{e: c * scale for e, c in d.items()} for d in acc]

    result = tuple(acc)
    _rule_cache[key] = result
    return result


class Antiderivative3:
    """A member of the eight-term antiderivative family.

    ``weights`` holds one :class:`Polynomial` per term slot, ordered as
    :data:`TERM_NAMES`.  X, Y, Z, R are derived from the evaluation point
    and never stored.
    """

    __slots__ = ("weights",)

    def __init__(self, weights=None):
        if weights is None:
            ws = tuple(Polynomial.zero(DIM) for _ in range(N_TERMS))
        else:
            ws = tuple(weights)
            if len(ws) != N_TERMS:
                raise ValueError(f"expected {N_TERMS} weights, got {len(ws)}")
            for w in ws:
                if w.dim != DIM:
                    raise ValueError("antiderivative weights must have dimension 6")
        object.__setattr__(self, "weights", ws)

    def __setattr__(self, name, value):
        raise AttributeError("Antiderivative3 is immutable")

    @classmethod
    def zero(cls) -> "Antiderivative3":
        return cls()

    @classmethod
    def from_weights(cls, mapping: dict) -> "Antiderivative3":
        """Build from {slot index or name: Polynomial | scalar}."""
        ws = [Polynomial.zero(DIM) for _ in range(N_TERMS)]
        for key, value in mapping.items():
            slot = TERM_NAMES.index(key) if isinstance(key, str) else int(key)
            ws[slot] = value if isinstance(value, Polynomial) else Polynomial.constant(DIM, value)
        return cls(ws)

    def weight(self, key) -> Polynomial:
        slot = TERM_NAMES.index(key) if isinstance(key, str) else int(key)
        return self.weights[slot]

    def is_zero(self) -> bool:
        return all(w.is_zero() for w in self.weights)

    def __eq__(self, other):
        if isinstance(other, Antiderivative3):
            return self.weights == other.weights
        return NotImplemented

    def __hash__(self):
        return hash(self.weights)

    def __add__(self, other: "Antiderivative3") -> "Antiderivative3":
        return Antiderivative3(tuple(a + b for a, b in zip(self.weights, other.weights)))

    def __neg__(self) -> "Antiderivative3":
        return Antiderivative3(tuple(-w for w in self.weights))

    def __sub__(self, other: "Antiderivative3") -> "Antiderivative3":
        return self + (-other)

    def scale(self, factor) -> "Antiderivative3":
        """Multiply every weight by a scalar or polynomial."""
        return Antiderivative3(tuple(w * factor for w in self.weights))

    # -- integration ---------------------------------------------------

    def integrate(self, var) -> "Antiderivative3":
        """Formal antiderivative with respect to one of the six variables.

        The result F~ satisfies dF~/dvar = self as functions (up to a
        function independent of var) and its 1/R weight is identically
        zero.
        """
        v = variable_index(var)
        acc: list[dict] = [{} for _ in range(N_TERMS)]
        for gen in range(N_TERMS):
            terms = self.weights[gen].terms
            if not terms:
                continue
            for exps, coeff in terms.items():
                k = exps[v]
                r0, r1, r2, r3, r4, r5 = exps
                if v == 0:
                    r0 = 0
                elif v == 1:
                    r1 = 0
                elif v == 2:
                    r2 = 0
                elif v == 3:
                    r3 = 0
                elif v == 4:
                    r4 = 0
                else:
                    r5 = 0
                rule = _monomial_rule(v, k, gen)
                for slot in range(N_TERMS):
                    rw = rule[slot]
                    if not rw:
                        continue
                    d = acc[slot]
                    get = d.get
                    for rexps, rc in rw.items():
                        key = (
                            r0 + rexps[0],
                            r1 + rexps[1],
                            r2 + rexps[2],
                            r3 + rexps[3],
                            r4 + rexps[4],
                            r5 + rexps[5],
                        )
                        prev = get(key)
                        s = coeff * rc if prev is None else prev + coeff * rc
                        if s == 0:
                            del d[key]
                        else:
                            d[key] = s
        return Antiderivative3(tuple(Polynomial._raw(DIM, d) for d in acc))

    def substitute(self, var, value: RationalLike) -> "Antiderivative3":
        """Substitute a rational bound for one variable in all weights.

        The factors keep their formal meaning (X, Y, Z differences of the
        final evaluation point); only the polynomial weights change, so
        this is an evaluation device, not a family operation.
        """
        v = variable_index(var)
        return Antiderivative3(tuple(w.substitute(v, value) for w in self.weights))

    # -- evaluation ----------------------------------------------------

    def evaluate(self, point, config: EvalConfig | None = None) -> BigFloat:
        """Weights exactly in rational arithmetic, factors at ``config.digits``.

        The eight terms are summed in slot order at full precision and the
        result is rounded once to the requested precision.
        """
        config = config or EvalConfig()
        ws = [w.evaluate(point) for w in self.weights]
        with working_dps(config.digits + 8):
            factors = _factor_values(point, config, ws)
            total = mp.mpf(0)
            for w, f in zip(ws, factors):
                if w != 0:
                    total += to_bigfloat(w) * f
        with working_dps(config.digits):
            return +total

    def summands(self, point, config: EvalConfig | None = None) -> list[BigFloat]:
        """The eight per-term values whose sum is :meth:`evaluate`.

        Useful for condition-number estimates of the corner sums.
        """
        config = config or EvalConfig()
        ws = [w.evaluate(point) for w in self.weights]
        with working_dps(config.digits + 8):
            factors = _factor_values(point, config, ws)
            raw = [
                to_bigfloat(w) * f if w != 0 else mp.mpf(0)
                for w, f in zip(ws, factors)
            ]
        with working_dps(config.digits):
            return [+v for v in raw]

    # -- serialization ---------------------------------------------------

    def to_text(self) -> str:
        """Eight labeled polynomial blocks in the exactmath line format."""
        blocks = ["antiderivative3 v1"]
        for name, w in zip(TERM_NAMES, self.weights):
            blocks.append(f"@{name}")
            blocks.append(w.to_text())
        return "\n".join(blocks) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Antiderivative3":
        lines = text.splitlines()
        if not lines or lines[0].strip() != "antiderivative3 v1":
            raise ValueError("not an antiderivative3 v1 document")
        ws = {}
        name = None
        chunk: list[str] = []
        for line in lines[1:]:
            if line.startswith("@"):
                if name is not None:
                    ws[name] = Polynomial.from_text("\n".join(chunk), DIM)
                name = line[1:].strip()
                chunk = []
            else:
                chunk.append(line)
        if name is not None:
            ws[name] = Polynomial.from_text("\n".join(chunk), DIM)
        return cls.from_weights(ws)

    def __repr__(self):
        parts = [
            f"{name}: {w.to_text().replace(chr(10), ' + ')}"
            for name, w in zip(TERM_NAMES, self.weights)
            if not w.is_zero()
        ]
        return "Antiderivative3(" + ("0" if not parts else "; ".join(parts)) + ")"


def _factor_values(point, config: EvalConfig, weights) -> list:
    """Transcendental factor of each term at the point, or a raise on demand.

    Only factors whose weight is nonzero are computed; singular factors
    under a nonzero weight raise SingularTermError (exact-skip) or are
    evaluated with the argument pulled off the singularity (eps-guard).

    atanh(X/R) is computed as sign(X) * (ln(R+|X|) - ln(Y^2+Z^2)/2): the
    identity (R-|X|)(R+|X|) = Y^2+Z^2 holds exactly for the rational
    squared norms, so no cancellation occurs for any sign of X.
    """
    vals = [v if type(v) is Rational else Rational(v) for v in point]
    X = vals[0] - vals[3]
    Y = vals[1] - vals[4]
    Z = vals[2] - vals[5]
    rho = X * X + Y * Y + Z * Z

    needed = [w != 0 for w in weights]
    out = [mp.mpf(0)] * N_TERMS
    if not any(needed):
        return out

    guard = None
    if config.policy == "eps-guard":
        guard = 1 - mp.mpf(config.guard_c) * mp.mpf(10) ** (-config.digits)

    def singular(slot, argument=None):
        if guard is None or slot == R_INV:
            raise SingularTermError(TERM_NAMES[slot], point, weights[slot])
        if slot in (ATANH_X, ATANH_Y, ATANH_Z):
            sign = argument
            return sign * mp.atanh(guard)
        if argument == 0:
            return mp.mpf(0)
        return (mp.pi / 2) if argument > 0 else (-mp.pi / 2)

    r_val = mp.sqrt(to_bigfloat(rho)) if rho != 0 else mp.mpf(0)

    if needed[R_INV]:
        out[R_INV] = singular(R_INV, 1) if rho == 0 else 1 / r_val
    if needed[R_TERM]:
        out[R_TERM] = r_val

    for slot, num in ((ATANH_X, X), (ATANH_Y, Y), (ATANH_Z, Z)):
        if not needed[slot]:
            continue
        rest = rho - num * num  # exact sum of the two remaining squares
        if rest == 0:
            out[slot] = singular(slot, 1 if num >= 0 else -1)
        elif num == 0:
            out[slot] = mp.mpf(0)
        else:
            mag = mp.log(r_val + to_bigfloat(abs(num))) - mp.log(to_bigfloat(rest)) / 2
            out[slot] = mag if num > 0 else -mag

    for slot, num_pair, den in ((ATAN_XY, (X, Y), Z), (ATAN_XZ, (X, Z), Y), (ATAN_YZ, (Y, Z), X)):
        if not needed[slot]:
            continue
        num = num_pair[0] * num_pair[1]
        if den == 0 or rho == 0:
            out[slot] = singular(slot, num)
        else:
            out[slot] = mp.atan(to_bigfloat(num / den) / r_val)

    return out


# -- module-level operations (thin wrappers with the canonical names) -------


def integrate_3d(f: Antiderivative3, var) -> Antiderivative3:
    return f.integrate(var)


@lru_cache(maxsize=512)
def integrate_box_kernel(lam: MultiIndex, mu: MultiIndex) -> Antiderivative3:
    """Six-fold antiderivative of x^lam * y^mu / R over all six variables.

    The integration order (y1, y2, y3, x1, x2, x3) is immaterial: any
    order yields the same family member.
    """
    lam = multi_index(lam, 3)
    mu = multi_index(mu, 3)
    f = Antiderivative3.from_weights(
        {R_INV: Polynomial.monomial(DIM, lam + mu)}
    )
    for var in (3, 4, 5, 0, 1, 2):
        f = f.integrate(var)
    return f


def eval_3d(f: Antiderivative3, point, config: EvalConfig | None = None) -> BigFloat:
    return f.evaluate(point, config)


def write_summands_3d(f: Antiderivative3, point, config: EvalConfig | None = None):
    return f.summands(point, config)
