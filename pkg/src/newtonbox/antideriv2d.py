"""Closed antiderivative family for the two-dimensional log kernel.

With X = x1 - y1 and Y = x2 - y2, iterated antiderivatives of
x^a * y^b * ln(X^2 + Y^2) with respect to x1, x2, y1, y2 stay inside a
four-term family:

    P1 * ln(X^2+Y^2)  +  P2 * atan(X/Y)  +  P3 * atan(Y/X)  +  P4

with polynomial weights P_i in (x1, x2, y1, y2).  Unlike the 3-D family
there IS a stand-alone polynomial slot, and the two atan factors are kept
distinct: combining them through atan(u) + atan(1/u) = +-pi/2 would
introduce piecewise constants that break the polynomial bookkeeping.

The x1 one-term integrals are

    int ln(X^2+Y^2) dx1    = X ln(X^2+Y^2) - 2X - 2Y atan(Y/X)
    int atan(X/Y)   dx1    = X atan(X/Y) - (Y/2) ln(X^2+Y^2)
    int atan(Y/X)   dx1    = X atan(Y/X) + (Y/2) ln(X^2+Y^2)

x2 integrals follow by exchanging X and Y (which swaps the atan factors),
y integrals are the negated x integrals (the factors are odd in X and Y),
and the plain slot integrates termwise.  Monomial exponents are lowered by
integration by parts exactly as in the 3-D module.
"""

from __future__ import annotations

from functools import lru_cache

import mpmath as mp

from .antideriv3d import EvalConfig, SingularTermError
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

DIM = 4
VARIABLES = ("x1", "x2", "y1", "y2")

LN, ATAN_XY, ATAN_YX, PLAIN = range(4)
TERM_NAMES = ("ln", "atan_XoY", "atan_YoX", "plain")
N_TERMS = 4

_ZERO = Rational(0)
_ONE = Rational(1)


def variable_index(var) -> int:
    if isinstance(var, str):
        return VARIABLES.index(var)
    var = int(var)
    if not 0 <= var < DIM:
        raise ValueError(f"variable index {var} out of range")
    return var


_X = Polynomial.variable(DIM, 0) - Polynomial.variable(DIM, 2)
_Y = Polynomial.variable(DIM, 1) - Polynomial.variable(DIM, 3)
_HALF = Rational(1) / 2


def _build_x1_table():
    return {
        LN: ((LN, _X), (PLAIN, -2 * _X), (ATAN_YX, -2 * _Y)),
        ATAN_XY: ((ATAN_XY, _X), (LN, -_Y * _HALF)),
        ATAN_YX: ((ATAN_YX, _X), (LN, _Y * _HALF)),
    }


_PERM_XY = (1, 0, 3, 2)
_SIGMA_XY = {LN: LN, ATAN_XY: ATAN_YX, ATAN_YX: ATAN_XY, PLAIN: PLAIN}


def _build_tables():
    x1 = _build_x1_table()
    x2 = {
        _SIGMA_XY[gen]: tuple(
            (_SIGMA_XY[g2], w.permute_variables(_PERM_XY)) for g2, w in rules
        )
        for gen, rules in x1.items()
    }
    neg = lambda t: {g: tuple((g2, -w) for g2, w in r) for g, r in t.items()}
    return (x1, x2, neg(x1), neg(x2))


_TABLES = _build_tables()

_rule_cache: dict[tuple[int, int, int], tuple] = {}


def _split_by_var(poly: Polynomial, var: int):
    parts: dict[int, dict] = {}
    for exps, coeff in poly.terms.items():
        m = exps[var]
        rest = exps[:var] + (0,) + exps[var + 1 :]
        bucket = parts.setdefault(m, {})
        bucket[rest] = bucket.get(rest, _ZERO) + coeff
    return parts


def _acc_add(acc, slot, exps, coeff):
    d = acc[slot]
    prev = d.get(exps)
    s = coeff if prev is None else prev + coeff
    if s == 0:
        d.pop(exps, None)
    else:
        d[exps] = s


def _monomial_rule(var: int, k: int, gen: int) -> tuple:
    """Antiderivative of x_var^k * factor(gen) as 4 weight term-dicts."""
    key = (var, k, gen)
    cached = _rule_cache.get(key)
    if cached is not None:
        return cached

    acc: list[dict] = [{} for _ in range(N_TERMS)]
    if gen == PLAIN:
        exps = [0] * DIM
        exps[var] = k + 1
        acc[PLAIN][tuple(exps)] = _ONE / (k + 1)
    else:
        base = _TABLES[var][gen]
        if k == 0:
            for g2, w in base:
                for exps, c in w.terms.items():
                    _acc_add(acc, g2, exps, c)
        else:
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


class Antiderivative2:
    """Four-term family member: weights for ln, atan(X/Y), atan(Y/X), 1."""

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
                    raise ValueError("antiderivative weights must have dimension 4")
        object.__setattr__(self, "weights", ws)

    def __setattr__(self, name, value):
        raise AttributeError("Antiderivative2 is immutable")

    @classmethod
    def zero(cls) -> "Antiderivative2":
        return cls()

    @classmethod
    def from_weights(cls, mapping: dict) -> "Antiderivative2":
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
        if isinstance(other, Antiderivative2):
            return self.weights == other.weights
        return NotImplemented

    def __hash__(self):
        return hash(self.weights)

    def __add__(self, other):
        return Antiderivative2(tuple(a + b for a, b in zip(self.weights, other.weights)))

    def __neg__(self):
        return Antiderivative2(tuple(-w for w in self.weights))

    def __sub__(self, other):
        return self + (-other)

    def integrate(self, var) -> "Antiderivative2":
        """Formal antiderivative with respect to x1, x2, y1 or y2."""
        v = variable_index(var)
        acc: list[dict] = [{} for _ in range(N_TERMS)]
        for gen in range(N_TERMS):
            terms = self.weights[gen].terms
            if not terms:
                continue
            for exps, coeff in terms.items():
                k = exps[v]
                rest = exps[:v] + (0,) + exps[v + 1 :]
                rule = _monomial_rule(v, k, gen)
                for slot in range(N_TERMS):
                    rw = rule[slot]
                    if not rw:
                        continue
                    for rexps, rc in rw.items():
                        key = tuple(a + b for a, b in zip(rest, rexps))
                        _acc_add(acc, slot, key, coeff * rc)
        return Antiderivative2(tuple(Polynomial._raw(DIM, d) for d in acc))

    def substitute(self, var, value: RationalLike) -> "Antiderivative2":
        v = variable_index(var)
        return Antiderivative2(tuple(w.substitute(v, value) for w in self.weights))

    def evaluate(self, point, config: EvalConfig | None = None) -> BigFloat:
        """Exact weights, mpmath factors; see the 3-D module for the policy."""
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

    def to_text(self) -> str:
        blocks = ["antiderivative2 v1"]
        for name, w in zip(TERM_NAMES, self.weights):
            blocks.append(f"@{name}")
            blocks.append(w.to_text())
        return "\n".join(blocks) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Antiderivative2":
        lines = text.splitlines()
        if not lines or lines[0].strip() != "antiderivative2 v1":
            raise ValueError("not an antiderivative2 v1 document")
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
        return "Antiderivative2(" + ("0" if not parts else "; ".join(parts)) + ")"


def _factor_values(point, config: EvalConfig, weights) -> list:
    """ln / atan / 1 factors at the point; singular loci are X=Y=0 for ln
    and a vanishing atan denominator for the atan slots."""
    vals = [v if type(v) is Rational else Rational(v) for v in point]
    X = vals[0] - vals[2]
    Y = vals[1] - vals[3]
    rho = X * X + Y * Y

    needed = [w != 0 for w in weights]
    out = [mp.mpf(0)] * N_TERMS
    out[PLAIN] = mp.mpf(1)
    if not (needed[LN] or needed[ATAN_XY] or needed[ATAN_YX]):
        return out

    guard = None
    if config.policy == "eps-guard":
        guard = 1 - mp.mpf(config.guard_c) * mp.mpf(10) ** (-config.digits)

    def singular(slot, numerator):
        if guard is None:
            raise SingularTermError(TERM_NAMES[slot], point, weights[slot])
        if slot == LN:
            raise SingularTermError(TERM_NAMES[slot], point, weights[slot])
        if numerator == 0:
            return mp.mpf(0)
        return (mp.pi / 2) if numerator > 0 else (-mp.pi / 2)

    if needed[LN]:
        out[LN] = singular(LN, 0) if rho == 0 else mp.log(to_bigfloat(rho))
    if needed[ATAN_XY]:
        out[ATAN_XY] = singular(ATAN_XY, X) if Y == 0 else mp.atan(to_bigfloat(X / Y))
    if needed[ATAN_YX]:
        out[ATAN_YX] = singular(ATAN_YX, Y) if X == 0 else mp.atan(to_bigfloat(Y / X))
    return out


def integrate_2d(h: Antiderivative2, var) -> Antiderivative2:
    return h.integrate(var)


@lru_cache(maxsize=512)
def integrate_box_kernel_2d(lam: MultiIndex, mu: MultiIndex) -> Antiderivative2:
    """Four-fold antiderivative of x^lam * y^mu * ln(X^2+Y^2).

    Note the raw kernel: the physical 2-D fundamental solution is
    (1/2pi) ln(1/|x|) = -(1/4pi) ln(|x|^2), and that -1/(4pi) factor is
    applied by consumers assembling the Newton potential, never here.
    """
    lam = multi_index(lam, 2)
    mu = multi_index(mu, 2)
    h = Antiderivative2.from_weights({LN: Polynomial.monomial(DIM, lam + mu)})
    for var in (2, 3, 0, 1):
        h = h.integrate(var)
    return h


def eval_2d(h: Antiderivative2, point, config: EvalConfig | None = None) -> BigFloat:
    return h.evaluate(point, config)


def write_summands_2d(h: Antiderivative2, point, config: EvalConfig | None = None):
    return h.summands(point, config)
