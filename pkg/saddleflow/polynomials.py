"""
Polynomials in the phase coordinates (u1, u2, v1, v2).

Hamiltonians, couplings and normal-form coefficient slots are all written as
sparse polynomials over these four variables. A monomial is stored as its
exponent tuple in the order (u1, u2, v1, v2) and written in configs as
``u1^2*v2``.

Classes:
    Polynomial: sparse polynomial with arithmetic and partial derivatives.
    CompiledPolynomials: vectorized evaluation of several polynomials sharing
        one monomial basis.
"""
import re

import numpy as np

VARIABLES = ('u1', 'u2', 'v1', 'v2')

_FACTOR = re.compile(r'^(u1|u2|v1|v2)(?:\^(\d+))?$')


def parse_monomial(text):
    """
    Parse a monomial written as ``u1^2*v2`` into an exponent tuple.

    The empty string and ``1`` denote the constant monomial.

    Raises
    ------
    ValueError
        If a factor is not one of the four phase variables.
    """
    text = text.strip().replace(' ', '')
    exps = [0, 0, 0, 0]
    if text in ('', '1'):
        return tuple(exps)
    for factor in text.split('*'):
        match = _FACTOR.match(factor)
        if match is None:
            raise ValueError(f'Invalid monomial factor "{factor}" in "{text}"')
        power = int(match.group(2)) if match.group(2) else 1
        exps[VARIABLES.index(match.group(1))] += power
    return tuple(exps)


def format_monomial(exps):
    factors = []
    for name, power in zip(VARIABLES, exps):
        if power == 1:
            factors.append(name)
        elif power > 1:
            factors.append(f'{name}^{power}')
    return '*'.join(factors) or '1'


def pair_degree(exps):
    """Degree of a monomial in the symmetric pair (u1, v1)."""
    return exps[0] + exps[2]


class Polynomial:
    """
    Sparse polynomial over (u1, u2, v1, v2).

    Parameters
    ----------
    terms : dict, optional
        Mapping from exponent tuples to real coefficients. Zero coefficients are
        dropped.
    """
    __slots__ = ('terms', '_compiled')

    def __init__(self, terms=None):
        self.terms = {}
        for exps, coeff in (terms or {}).items():
            exps = tuple(int(e) for e in exps)
            if len(exps) != 4 or min(exps) < 0:
                raise ValueError(f'Invalid exponent tuple {exps}')
            coeff = float(coeff)
            if coeff != 0.0:
                self.terms[exps] = self.terms.get(exps, 0.0) + coeff
        self.terms = {e: c for e, c in self.terms.items() if c != 0.0}
        self._compiled = None

    @classmethod
    def variable(cls, name):
        exps = [0, 0, 0, 0]
        exps[VARIABLES.index(name)] = 1
        return cls({tuple(exps): 1.0})

    @classmethod
    def constant(cls, value):
        return cls({(0, 0, 0, 0): value})

    @classmethod
    def from_strings(cls, mapping):
        """Build from ``{'u1^2*v2': 0.3, ...}``; repeated monomials add up."""
        terms = {}
        for text, coeff in mapping.items():
            exps = parse_monomial(text)
            terms[exps] = terms.get(exps, 0.0) + float(coeff)
        return cls(terms)

    def __getstate__(self):
        return {'terms': self.terms}

    def __setstate__(self, state):
        self.terms = state['terms']
        self._compiled = None

    def _coerce(self, other):
        if isinstance(other, Polynomial):
            return other
        return Polynomial.constant(other)

    def __add__(self, other):
        other = self._coerce(other)
        terms = dict(self.terms)
        for exps, coeff in other.terms.items():
            terms[exps] = terms.get(exps, 0.0) + coeff
        return Polynomial(terms)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial({e: -c for e, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        if not isinstance(other, Polynomial):
            return Polynomial({e: c * float(other) for e, c in self.terms.items()})
        terms = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                exps = tuple(a + b for a, b in zip(e1, e2))
                terms[exps] = terms.get(exps, 0.0) + c1 * c2
        return Polynomial(terms)

    __rmul__ = __mul__

    def __truediv__(self, value):
        return self * (1.0 / float(value))

    def __pow__(self, power):
        result = Polynomial.constant(1.0)
        for _ in range(int(power)):
            result = result * self
        return result

    def __eq__(self, other):
        return isinstance(other, Polynomial) and self.terms == other.terms

    def __repr__(self):
        if not self.terms:
            return 'Polynomial(0)'
        body = ' + '.join(f'{c:g}*{format_monomial(e)}' for e, c in sorted(self.terms.items()))
        return f'Polynomial({body})'

    def is_zero(self):
        return not self.terms

    def degree(self):
        return max((sum(e) for e in self.terms), default=0)

    def min_degree(self):
        return min((sum(e) for e in self.terms), default=0)

    def homogeneous_part(self, degree):
        return Polynomial({e: c for e, c in self.terms.items() if sum(e) == degree})

    def partial(self, index):
        """Partial derivative with respect to variable ``index`` (0..3)."""
        terms = {}
        for exps, coeff in self.terms.items():
            power = exps[index]
            if power == 0:
                continue
            lowered = list(exps)
            lowered[index] -= 1
            lowered = tuple(lowered)
            terms[lowered] = terms.get(lowered, 0.0) + coeff * power
        return Polynomial(terms)

    def gradient(self):
        return [self.partial(i) for i in range(4)]

    def __call__(self, x):
        if self._compiled is None:
            self._compiled = CompiledPolynomials([self])
        value = self._compiled(x)
        return value[..., 0] if np.ndim(value) > 1 else float(value[0])

    def to_strings(self):
        return {format_monomial(e): c for e, c in sorted(self.terms.items())}


class CompiledPolynomials:
    """
    Evaluate a list of polynomials at once over their shared monomials.

    Calling with a state of shape (4,) returns shape (k,); a batch of shape
    (n, 4) returns (n, k).
    """

    def __init__(self, polynomials):
        basis = sorted({e for p in polynomials for e in p.terms})
        index = {e: i for i, e in enumerate(basis)}
        self.exponents = np.array(basis, dtype=int).reshape(len(basis), 4)
        self.coefficients = np.zeros((len(polynomials), len(basis)))
        for row, poly in enumerate(polynomials):
            for exps, coeff in poly.terms.items():
                self.coefficients[row, index[exps]] = coeff

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            monomials = np.prod(np.power(x, self.exponents), axis=1)
            return self.coefficients @ monomials
        monomials = np.prod(np.power(x[:, None, :], self.exponents[None, :, :]), axis=2)
        return monomials @ self.coefficients.T
