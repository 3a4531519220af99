"""
Module for the model builders of the saddleflow app.

Every builder validates its inputs, assembles the polynomial Hamiltonian or the
normal-form coefficient slots, and returns an immutable ``ModelSpec``.

Classes:
    ModelManager: builders for the four model kinds.

Functions:
    build_global_model, build_local_normal_form, build_figure_eight_model,
    build_cnlse_model: the builders of the default manager.
"""
import logging
import math

import numpy as np

from . import conf
from .exceptions import DegenerateJacobian, IdentityViolation, ModelError, SymmetryViolation
from .models import (
    BEYOND2_IDENTITIES, EVEN_SLOTS, NORMAL_FORM_SLOTS, CaseTag, Eigendata, FirstIntegral,
    HamiltonianField, ModelKind, ModelSpec, NormalFormField, applicable_identities, classify_case,
)
from .polynomials import Polynomial, format_monomial, pair_degree, parse_monomial
from .poincare import global_map_coeffs

logger = logging.getLogger(__name__)

U1, U2, V1, V2 = (Polynomial.variable(name) for name in ('u1', 'u2', 'v1', 'v2'))
ROOT2 = math.sqrt(2.0)


class QuadraticLoop:
    """The loop x = 1.5 sech^2(l t / 2) of x'' = l^2 (x - x^2)."""

    def __init__(self, lambda2):
        self.lambda2 = lambda2

    def __call__(self, t, sigma=1):
        arg = 0.5 * self.lambda2 * np.asarray(t, dtype=float)
        sech2 = 1.0 / np.cosh(arg) ** 2
        x = 1.5 * sech2
        y = -1.5 * sech2 * np.tanh(arg)
        zero = np.zeros_like(x)
        return np.stack([zero, (x - y) / ROOT2, zero, (x + y) / ROOT2], axis=-1)


class DuffingLoop:
    """The two loops x = sigma*sqrt(2) sech(l t) of x'' = l^2 (x - x^3)."""

    def __init__(self, lambda2):
        self.lambda2 = lambda2

    def __call__(self, t, sigma=1):
        arg = self.lambda2 * np.asarray(t, dtype=float)
        sech = 1.0 / np.cosh(arg)
        x = sigma * ROOT2 * sech
        y = -x * np.tanh(arg)
        zero = np.zeros_like(x)
        return np.stack([zero, (x - y) / ROOT2, zero, (x + y) / ROOT2], axis=-1)


class CnlseLoop:
    """Loops q2 = sigma*(w2/sqrt(beta)) sech(w2 t) of the steady-state reduction."""

    def __init__(self, omega2, beta):
        self.omega2 = omega2
        self.beta = beta

    def __call__(self, t, sigma=1):
        w = self.omega2
        arg = w * np.asarray(t, dtype=float)
        sech = 1.0 / np.cosh(arg)
        q = sigma * (w / math.sqrt(self.beta)) * sech
        p = -w * q * np.tanh(arg)
        c = math.sqrt(2.0 * w)
        zero = np.zeros_like(q)
        return np.stack([zero, (w * q - p) / c, zero, (w * q + p) / c], axis=-1)


def _check_rates(case_tag, lambda1, lambda2):
    try:
        lambda1 = float(lambda1)
        lambda2 = float(lambda2)
    except (TypeError, ValueError):
        raise ModelError(f'lambda1 and lambda2 must be real numbers, got {lambda1!r}, {lambda2!r}')
    if case_tag is None:
        case_tag = classify_case(lambda1, lambda2)
    try:
        case_tag = CaseTag(case_tag)
    except ValueError:
        raise ModelError(f'Unknown case_tag "{case_tag}"')
    return Eigendata(lambda1, lambda2, case_tag)


class ModelManager:
    """
    Builders for the model kinds.

    Methods
    -------
    build_global_model(case_tag, lambda1, lambda2, coupling=None, delta_scale=None)
        Single-loop Hamiltonian model with a sech^2 planar core.
    build_local_normal_form(case_tag, lambda1, lambda2, nonlinear_coeffs=None, delta_scale=0.1)
        Polynomial normal form near the saddle.
    build_figure_eight_model(lambda1, lambda2, coupling=None, asymmetry=0.0, delta_scale=None)
        Hamiltonian model with a Duffing planar core and two loops.
    build_cnlse_model(alpha, beta, omega1, omega2, delta_scale=None)
        Steady-state reduction of coupled Schrodinger equations.
    """
    # Named couplings of the single-loop model; everything else is read as a monomial.
    GLOBAL_NAMED = {
        'k1': U1 ** 2 * V2,
        'k2': V1 ** 2 * U2,
        'k3': U1 * V1 * (U2 + V2),
    }
    FIGURE_EIGHT_NAMED = {
        'k1': U1 ** 2 * (U2 + V2) ** 2,
        'k2': V1 ** 2 * (U2 + V2) ** 2,
        'k3': U1 * V1 * (U2 + V2) ** 2,
    }

    def __init__(self):
        self.checked_defaults = {}

    def _check_default_coupling(self, model):
        """
        Measure T^glo at h = 0 on every loop of a model built with the default
        couplings; b, c and d must not vanish.

        Raises
        ------
        ModelError
            If the default couplings give a degenerate global map.
        """
        key = (model.kind, model.eigen.lambda1, model.eigen.lambda2, model.delta_scale, model.coupling)
        if key in self.checked_defaults:
            return self.checked_defaults[key]
        coeffs = []
        for sigma in model.loops:
            try:
                measured = global_map_coeffs(model, 0.0, sigma=sigma)
            except DegenerateJacobian as exc:
                raise ModelError(f'Default coupling of {model.name} gives a degenerate global map: {exc}')
            if measured.flags:
                raise ModelError(f'Default coupling of {model.name}: {"; ".join(measured.flags)}',
                                 coeffs=measured.to_dict())
            coeffs.append(measured)
        for c in coeffs:
            logger.info(f'Default coupling of {model.name}, loop {c.sigma:+d}: '
                        f'a={c.a:.6g} b={c.b:.6g} c={c.c:.6g} d={c.d:.6g}')
        self.checked_defaults[key] = tuple(coeffs)
        return self.checked_defaults[key]

    def _coupling_terms(self, coupling, named, default):
        """
        Resolve named or monomial couplings into a polynomial.

        Raises
        ------
        SymmetryViolation
            If a term is odd in (u1, v1).
        ModelError
            If a coefficient is not finite or a term would change the planar core
            or the linear part.
        """
        if coupling is None:
            coupling = dict(default)
        total = Polynomial()
        resolved = []
        for name in sorted(coupling):
            value = coupling[name]
            try:
                value = float(value)
            except (TypeError, ValueError):
                raise ModelError(f'Coupling {name} must be a real number, got {value!r}')
            if not math.isfinite(value):
                raise ModelError(f'Coupling {name} must be finite, got {value}')
            if name in named:
                term = named[name]
            else:
                try:
                    term = Polynomial({parse_monomial(name): 1.0})
                except ValueError as e:
                    raise ModelError(f'Invalid coupling name "{name}": {e}')
            for exps in term.terms:
                label = format_monomial(exps)
                if pair_degree(exps) % 2 == 1:
                    raise SymmetryViolation(
                        f'Coupling {name} ({label}) is odd in (u1, v1) and breaks the symmetry '
                        f'(u1, v1) -> (-u1, -v1)'
                    )
                if pair_degree(exps) == 0:
                    raise ModelError(
                        f'Coupling {name} ({label}) does not involve (u1, v1) and would change the planar core'
                    )
                if sum(exps) <= 2:
                    raise ModelError(f'Coupling {name} ({label}) would change the linear part at the saddle')
            total = total + term * value
            resolved.append((name, value))
        return total, tuple(resolved)

    def build_global_model(self, case_tag, lambda1, lambda2, coupling=None, delta_scale=None):
        """
        Build the single-loop Hamiltonian model.

        H = l1 u1 v1 - l2 u2 v2 + l2 (u2 + v2)^3 / (6 sqrt 2) + couplings.
        The invariant plane carries the loop x = 1.5 sech^2(l2 t / 2) with
        x = (u2 + v2)/sqrt 2. ``coupling=None`` selects the DEFAULT_COUPLING setting,
        whose global map is measured once per parameter set.

        Raises
        ------
        EigendataError, SymmetryViolation, ModelError
            On invalid rates or couplings.
        """
        eigen = _check_rates(case_tag, lambda1, lambda2)
        extra, resolved = self._coupling_terms(coupling, self.GLOBAL_NAMED, conf.get('DEFAULT_COUPLING'))
        l1, l2 = eigen.lambda1, eigen.lambda2
        hamiltonian = l1 * U1 * V1 - l2 * U2 * V2 + (l2 / (6.0 * ROOT2)) * (U2 + V2) ** 3 + extra
        model = ModelSpec(
            eigen=eigen,
            field=HamiltonianField(hamiltonian),
            first_integral=FirstIntegral(hamiltonian, scale=l2),
            kind=ModelKind.GLOBAL_HAMILTONIAN,
            coupling=resolved,
            delta_scale=0.1 if delta_scale is None else float(delta_scale),
            loops=(1,),
            loop_extent=1.5,
            homoclinic=QuadraticLoop(l2),
            name=f'global-{eigen.case_tag.value}-{l1:g}-{l2:g}',
            extras={'hamiltonian': hamiltonian.to_strings()},
        )
        logger.info(f'Built model {model.name} with coupling {dict(resolved)}')
        if coupling is None:
            self._check_default_coupling(model)
        return model

    def build_figure_eight_model(self, lambda1, lambda2, coupling=None, asymmetry=0.0, delta_scale=None):
        """
        Build the double-loop model with planar core V(x) = -x^2/2 + mu x^3/3 + x^4/4.

        ``asymmetry`` is mu; for mu = 0 the loops are x = +-sqrt 2 sech(l2 t).
        """
        eigen = _check_rates(None, lambda1, lambda2)
        extra, resolved = self._coupling_terms(coupling, self.FIGURE_EIGHT_NAMED, conf.get('FIGURE_EIGHT_COUPLING'))
        mu = float(asymmetry)
        if not math.isfinite(mu):
            raise ModelError(f'asymmetry must be finite, got {asymmetry}')
        l1, l2 = eigen.lambda1, eigen.lambda2
        s = U2 + V2
        hamiltonian = l1 * U1 * V1 - l2 * U2 * V2 + (l2 / 16.0) * s ** 4 + (mu * l2 / (6.0 * ROOT2)) * s ** 3 + extra
        # Turning points of the two lobes: x^2 + (4 mu / 3) x - 2 = 0.
        roots = np.roots([1.0, 4.0 * mu / 3.0, -2.0])
        model = ModelSpec(
            eigen=eigen,
            field=HamiltonianField(hamiltonian),
            first_integral=FirstIntegral(hamiltonian, scale=l2),
            kind=ModelKind.FIGURE_EIGHT,
            coupling=resolved + (('asymmetry', mu),),
            delta_scale=0.1 if delta_scale is None else float(delta_scale),
            loops=(1, -1),
            loop_extent=float(np.max(np.abs(roots))),
            homoclinic=DuffingLoop(l2) if mu == 0.0 else None,
            name=f'figure8-{eigen.case_tag.value}-{l1:g}-{l2:g}',
            extras={'hamiltonian': hamiltonian.to_strings(), 'lobe_extent': sorted(float(r) for r in roots)},
        )
        logger.info(f'Built model {model.name} with coupling {dict(resolved)} and asymmetry {mu}')
        if coupling is None:
            self._check_default_coupling(model)
        return model

    def build_cnlse_model(self, alpha, beta, omega1, omega2, delta_scale=None):
        """
        Steady-state reduction psi'' = w1^2 psi - 2(alpha psi^2 + phi^2) psi,
        phi'' = w2^2 phi - 2(psi^2 + beta phi^2) phi in eigen-coordinates.

        Exploratory: nothing guarantees the loops are nondegenerate for every
        parameter set.
        """
        try:
            alpha, beta, omega1, omega2 = (float(v) for v in (alpha, beta, omega1, omega2))
        except (TypeError, ValueError):
            raise ModelError('alpha, beta, omega1 and omega2 must be real numbers')
        if not all(math.isfinite(v) for v in (alpha, beta, omega1, omega2)):
            raise ModelError('alpha, beta, omega1 and omega2 must be finite')
        if beta <= 0.0:
            raise ModelError(f'beta must be positive for the loops to exist, got {beta}')
        eigen = _check_rates(None, omega1, omega2)
        c1 = math.sqrt(2.0 * omega1)
        c2 = math.sqrt(2.0 * omega2)
        q1 = (c1 / (2.0 * omega1)) * (U1 - V1)
        p1 = (-c1 / 2.0) * (U1 + V1)
        q2 = (c2 / (2.0 * omega2)) * (U2 + V2)
        p2 = (c2 / 2.0) * (V2 - U2)
        hamiltonian = (
            0.5 * (p1 ** 2 + p2 ** 2)
            - 0.5 * omega1 ** 2 * q1 ** 2
            - 0.5 * omega2 ** 2 * q2 ** 2
            + 0.5 * (alpha * q1 ** 4 + beta * q2 ** 4)
            + q1 ** 2 * q2 ** 2
        )
        model = ModelSpec(
            eigen=eigen,
            field=HamiltonianField(hamiltonian),
            first_integral=FirstIntegral(hamiltonian, scale=omega2),
            kind=ModelKind.CNLSE_REDUCTION,
            coupling=(('alpha', alpha), ('beta', beta), ('omega1', omega1), ('omega2', omega2)),
            delta_scale=0.1 if delta_scale is None else float(delta_scale),
            loops=(1, -1),
            loop_extent=omega2 ** 1.5 / math.sqrt(beta),
            homoclinic=CnlseLoop(omega2, beta),
            name=f'cnlse-{alpha:g}-{beta:g}-{omega1:g}-{omega2:g}',
            extras={'hamiltonian': hamiltonian.to_strings()},
        )
        logger.info(f'Built model {model.name}')
        return model

    def _parse_slots(self, nonlinear_coeffs):
        slots = {}
        for name, value in (nonlinear_coeffs or {}).items():
            if name not in NORMAL_FORM_SLOTS:
                raise ModelError(f'Unknown coefficient slot "{name}"; expected one of {", ".join(NORMAL_FORM_SLOTS)}')
            if isinstance(value, Polynomial):
                poly = value
            else:
                try:
                    poly = Polynomial.from_strings(value)
                except (ValueError, TypeError, AttributeError) as e:
                    raise ModelError(f'Invalid coefficients for slot {name}: {e}')
            if not all(math.isfinite(c) for c in poly.terms.values()):
                raise ModelError(f'Coefficients of slot {name} must be finite')
            slots[name] = poly
        return {name: slots.get(name, Polynomial()) for name in NORMAL_FORM_SLOTS}

    def _validate_slots(self, case_tag, slots):
        """
        Check the slot monomials against the identities of the case.

        A monomial vanishes on {x_i = 0 for i in Z} exactly when it contains one of
        the variables in Z, so every identity is decided term by term.
        """
        groups = applicable_identities(case_tag)
        for label, slot, zeros in groups['plane']:
            for exps in slots[slot].terms:
                if not any(exps[i] for i in zeros):
                    raise IdentityViolation(
                        f'Coefficients violate "{label}": term {format_monomial(exps)} of {slot} '
                        f'is constant in (u1, v1)'
                    )
        for name, poly in slots.items():
            if (0, 0, 0, 0) in poly.terms:
                raise IdentityViolation(f'{name}(0) = 0 is violated: slot {name} has a constant term')
        for name, poly in slots.items():
            want_even = name in EVEN_SLOTS
            for exps in poly.terms:
                if (pair_degree(exps) % 2 == 0) != want_even:
                    raise SymmetryViolation(
                        f'Term {format_monomial(exps)} of {name} breaks the symmetry (u1, v1) -> (-u1, -v1); '
                        f'{name} must be {"even" if want_even else "odd"} in (u1, v1)'
                    )
        for label, slot in BEYOND2_IDENTITIES if groups['absent'] else ():
            if not slots[slot].is_zero():
                raise IdentityViolation(f'Coefficients violate "{label}" required in the Beyond2 case')
        for label, slot, index in groups['arguments']:
            for exps in slots[slot].terms:
                if exps[index]:
                    raise IdentityViolation(f'Coefficients violate "{label}": term {format_monomial(exps)} of {slot}')
        for label, slot, zeros in groups['subspace']:
            for exps in slots[slot].terms:
                if not any(exps[i] for i in zeros):
                    raise IdentityViolation(f'Coefficients violate "{label}": term {format_monomial(exps)} of {slot}')

    def build_local_normal_form(self, case_tag, lambda1, lambda2, nonlinear_coeffs=None, delta_scale=0.1):
        """
        Build a polynomial normal form near the saddle.

        Parameters
        ----------
        case_tag : str or CaseTag
        lambda1, lambda2 : float
        nonlinear_coeffs : dict, optional
            ``{slot: {monomial: coefficient}}`` for the slots f11 ... g22, or
            ``{slot: Polynomial}``. Missing slots are zero.
        delta_scale : float
            Box size used for sampling and sections.

        Returns
        -------
        ModelSpec
            With ``first_integral`` set to gamma*u1*v1 - u2*v2 only if the
            assembled system conserves it on samples.

        Raises
        ------
        IdentityViolation, SymmetryViolation
            If a coefficient set breaks an identity that applies to the case.
        """
        eigen = _check_rates(case_tag, lambda1, lambda2)
        slots = self._parse_slots(nonlinear_coeffs)
        self._validate_slots(eigen.case_tag, slots)
        field = NormalFormField(eigen.linear_rates(), slots)
        delta_scale = float(delta_scale)
        integral = FirstIntegral(eigen.gamma * U1 * V1 - U2 * V2)
        conserved = _conserves(field, integral, delta_scale)
        model = ModelSpec(
            eigen=eigen,
            field=field,
            first_integral=integral if conserved else None,
            kind=ModelKind.LOCAL_NORMAL_FORM,
            coupling=tuple(
                (f'{slot}.{monomial}', coeff)
                for slot in NORMAL_FORM_SLOTS
                for monomial, coeff in slots[slot].to_strings().items()
            ),
            delta_scale=delta_scale,
            slots=slots,
            name=f'normal-form-{eigen.case_tag.value}-{eigen.lambda1:g}-{eigen.lambda2:g}',
        )
        logger.info(f'Built model {model.name} (conserves quadratic integral: {conserved})')
        return model


def _conserves(field, integral, delta, n_samples=256):
    rng = np.random.default_rng(12345)
    points = rng.uniform(-delta, delta, size=(n_samples, 4))
    values = field(points)
    grads = integral.gradient(points)
    dots = np.abs(np.sum(values * grads, axis=1))
    scale = np.linalg.norm(values, axis=1) * np.linalg.norm(grads, axis=1)
    return bool(np.all(dots <= 1e-12 * np.maximum(scale, 1e-300)))


model_manager = ModelManager()

build_global_model = model_manager.build_global_model
build_local_normal_form = model_manager.build_local_normal_form
build_figure_eight_model = model_manager.build_figure_eight_model
build_cnlse_model = model_manager.build_cnlse_model
