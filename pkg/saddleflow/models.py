"""
Module for the domain types of the saddleflow app.

A ``ModelSpec`` bundles a 4D vector field with a saddle at the origin, its first
integral (for conservative kinds), eigenvalue data and the structure every other
module relies on: the Z2 symmetry S = diag(-1, 1, -1, 1) and the invariant plane
{u1 = v1 = 0} that carries the homoclinic loop(s).

Phase points are ordered (u1, u2, v1, v2) everywhere, both in ``PhaseState`` and
in the plain numpy arrays used inside the integrators.

Classes:
    CaseTag, ModelKind: enumerations of eigenvalue cases and model families.
    Eigendata: the rates lambda1 <= lambda2 and their case.
    PhaseState: one phase point with an optional time stamp.
    HamiltonianField, NormalFormField, ReversedField: picklable vector fields.
    FirstIntegral, ReversedIntegral: first integrals with analytic gradients.
    ModelSpec: the immutable model consumed by every operation.
    StructureReport: result of ``check_structure``.
"""
import logging
import math
from dataclasses import dataclass, field as dataclass_field
from enum import Enum

import numpy as np

from .exceptions import EigendataError
from .polynomials import CompiledPolynomials, Polynomial

logger = logging.getLogger(__name__)

SYMMETRY = np.array([-1.0, 1.0, -1.0, 1.0])
# (u1, u2, v1, v2) -> (v1, v2, u1, u2)
SWAP = np.array([2, 3, 0, 1])

NORMAL_FORM_SLOTS = ('f11', 'f12', 'f21', 'f22', 'g11', 'g12', 'g21', 'g22')


class CaseTag(str, Enum):
    EQUAL = 'Equal'
    BETWEEN = 'Between'
    RESONANT2 = 'Resonant2'
    BEYOND2 = 'Beyond2'


class ModelKind(str, Enum):
    GLOBAL_HAMILTONIAN = 'GlobalHamiltonian'
    LOCAL_NORMAL_FORM = 'LocalNormalForm'
    FIGURE_EIGHT = 'FigureEight'
    CNLSE_REDUCTION = 'CnlseReduction'


def classify_case(lambda1, lambda2, rel_tol=1e-12):
    """Eigenvalue case of the pair lambda1 <= lambda2."""
    if math.isclose(lambda1, lambda2, rel_tol=rel_tol):
        return CaseTag.EQUAL
    if math.isclose(lambda2, 2.0 * lambda1, rel_tol=rel_tol):
        return CaseTag.RESONANT2
    if lambda2 < 2.0 * lambda1:
        return CaseTag.BETWEEN
    return CaseTag.BEYOND2


@dataclass(frozen=True)
class Eigendata:
    """
    Rates of the saddle and their case.

    Attributes:
        lambda1 (float): leading rate, 0 < lambda1 <= lambda2.
        lambda2 (float): nonleading rate.
        case_tag (CaseTag): Equal, Between, Resonant2 or Beyond2.
    """
    lambda1: float
    lambda2: float
    case_tag: CaseTag

    def __post_init__(self):
        if not (math.isfinite(self.lambda1) and math.isfinite(self.lambda2)):
            raise EigendataError('lambda1 and lambda2 must be finite')
        if not 0.0 < self.lambda1 <= self.lambda2 * (1.0 + 1e-12):
            raise EigendataError(
                f'Eigenvalues must satisfy 0 < lambda1 <= lambda2, got {self.lambda1}, {self.lambda2}'
            )
        tag = CaseTag(self.case_tag)
        object.__setattr__(self, 'case_tag', tag)
        expected = classify_case(self.lambda1, self.lambda2)
        if tag is not expected:
            raise EigendataError(
                f'case_tag {tag.value} is inconsistent with lambda1={self.lambda1}, '
                f'lambda2={self.lambda2} (expected {expected.value})'
            )

    @property
    def gamma(self):
        return self.lambda1 / self.lambda2

    def linear_rates(self):
        return np.array([-self.lambda1, -self.lambda2, self.lambda1, self.lambda2])


@dataclass(frozen=True)
class PhaseState:
    u1: float
    u2: float
    v1: float
    v2: float
    t: float = None

    def __post_init__(self):
        if not all(math.isfinite(c) for c in (self.u1, self.u2, self.v1, self.v2)):
            raise ValueError(f'PhaseState components must be finite: {self}')

    @classmethod
    def from_array(cls, x, t=None):
        return cls(float(x[0]), float(x[1]), float(x[2]), float(x[3]), t=None if t is None else float(t))

    @property
    def array(self):
        return np.array([self.u1, self.u2, self.v1, self.v2])

    def reflect(self):
        """Image under the symmetry S."""
        return PhaseState(-self.u1, self.u2, -self.v1, self.v2, t=self.t)


class HamiltonianField:
    """
    Field of a polynomial H with the pairing
    du1/dt = -dH/dv1, dv1/dt = dH/du1, du2/dt = dH/dv2, dv2/dt = -dH/du2.
    """

    def __init__(self, hamiltonian):
        self.hamiltonian = hamiltonian
        self._gradient = CompiledPolynomials(hamiltonian.gradient())

    def __call__(self, x):
        g = self._gradient(x)
        if g.ndim == 1:
            return np.array([-g[2], g[3], g[0], -g[1]])
        return np.stack([-g[:, 2], g[:, 3], g[:, 0], -g[:, 1]], axis=1)


class FirstIntegral:
    """A polynomial first integral divided by ``scale`` (levels are measured in these units)."""

    def __init__(self, polynomial, scale=1.0):
        self.polynomial = polynomial
        self.scale = float(scale)
        self._value = CompiledPolynomials([polynomial])
        self._gradient = CompiledPolynomials(polynomial.gradient())

    def __call__(self, x):
        value = self._value(x) / self.scale
        return float(value[0]) if value.ndim == 1 else value[:, 0]

    def gradient(self, x):
        return self._gradient(x) / self.scale


class NormalFormField:
    """
    Polynomial normal form
    du1/dt = -l1 u1 + f11 u1 + f12 u2,  du2/dt = -l2 u2 + f21 u1 + f22 u2,
    dv1/dt =  l1 v1 + g11 v1 + g12 v2,  dv2/dt =  l2 v2 + g21 v1 + g22 v2.
    """

    def __init__(self, rates, slots):
        self.rates = np.asarray(rates, dtype=float)
        self.slots = {name: slots.get(name, Polynomial()) for name in NORMAL_FORM_SLOTS}
        self._slots = CompiledPolynomials([self.slots[name] for name in NORMAL_FORM_SLOTS])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        f11, f12, f21, f22, g11, g12, g21, g22 = np.moveaxis(np.atleast_2d(self._slots(x)), -1, 0)
        u1, u2, v1, v2 = np.moveaxis(np.atleast_2d(x), -1, 0)
        out = np.stack([
            f11 * u1 + f12 * u2,
            f21 * u1 + f22 * u2,
            g11 * v1 + g12 * v2,
            g21 * v1 + g22 * v2,
        ], axis=-1) + self.rates * np.atleast_2d(x)
        return out[0] if x.ndim == 1 else out


class ReversedField:
    """Field of t -> -t composed with the swap (u1, u2, v1, v2) -> (v1, v2, u1, u2)."""

    def __init__(self, base):
        self.base = base

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        return -self.base(z[..., SWAP])[..., SWAP]


class ReversedIntegral:
    def __init__(self, base):
        self.base = base

    def __call__(self, z):
        return self.base(np.asarray(z, dtype=float)[..., SWAP])

    def gradient(self, z):
        return self.base.gradient(np.asarray(z, dtype=float)[..., SWAP])[..., SWAP]


class ReversedLoop:
    def __init__(self, base):
        self.base = base

    def __call__(self, t, sigma=1):
        return self.base(-np.asarray(t, dtype=float), sigma)[..., SWAP]


@dataclass(frozen=True)
class ModelSpec:
    """
    Immutable model description shared by every operation.

    Attributes:
        eigen (Eigendata): rates and case of the saddle.
        field (callable): maps a state array (4,) or batch (n, 4) to its velocity.
        first_integral (FirstIntegral or None): normalized so that its quadratic
            part is gamma*u1*v1 - u2*v2; None for non-conservative normal forms.
        kind (ModelKind): model family.
        coupling (tuple): named coupling coefficients as (name, value) pairs.
        delta_scale (float): suggested section distance delta.
        loops (tuple): available loop signs, (1,) or (1, -1).
        loop_extent (float): largest |x| reached by the planar loop(s).
        slots (dict or None): normal-form coefficient polynomials.
        homoclinic (callable or None): closed-form planar loop t -> state.
        reversed_time (bool): True for a reverse_time_view of another model.
        name (str): identifier used in reports.
    """
    eigen: Eigendata
    field: object
    first_integral: object
    kind: ModelKind
    coupling: tuple = ()
    delta_scale: float = 0.1
    loops: tuple = (1,)
    loop_extent: float = None
    slots: dict = None
    homoclinic: object = None
    reversed_time: bool = False
    name: str = 'model'
    extras: dict = dataclass_field(default_factory=dict)

    @property
    def is_conservative(self):
        return self.first_integral is not None

    @property
    def model_id(self):
        return self.name

    def velocity(self, state):
        """Field at a PhaseState, returned as a PhaseState of derivatives."""
        return PhaseState.from_array(self.field(state.array), t=state.t)

    def energy(self, x):
        if self.first_integral is None:
            raise ValueError(f'Model {self.name} has no first integral')
        return self.first_integral(np.asarray(x, dtype=float))

    def describe(self):
        return {
            'name': self.name,
            'kind': ModelKind(self.kind).value,
            'case_tag': self.eigen.case_tag.value,
            'lambda1': self.eigen.lambda1,
            'lambda2': self.eigen.lambda2,
            'coupling': {k: v for k, v in self.coupling},
            'delta_scale': self.delta_scale,
            'loops': list(self.loops),
            'conservative': self.is_conservative,
            'reversed_time': self.reversed_time,
        }


# Identities the coefficient slots obey. Each entry is (label, slot, indices that
# are set to zero); the label is the identity as it is quoted in error messages.
PLANE_IDENTITIES = (
    ('f12(0,u2,0,v2) = 0', 'f12', (0, 2)),
    ('g12(0,u2,0,v2) = 0', 'g12', (0, 2)),
)
SUBSPACE_IDENTITIES = (
    ('f11(0,v) = 0', 'f11', (0,)),
    ('f11(u1,0) = 0', 'f11', (2, 3)),
    ('f12(u,0) = 0', 'f12', (2, 3)),
    ('f21(0,v) = 0', 'f21', (0,)),
    ('f22(0,v) = 0', 'f22', (0, 1)),
    ('g11(u,0) = 0', 'g11', (2,)),
    ('g11(0,v1) = 0', 'g11', (0, 1)),
    ('g12(0,v) = 0', 'g12', (0, 1)),
    ('g21(u,0) = 0', 'g21', (2,)),
    ('g22(u,0) = 0', 'g22', (2, 3)),
)
# Slots whose arguments exclude one coordinate: f11(u1, v), f21(u1, v), g11(u, v1), g21(u, v1).
ARGUMENT_IDENTITIES = (
    ('f11 independent of u2', 'f11', 1),
    ('f21 independent of u2', 'f21', 1),
    ('g11 independent of v2', 'g11', 3),
    ('g21 independent of v2', 'g21', 3),
)
BEYOND2_IDENTITIES = (
    ('f21 = 0', 'f21'),
    ('g21 = 0', 'g21'),
)
EVEN_SLOTS = ('f11', 'f22', 'g11', 'g22')


def applicable_identities(case_tag):
    """Identity groups that apply to a normal form of the given case."""
    case_tag = CaseTag(case_tag)
    groups = {'plane': PLANE_IDENTITIES, 'subspace': (), 'arguments': (), 'absent': ()}
    if case_tag is not CaseTag.EQUAL:
        groups['subspace'] = SUBSPACE_IDENTITIES
        groups['arguments'] = ARGUMENT_IDENTITIES
    if case_tag is CaseTag.BEYOND2:
        groups['absent'] = BEYOND2_IDENTITIES
    return groups


@dataclass
class StructureReport:
    """Maximal violations found by ``check_structure``; ``None`` marks a check that does not apply."""
    model_id: str
    n_samples: int
    tol: float
    origin_field: float
    jacobian_error: float
    equivariance: float
    invariant_plane: float
    identities: dict
    conservation: float = None
    quadratic_part: float = None
    homoclinic_residual: float = None

    def violations(self):
        items = {
            'origin_field': self.origin_field,
            'jacobian_error': self.jacobian_error,
            'equivariance': self.equivariance,
            'invariant_plane': self.invariant_plane,
            'conservation': self.conservation,
            'quadratic_part': self.quadratic_part,
            'homoclinic_residual': self.homoclinic_residual,
        }
        items.update({f'identity: {k}': v for k, v in self.identities.items()})
        return {k: v for k, v in items.items() if v is not None}

    def failed(self):
        # The quadratic part comes from a finite-difference Hessian, the loop
        # residual from a five-point derivative; both get their own floors.
        floors = {'quadratic_part': 1e-6, 'homoclinic_residual': 1e-8}
        return sorted(
            name for name, value in self.violations().items()
            if not value <= max(self.tol, floors.get(name, 0.0))
        )

    @property
    def passed(self):
        return not self.failed()

    def to_dict(self):
        return {
            'model_id': self.model_id,
            'n_samples': self.n_samples,
            'tol': self.tol,
            'violations': self.violations(),
            'failed': self.failed(),
            'passed': self.passed,
        }


def _jacobian(fun, x, step):
    x = np.asarray(x, dtype=float)
    columns = []
    for i in range(4):
        e = np.zeros(4)
        e[i] = step
        columns.append((fun(x + e) - fun(x - e)) / (2.0 * step))
    return np.column_stack(columns)


def _hessian(fun, step):
    hess = np.zeros((4, 4))
    for i in range(4):
        for j in range(4):
            ei = np.zeros(4)
            ej = np.zeros(4)
            ei[i] = step
            ej[j] = step
            hess[i, j] = (fun(ei + ej) - fun(ei - ej) - fun(-ei + ej) + fun(-ei - ej)) / (4.0 * step * step)
    return hess


def _slot_violation(slot, points, zero_indices):
    restricted = np.array(points, copy=True)
    restricted[:, list(zero_indices)] = 0.0
    return float(np.max(np.abs(slot(restricted))))


def check_structure(model, n_samples=1000, tol=1e-10, seed=0):
    """
    Sample the box of radius ``model.delta_scale`` and report structural violations.

    Parameters
    ----------
    model : ModelSpec
        The model to audit.
    n_samples : int
        Number of random samples; raised to 100 when smaller.
    tol : float
        Tolerance recorded in the report and used by ``StructureReport.passed``.
    seed : int
        Seed of the sampling generator; fixed so that reports are reproducible.

    Returns
    -------
    StructureReport
        Maximal violation of each applicable property. Nothing is raised.
    """
    if n_samples < 100:
        logger.warning(f'check_structure uses 100 samples instead of {n_samples}')
        n_samples = 100
    rng = np.random.default_rng(seed)
    delta = model.delta_scale
    points = rng.uniform(-delta, delta, size=(n_samples, 4))

    values = model.field(points)
    reflected = model.field(points * SYMMETRY)
    equivariance = float(np.max(np.abs(reflected - SYMMETRY * values)))

    plane = np.array(points, copy=True)
    plane[:, [0, 2]] = 0.0
    plane_values = model.field(plane)
    invariant_plane = float(np.max(np.abs(plane_values[:, [0, 2]])))

    origin_field = float(np.max(np.abs(model.field(np.zeros(4)))))
    jacobian = _jacobian(model.field, np.zeros(4), 1e-6)
    jacobian_error = float(np.max(np.abs(jacobian - np.diag(model.eigen.linear_rates()))))

    identities = {}
    if model.slots is not None:
        groups = applicable_identities(model.eigen.case_tag)
        for label, slot, zeros in groups['plane'] + groups['subspace']:
            identities[label] = _slot_violation(model.slots[slot], points, zeros)
        for label, slot, index in groups['arguments']:
            shifted = np.array(points, copy=True)
            shifted[:, index] = rng.uniform(-delta, delta, size=n_samples)
            poly = model.slots[slot]
            identities[label] = float(np.max(np.abs(poly(shifted) - poly(points))))
        for label, slot in groups['absent']:
            identities[label] = float(np.max(np.abs(model.slots[slot](points))))

    conservation = None
    quadratic_part = None
    if model.is_conservative:
        grads = model.first_integral.gradient(points)
        dots = np.abs(np.sum(grads * values, axis=1))
        conservation = float(np.max(dots / (1.0 + np.sum(points ** 2, axis=1))))
        target = np.zeros((4, 4))
        target[0, 2] = target[2, 0] = model.eigen.gamma
        target[1, 3] = target[3, 1] = -1.0
        hessian = _hessian(model.first_integral, 1e-4)
        quadratic_part = float(np.max(np.abs(hessian - target)))

    homoclinic_residual = None
    if model.homoclinic is not None:
        homoclinic_residual = homoclinic_defect(model)

    report = StructureReport(
        model_id=model.name,
        n_samples=n_samples,
        tol=tol,
        origin_field=origin_field,
        jacobian_error=jacobian_error,
        equivariance=equivariance,
        invariant_plane=invariant_plane,
        identities=identities,
        conservation=conservation,
        quadratic_part=quadratic_part,
        homoclinic_residual=homoclinic_residual,
    )
    logger.info(f'Structure check of {model.name}: failed={report.failed()}')
    return report


def homoclinic_defect(model, t_min=-20.0, t_max=20.0, n=801, step=1e-3):
    """Max |dx/dt - field(x)| of the closed-form loop(s), derivative by a five-point stencil."""
    times = np.linspace(t_min, t_max, n)
    worst = 0.0
    for sigma in model.loops:
        def loop(t):
            return model.homoclinic(t, sigma)
        derivative = (
            -loop(times + 2 * step) + 8 * loop(times + step) - 8 * loop(times - step) + loop(times - 2 * step)
        ) / (12.0 * step)
        worst = max(worst, float(np.max(np.abs(derivative - model.field(loop(times))))))
    return worst
