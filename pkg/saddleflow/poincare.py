"""
Section charts, local and global passage maps and the return map.

Points on Pi^in(h) = {u2 = sigma*delta, H = h} and Pi^out(h) = {v2 = sigma*delta,
H = h} are charted by (u1, v1); the remaining coordinate is recovered by a 1D
Newton solve on the first integral. The return map is T = T^glo o T^loc, and
its inverse is computed on the time-reversed model instead of by numerical
inversion.
"""
import logging
import math
from dataclasses import dataclass, field as dataclass_field, replace
from enum import Enum

import numpy as np
from scipy.optimize import newton

from . import conf
from .exceptions import (
    ChartSingular, DegenerateJacobian, Escaped, ModelError, NewtonDiverged, NoCrossing, SaddleflowError,
    TangentialCrossing,
)
from .flow import SectionDescriptor, SectionKind, cross_sections, neighborhood_bound, parallel_map
from .models import SWAP, CaseTag, PhaseState, ReversedField, ReversedIntegral, ReversedLoop

logger = logging.getLogger(__name__)

REVERSED_SUFFIX = '-reversed'


@dataclass(frozen=True)
class SectionPoint:
    """
    A chart point (u1, v1) on a section slice together with its lift.

    ``h`` is None for points of models without a first integral; their lift is
    the integrated state itself.
    """
    h: float
    desc: SectionDescriptor
    u1: float
    v1: float
    lifted: PhaseState

    @classmethod
    def from_state(cls, desc, x, h=None, t=None):
        x = np.array(x.array if isinstance(x, PhaseState) else x, dtype=float)
        x[desc.index] = desc.level
        return cls(h, desc, float(x[0]), float(x[2]), PhaseState.from_array(x, t))

    @property
    def chart(self):
        return np.array([self.u1, self.v1])

    @property
    def norm(self):
        return math.hypot(self.u1, self.v1)

    def swapped(self, desc):
        """The same phase point seen in swapped coordinates, charted on ``desc``."""
        z = self.lifted.array[SWAP]
        return SectionPoint(self.h, desc, float(z[0]), float(z[2]), PhaseState.from_array(z, self.lifted.t))


class OutcomeTag(str, Enum):
    HIT = 'Hit'
    ESCAPED_LOCAL = 'EscapedLocal'
    ESCAPED_GLOBAL = 'EscapedGlobal'
    WRONG_SIDE = 'WrongSide'


@dataclass(frozen=True)
class ReturnOutcome:
    """
    Result of a map evaluation.

    Attributes:
        tag (OutcomeTag): Hit or the kind of escape.
        point (SectionPoint): image for Hit; the offending exit for WrongSide.
        tau (float): local flight time (positive for Hit).
        reason (str): why the orbit escaped.
        itinerary (tuple): loop signs of the sections visited, in order.
        exit_point (SectionPoint): the Out-section point of a composed map.
        t_global (float): duration of the global passage.
    """
    tag: OutcomeTag
    point: SectionPoint = None
    tau: float = None
    reason: str = None
    itinerary: tuple = ()
    exit_point: SectionPoint = None
    t_global: float = None

    @property
    def hit(self):
        return self.tag is OutcomeTag.HIT

    @property
    def chart(self):
        return None if self.point is None else self.point.chart


@dataclass(frozen=True)
class GlobalCoeffs:
    """Differential [[a, b], [c, d]] of T^glo at M^out(h) in (u1, v1) charts."""
    h: float
    a: float
    b: float
    c: float
    d: float
    sigma: int = 1
    flags: tuple = ()

    @property
    def matrix(self):
        return np.array([[self.a, self.b], [self.c, self.d]])

    @property
    def det(self):
        return self.a * self.d - self.b * self.c

    @property
    def slope(self):
        """Limit slope of images of D2 points, d/b."""
        return self.d / self.b if self.b else math.inf

    def to_dict(self):
        return {
            'h': self.h, 'sigma': self.sigma, 'a': self.a, 'b': self.b, 'c': self.c, 'd': self.d,
            'det': self.det, 'flags': list(self.flags),
        }


def default_eps(delta):
    return conf.get('EPS_FACTOR') * delta


def _require_integral(model):
    if not model.is_conservative:
        raise ModelError(f'Model {model.name} has no first integral; section charts need one')


def lift_to_section(model, h, desc, u1, v1, eps=None):
    """
    Lift the chart point (u1, v1) to the slice {H = h} of ``desc``.

    The free coordinate (v2 on In, u2 on Out) is found by Newton's method seeded
    at (gamma*u1*v1 - h) / (sigma*delta), the value the quadratic part of H gives.

    Raises
    ------
    ChartSingular
        If dH along the free coordinate is below SOLVABILITY_THRESHOLD.
    NewtonDiverged
        If Newton fails to reach |H - h| <= CHART_TOL.
    """
    _require_integral(model)
    if eps is not None and math.hypot(u1, v1) > eps * (1.0 + 1e-12):
        raise ValueError(f'Chart point ({u1:g}, {v1:g}) lies outside the chart radius {eps:g}')
    integral = model.first_integral
    free = desc.free_index
    x = np.zeros(4)
    x[0], x[2], x[desc.index] = u1, v1, desc.level

    def residual(s):
        x[free] = s
        return integral(x) - h

    def slope(s):
        x[free] = s
        return integral.gradient(x)[free]

    threshold = conf.get('SOLVABILITY_THRESHOLD')
    seed = (model.eigen.gamma * u1 * v1 - h) / desc.level
    if abs(slope(seed)) < threshold:
        raise ChartSingular(f'Chart of {desc.which.value}{desc.sigma:+d} is singular at ({u1:g}, {v1:g})', seed=seed)
    root, info = newton(
        residual, seed, fprime=slope, tol=1e-16, maxiter=conf.get('NEWTON_MAX_ITER'),
        full_output=True, disp=False,
    )
    value = residual(root)
    if not math.isfinite(root) or abs(value) > conf.get('CHART_TOL'):
        raise NewtonDiverged(
            f'Lift of ({u1:g}, {v1:g}) to H={h:g} did not converge (|H-h|={abs(value):.3e})',
            iterations=info.iterations,
        )
    if abs(slope(root)) < threshold:
        raise ChartSingular(f'Chart of {desc.which.value}{desc.sigma:+d} is singular at ({u1:g}, {v1:g})', root=root)
    x[free] = root
    return SectionPoint(h, desc, float(u1), float(v1), PhaseState.from_array(x))


def _relift(model, point, state, desc, t):
    if point.h is None or not model.is_conservative:
        return SectionPoint.from_state(desc, state.array, t=t)
    lifted = lift_to_section(model, point.h, desc, state.u1, state.v1)
    return replace(lifted, lifted=replace(lifted.lifted, t=t))


def local_map(model, point_in, eps=None, t_max=None, sigma_out=None, tol=None):
    """
    Passage from an In-section point to the first Out-section crossing.

    Both Out+ and Out- are watched; leaving the box of ESCAPE_BOX_FACTOR*delta
    around the saddle ends the passage. Only an exit through Out_{sigma_out}
    (default: the loop sign of the In-section) within ``eps`` is a Hit.

    Returns
    -------
    ReturnOutcome
    """
    desc = point_in.desc
    if desc.which is not SectionKind.IN:
        raise ValueError('local_map starts on an In-section')
    eps = default_eps(desc.delta) if eps is None else eps
    sigma_out = desc.sigma if sigma_out is None else sigma_out
    sections = [SectionDescriptor.outward(desc.delta, 1), SectionDescriptor.outward(desc.delta, -1)]
    bound = conf.get('ESCAPE_BOX_FACTOR') * desc.delta
    try:
        crossing = cross_sections(model, point_in.lifted, sections, t_max=t_max, tol=tol, bound=bound)
    except Escaped as exc:
        return ReturnOutcome(OutcomeTag.ESCAPED_LOCAL, reason='box', tau=exc.t_exit, itinerary=(desc.sigma,))
    except NoCrossing:
        return ReturnOutcome(OutcomeTag.ESCAPED_LOCAL, reason='t_max', itinerary=(desc.sigma,))
    except TangentialCrossing:
        return ReturnOutcome(OutcomeTag.ESCAPED_LOCAL, reason='tangential', itinerary=(desc.sigma,))

    exit_desc = crossing.section
    itinerary = (desc.sigma, exit_desc.sigma)
    try:
        point = _relift(model, point_in, crossing.state, exit_desc, crossing.time)
    except SaddleflowError as exc:
        logger.debug(f'Re-lift on {exit_desc.describe()} failed: {exc}')
        return ReturnOutcome(OutcomeTag.ESCAPED_LOCAL, reason='chart', tau=crossing.time, itinerary=itinerary)
    if exit_desc.sigma != sigma_out:
        return ReturnOutcome(OutcomeTag.WRONG_SIDE, point=point, tau=crossing.time, reason='wrong side',
                             itinerary=itinerary)
    if point.norm > eps:
        return ReturnOutcome(OutcomeTag.ESCAPED_LOCAL, reason='beyond eps', tau=crossing.time,
                             itinerary=itinerary, exit_point=point)
    return ReturnOutcome(OutcomeTag.HIT, point=point, tau=crossing.time, itinerary=itinerary)


def loop_tube(model):
    """Radius in (u1, v1) of the tube around the loop used by the global map."""
    if not model.loop_extent:
        raise ModelError(f'Model {model.name} has no global loop')
    return conf.get('TUBE_FACTOR') * model.loop_extent


def global_map(model, point_out, t_max=None, tol=None):
    """
    Passage along the loop from Out_sigma to In_sigma.

    Reaching In_{-sigma} first, or leaving the loop tube, is an escape.

    Returns
    -------
    SectionPoint
        The image, with the passage time stored on its lifted state.

    Raises
    ------
    Escaped, NoCrossing, TangentialCrossing
    """
    desc = point_out.desc
    if desc.which is not SectionKind.OUT:
        raise ValueError('global_map starts on an Out-section')
    sigma = desc.sigma
    sections = [SectionDescriptor.inward(desc.delta, sigma), SectionDescriptor.inward(desc.delta, -sigma)]
    crossing = cross_sections(
        model, point_out.lifted, sections, t_max=t_max, tol=tol,
        bound=neighborhood_bound(model), tube=loop_tube(model),
    )
    if crossing.index == 1:
        raise Escaped(f'Global passage from Out{sigma:+d} reached In{-sigma:+d}', t_exit=crossing.time,
                      reason='other side')
    return _relift(model, point_out, crossing.state, crossing.section, crossing.time)


def global_passage(model, point_out, t_max=None, tol=None):
    """``global_map`` with escapes reported as a ReturnOutcome."""
    try:
        point = global_map(model, point_out, t_max=t_max, tol=tol)
    except Escaped as exc:
        return ReturnOutcome(OutcomeTag.ESCAPED_GLOBAL, reason=exc.detail.get('reason') or 'box')
    except NoCrossing:
        return ReturnOutcome(OutcomeTag.ESCAPED_GLOBAL, reason='t_max')
    except (TangentialCrossing, ChartSingular, NewtonDiverged) as exc:
        return ReturnOutcome(OutcomeTag.ESCAPED_GLOBAL, reason=type(exc).__name__)
    return ReturnOutcome(OutcomeTag.HIT, point=point, t_global=point.lifted.t,
                         itinerary=(point_out.desc.sigma, point.desc.sigma))


def _as_point(model, h, point, sigma, delta=None, which=SectionKind.IN):
    if isinstance(point, SectionPoint):
        return point
    delta = model.delta_scale if delta is None else delta
    u1, v1 = point
    return lift_to_section(model, h, SectionDescriptor(which, sigma, delta), u1, v1)


def return_map(model, h, point, eps=None, sigma=1, delta=None, tol=None):
    """
    T = T^glo o T^loc on Pi^in_sigma(h).

    ``point`` is a SectionPoint or a chart pair (u1, v1), lifted on the
    In-section at distance ``delta`` (default: the model's delta_scale).
    """
    point = _as_point(model, h, point, sigma, delta)
    local = local_map(model, point, eps=eps, tol=tol)
    if not local.hit:
        return local
    passage = global_passage(model, local.point, tol=tol)
    if not passage.hit:
        return replace(passage, tau=local.tau, exit_point=local.point, itinerary=local.itinerary)
    return ReturnOutcome(
        OutcomeTag.HIT, point=passage.point, tau=local.tau, itinerary=local.itinerary + (passage.point.desc.sigma,),
        exit_point=local.point, t_global=passage.t_global,
    )


def reverse_time_view(model):
    """
    The model under t -> -t composed with (u1, u2, v1, v2) -> (v1, v2, u1, u2).

    Applying it twice returns the original model.
    """
    if isinstance(model.field, ReversedField):
        base = model.extras.get('reversed_from')
        if base is not None:
            return base
    return replace(
        model,
        field=ReversedField(model.field),
        first_integral=None if model.first_integral is None else ReversedIntegral(model.first_integral),
        homoclinic=None if model.homoclinic is None else ReversedLoop(model.homoclinic),
        slots=None,
        reversed_time=not model.reversed_time,
        name=model.name + REVERSED_SUFFIX,
        extras={**model.extras, 'reversed_from': model},
    )


def inverse_return_map(model, h, point, eps=None, sigma=1, delta=None, tol=None):
    """
    T^{-1} on Pi^in_sigma(h), evaluated as J o (T^loc o T^glo of the reversed
    model) o J with J(u, v) = (v, u).
    """
    point = _as_point(model, h, point, sigma, delta)
    delta = point.desc.delta
    reversed_model = reverse_time_view(model)
    start = point.swapped(SectionDescriptor.outward(delta, sigma))
    passage = global_passage(reversed_model, start, tol=tol)
    if not passage.hit:
        return passage
    local = local_map(reversed_model, passage.point, eps=eps, tol=tol)
    if not local.hit:
        return replace(local, exit_point=passage.point.swapped(SectionDescriptor.outward(delta, sigma)))
    image = local.point.swapped(SectionDescriptor.inward(delta, sigma))
    return ReturnOutcome(
        OutcomeTag.HIT, point=image, tau=local.tau, itinerary=(sigma, sigma, sigma),
        exit_point=passage.point.swapped(SectionDescriptor.outward(delta, sigma)), t_global=passage.t_global,
    )


def _check_fd_step(fd_step):
    fd_step = conf.get('FD_STEP') if fd_step is None else fd_step
    if not 1e-7 <= fd_step <= 1e-3:
        raise ValueError(f'fd_step must lie in [1e-7, 1e-3], got {fd_step}')
    return fd_step


def fd_jacobian(function, center, step):
    """
    Central-difference Jacobian of a map R^2 -> R^2, Richardson-extrapolated
    from the steps ``step`` and ``step/2``.
    """
    center = np.asarray(center, dtype=float)

    def central(s):
        columns = []
        for k in range(2):
            e = np.zeros(2)
            e[k] = s
            columns.append((function(center + e) - function(center - e)) / (2.0 * s))
        return np.column_stack(columns)

    return (4.0 * central(step / 2.0) - central(step)) / 3.0


class _Unmapped(Exception):
    pass


def _chart_of(outcome):
    if not outcome.hit:
        raise _Unmapped(outcome.reason or outcome.tag.value)
    return outcome.chart


def _differentiate(function, center, step, what):
    try:
        return fd_jacobian(function, center, step)
    except (_Unmapped, SaddleflowError) as exc:
        raise DegenerateJacobian(f'{what} is undefined near {tuple(center)}: {exc}') from exc


def global_map_jacobian(model, h, point=(0.0, 0.0), sigma=1, fd_step=None, delta=None):
    step = _check_fd_step(fd_step)
    desc = SectionDescriptor.outward(model.delta_scale if delta is None else delta, sigma)

    def image(p):
        return global_map(model, lift_to_section(model, h, desc, p[0], p[1])).chart

    return _differentiate(image, point, step, 'T^glo')


def local_map_jacobian(model, h, point, sigma=1, fd_step=None, delta=None):
    step = _check_fd_step(fd_step)
    desc = SectionDescriptor.inward(model.delta_scale if delta is None else delta, sigma)

    def image(p):
        return _chart_of(local_map(model, lift_to_section(model, h, desc, p[0], p[1]), eps=math.inf))

    return _differentiate(image, point, step, 'T^loc')


def return_map_jacobian(model, h, point=(0.0, 0.0), sigma=1, fd_step=None, delta=None):
    """Direct finite-difference differential DT at ``point``."""
    step = _check_fd_step(fd_step)

    def image(p):
        return _chart_of(return_map(model, h, tuple(p), eps=math.inf, sigma=sigma, delta=delta))

    return _differentiate(image, point, step, 'T')


def chain_rule_jacobian(model, h, point=(0.0, 0.0), sigma=1, fd_step=None, delta=None):
    """DT as the product DT^glo(T^loc(p)) . DT^loc(p)."""
    local = return_map(model, h, tuple(point), eps=math.inf, sigma=sigma, delta=delta)
    if local.exit_point is None:
        raise DegenerateJacobian(f'T^loc is undefined at {tuple(point)}: {local.reason}')
    dl = local_map_jacobian(model, h, point, sigma=sigma, fd_step=fd_step, delta=delta)
    dg = global_map_jacobian(model, h, local.exit_point.chart, sigma=sigma, fd_step=fd_step, delta=delta)
    return dg @ dl


def global_map_coeffs(model, h, sigma=1, fd_step=None, delta=None):
    """
    Finite-difference coefficients a, b, c, d of T^glo at M^out(h).

    Raises
    ------
    DegenerateJacobian
        If ad - bc or d vanishes.
    """
    jacobian = global_map_jacobian(model, h, sigma=sigma, fd_step=fd_step, delta=delta)
    a, b, c, d = (float(v) for v in jacobian.ravel())
    scale = float(np.max(np.abs(jacobian)))
    if abs(a * d - b * c) <= 1e-12 * scale ** 2:
        raise DegenerateJacobian(f'T^glo of {model.name} is not a diffeomorphism at h={h:g}', det=a * d - b * c)
    if abs(d) <= 1e-9 * scale:
        raise DegenerateJacobian(f'T^glo of {model.name} is not transversal at h={h:g} (d = 0)', d=d)
    flags = []
    for name, value in (('b', b), ('c', c)):
        if abs(value) <= 1e-7 * scale:
            flags.append(f'{name} vanishes: cone hypotheses violated')
    if flags:
        logger.warning(f'Global coefficients of {model.name} at h={h:g}: {"; ".join(flags)}')
    return GlobalCoeffs(h, a, b, c, d, sigma, tuple(flags))


def coefficient_sweep(model, hs, sigma=1, fd_step=None):
    """
    Coefficients over a list of levels and the fitted continuity constant
    C = max |d(h) - d(0)| / |h|.
    """
    base = global_map_coeffs(model, 0.0, sigma=sigma, fd_step=fd_step)
    coeffs = [global_map_coeffs(model, h, sigma=sigma, fd_step=fd_step) for h in hs]
    ratios = [abs(c.d - base.d) / abs(c.h) for c in coeffs if c.h]
    return base, coeffs, max(ratios, default=0.0)


def global_map_taylor_check(model, h, coeffs, radii=(1e-3, 5e-4, 2.5e-4), n_angles=8, sigma=1):
    """
    Largest ||T^glo(p) - M p|| / ||p||^2 over points at the given radii.
    """
    desc = SectionDescriptor.outward(model.delta_scale, sigma)
    worst = 0.0
    for radius in radii:
        for k in range(n_angles):
            angle = 2.0 * math.pi * k / n_angles
            p = radius * np.array([math.cos(angle), math.sin(angle)])
            image = global_map(model, lift_to_section(model, h, desc, p[0], p[1])).chart
            worst = max(worst, float(np.linalg.norm(image - coeffs.matrix @ p)) / radius ** 2)
    return worst


class DomainLabel(str, Enum):
    D1 = 'D1'
    D2 = 'D2'
    ESCAPED_LOCAL = 'EscapedLocal'
    ESCAPED_GLOBAL = 'EscapedGlobal'


DOMAIN_LABELS = (DomainLabel.D1, DomainLabel.D2)

CENSUS_HEADER = ('u1', 'v1', 'label', 'tau', 'image_u1', 'image_v1')


def in_y1(u1, v1, m):
    """Membership in the cone Y1 = {|v1| < |u1| / m}."""
    return abs(v1) < abs(u1) / m


def slope_angle_error(u1, v1, slope):
    """Angle between the line through (u1, v1) and the line of the given slope, in [0, pi/2]."""
    diff = abs(math.atan2(v1, u1) - math.atan(slope)) % math.pi
    return min(diff, math.pi - diff)


@dataclass(frozen=True)
class CensusRow:
    i: int
    j: int
    u1: float
    v1: float
    label: DomainLabel
    tau: float = None
    image: tuple = None
    exit: tuple = None
    reason: str = None

    @property
    def norm(self):
        return math.hypot(self.u1, self.v1)

    @property
    def in_domain(self):
        return self.label in DOMAIN_LABELS

    def csv_row(self):
        nan = float('nan')
        image = self.image or (nan, nan)
        return [self.u1, self.v1, self.label.value, nan if self.tau is None else self.tau, image[0], image[1]]


class _CensusTask:
    def __init__(self, model, h, eps, m, sigma, delta, direction, tol=None, mapper=None):
        self.model = model
        self.mapper = mapper
        self.h = h
        self.eps = eps
        self.m = m
        self.sigma = sigma
        self.delta = delta
        self.direction = direction
        self.tol = tol

    def __call__(self, item):
        i, j, u1, v1 = item
        try:
            point = lift_to_section(self.model, self.h, SectionDescriptor.inward(self.delta, self.sigma), u1, v1)
        except SaddleflowError as exc:
            return CensusRow(i, j, u1, v1, DomainLabel.ESCAPED_LOCAL, reason=type(exc).__name__)
        mapper = self.mapper or (inverse_return_map if self.direction == 'inverse' else return_map)
        outcome = mapper(self.model, self.h, point, eps=self.eps, sigma=self.sigma, tol=self.tol)
        exit_chart = None if outcome.exit_point is None else tuple(float(c) for c in outcome.exit_point.chart)
        if outcome.hit:
            label = DomainLabel.D1 if in_y1(u1, v1, self.m) else DomainLabel.D2
            return CensusRow(i, j, u1, v1, label, outcome.tau, tuple(float(c) for c in outcome.chart), exit_chart)
        if self.direction == 'inverse':
            label = DomainLabel.ESCAPED_LOCAL if outcome.exit_point is not None else DomainLabel.ESCAPED_GLOBAL
        else:
            escaped_global = outcome.tag is OutcomeTag.ESCAPED_GLOBAL
            label = DomainLabel.ESCAPED_GLOBAL if escaped_global else DomainLabel.ESCAPED_LOCAL
        return CensusRow(i, j, u1, v1, label, outcome.tau, exit=exit_chart, reason=outcome.reason)


def census_grid(eps, grid_n):
    """Grid points of B_eps, spacing eps / (grid_n // 2), in row-major order."""
    half = grid_n // 2
    spacing = eps / half
    for i in range(-half, half + 1):
        for j in range(-half, half + 1):
            u1, v1 = i * spacing, j * spacing
            if math.hypot(u1, v1) <= eps * (1.0 + 1e-12):
                yield i, j, u1, v1


@dataclass
class DomainCensus:
    """
    Labels of the grid points of B_eps under T (``direction='forward'``) or
    T^{-1} (``'inverse'``). Points whose map lands on Pi^in(h) are in D and split
    into D1 (in Y1) and D2 (in Y2).
    """
    model_id: str
    case_tag: str
    lambdas: tuple
    h: float
    eps: float
    m: float
    grid_n: int
    sigma: int
    delta: float
    direction: str
    rows: list = dataclass_field(default_factory=list)

    @property
    def spacing(self):
        return self.eps / (self.grid_n // 2)

    def counts(self):
        counts = {label.value: 0 for label in DomainLabel}
        for row in self.rows:
            counts[row.label.value] += 1
        return counts

    def domain_rows(self, label=None):
        return [r for r in self.rows if r.in_domain and (label is None or r.label is label)]

    @property
    def is_empty(self):
        return not self.domain_rows()

    def _by_index(self):
        return {(r.i, r.j): r for r in self.rows}

    def neighborhood_in_domain(self):
        """Whether (0, 0) and its 8 grid neighbors are all in D."""
        index = self._by_index()
        for i in (-1, 0, 1):
            for j in (-1, 0, 1):
                row = index.get((i, j))
                if row is None or not row.in_domain:
                    return False
        return True

    def symmetric(self):
        """Labels invariant under (u1, v1) -> (-u1, -v1)."""
        index = self._by_index()
        return all(index[(-r.i, -r.j)].label is r.label for r in self.rows if (-r.i, -r.j) in index)

    @property
    def expanded_label(self):
        return DomainLabel.D1 if self.direction == 'inverse' else DomainLabel.D2

    def _in_ball_images(self):
        return [r for r in self.domain_rows(self.expanded_label) if math.hypot(*r.image) <= self.eps]

    def cone_violations(self):
        """
        Rows of the expanded cone whose in-ball image leaves it: D2 images
        outside Y2 (forward), D1 images outside Y1 (inverse).
        """
        inverse = self.direction == 'inverse'
        return [r for r in self._in_ball_images() if in_y1(*r.image, self.m) != inverse]

    def slope_errors(self, slope, n=100):
        """Angle errors of the image directions of the ``n`` smallest nonzero expanded-cone points."""
        rows = [r for r in self.domain_rows(self.expanded_label) if r.norm > 0.0]
        rows.sort(key=lambda r: (r.norm, r.i, r.j))
        return [slope_angle_error(r.image[0], r.image[1], slope) for r in rows[:n]]

    def expansion_constant(self):
        """min ||T(p)|| / ||p|| over nonzero expanded-cone points."""
        ratios = [math.hypot(*r.image) / r.norm for r in self.domain_rows(self.expanded_label) if r.norm > 0.0]
        return min(ratios, default=math.nan)

    def cone_ratio_check(self):
        """
        |u1tau| / |v1tau| at the local exit of D2 points against the bound of the
        eigenvalue case; for the Equal case the constant C of the delta term is
        fitted and reported.
        """
        l1, l2 = self.lambdas
        m, d = self.m, self.delta
        case = CaseTag(self.case_tag)
        samples = [r for r in self.domain_rows(DomainLabel.D2) if r.exit and r.exit[1] != 0.0]
        fitted = None
        worst = 0.0
        if case is CaseTag.EQUAL:
            excess = [
                max(0.0, abs(r.exit[0] / r.exit[1]) - m * math.exp(-2 * l1 * r.tau)) / (d * math.exp(-l1 * r.tau))
                for r in samples
            ]
            fitted = max(excess, default=0.0)
        for r in samples:
            t = r.tau
            if case is CaseTag.BETWEEN:
                bound = 3 * m * math.exp(-l2 * t)
            elif case is CaseTag.EQUAL:
                bound = m * math.exp(-2 * l1 * t) + fitted * d * math.exp(-l1 * t)
            elif case is CaseTag.RESONANT2:
                bound = 3 * m * math.exp(-l1 * t)
            else:
                bound = (2 * m + 1) * math.exp(-2 * l1 * t)
            ratio = abs(r.exit[0] / r.exit[1])
            worst = max(worst, ratio / bound if bound > 0 else math.inf)
        return {
            'case_tag': case.value, 'samples': len(samples), 'worst': worst,
            'passed': worst <= 1.0 + 1e-9, 'C': fitted,
        }

    def relabel(self, m):
        """The same census with the cones of another m; map evaluations are reused."""
        rows = [
            replace(r, label=DomainLabel.D1 if in_y1(r.u1, r.v1, m) else DomainLabel.D2) if r.in_domain else r
            for r in self.rows
        ]
        return replace(self, m=m, rows=rows)

    def csv_rows(self):
        return [r.csv_row() for r in self.rows]

    def summary(self):
        return {
            'model_id': self.model_id, 'h': self.h, 'eps': self.eps, 'm': self.m, 'grid_n': self.grid_n,
            'sigma': self.sigma, 'delta': self.delta, 'direction': self.direction, 'counts': self.counts(),
            'D_empty': self.is_empty, 'neighborhood_in_D': self.neighborhood_in_domain(),
            'symmetric': self.symmetric(), 'cone_violations': len(self.cone_violations()),
        }


def classify_domain(model, h, eps=None, m=None, grid_n=64, sigma=1, workers=None, direction='forward',
                    delta=None, tol=None, mapper=None):
    """
    Evaluate the return map (or its inverse) on the grid of B_eps and label
    every point. ``mapper`` replaces it by another map from Pi^in_sigma(h) with
    the signature of ``return_map``.

    Returns
    -------
    DomainCensus
    """
    delta = model.delta_scale if delta is None else delta
    eps = default_eps(delta) if eps is None else eps
    m = conf.get('CONE_M') if m is None else m
    workers = conf.get('WORKERS') if workers is None else workers
    if not m > 1:
        raise ValueError(f'm must exceed 1, got {m}')
    if grid_n < 64:
        raise ValueError(f'grid_n must be at least 64, got {grid_n}')
    if direction not in ('forward', 'inverse'):
        raise ValueError(f'direction must be forward or inverse, got {direction}')
    task = _CensusTask(model, h, eps, m, sigma, delta, direction, tol, mapper)
    rows = parallel_map(task, list(census_grid(eps, grid_n)), workers)
    census = DomainCensus(
        model.name, model.eigen.case_tag.value, (model.eigen.lambda1, model.eigen.lambda2),
        h, eps, m, grid_n, sigma, delta, direction, rows,
    )
    logger.info(f'Domain census of {model.name} at h={h:g} ({direction}): {census.counts()}')
    return census


def dual_census(model, h, eps=None, m=None, grid_n=64, sigma=1, workers=None):
    """The census of T^{-1}, computed through the reversed model."""
    return classify_domain(model, h, eps=eps, m=m, grid_n=grid_n, sigma=sigma, workers=workers, direction='inverse')


@dataclass
class AsymptoticsReport:
    """Measured flight times against e^{l2 tau} = delta^2 / (gamma u10 v10 - h)."""
    model_id: str
    h: float
    deltas: list
    rows: list = dataclass_field(default_factory=list)

    def max_error(self, delta):
        errors = [r['rel_error'] for r in self.rows if r['delta'] == delta]
        return max(errors, default=math.nan)

    @property
    def errors(self):
        return [self.max_error(d) for d in self.deltas]

    @property
    def improving(self):
        """Errors decrease as delta decreases."""
        pairs = sorted(zip(self.deltas, self.errors), reverse=True)
        return all(b[1] < a[1] for a, b in zip(pairs, pairs[1:]))

    def to_dict(self):
        return {'model_id': self.model_id, 'h': self.h, 'deltas': self.deltas, 'errors': self.errors,
                'improving': self.improving, 'rows': self.rows}


def predicted_exponential(model, h, u10, v10, delta):
    """Leading-order e^{l2 tau}; None where the formula has no positive value."""
    denominator = model.eigen.gamma * u10 * v10 - h
    return delta ** 2 / denominator if denominator > 0 else None


def flight_time_check(model, h, samples, deltas=None, sigma=1, tol=None):
    """
    Compare measured local flight times with the leading-order predictor for
    each delta in ``deltas`` (default: the model's delta_scale).
    """
    deltas = [model.delta_scale] if deltas is None else list(deltas)
    report = AsymptoticsReport(model.name, h, deltas)
    l2 = model.eigen.lambda2
    for delta in deltas:
        desc = SectionDescriptor.inward(delta, sigma)
        for u10, v10 in samples:
            predicted = predicted_exponential(model, h, u10, v10, delta)
            outcome = local_map(model, lift_to_section(model, h, desc, u10, v10), eps=math.inf, tol=tol)
            if predicted is None or not outcome.hit:
                logger.warning(f'Sample ({u10:g}, {v10:g}) at delta={delta:g} has no flight time to compare')
                report.rows.append({'delta': delta, 'u10': u10, 'v10': v10, 'tau': outcome.tau,
                                    'predicted': predicted, 'measured': None, 'rel_error': math.inf})
                continue
            measured = math.exp(l2 * outcome.tau)
            report.rows.append({
                'delta': delta, 'u10': u10, 'v10': v10, 'tau': outcome.tau, 'predicted': predicted,
                'measured': measured, 'rel_error': abs(measured / predicted - 1.0),
            })
    logger.info(f'Flight times of {model.name} at h={h:g}: errors {report.errors} for deltas {deltas}')
    return report


class LoopReturnMap:
    """
    The return map of one loop at a fixed level, packaged for iteration.

    ``image`` and ``preimage`` return chart pairs, or None when the map is
    undefined or (with ``bounded``) the image leaves B_eps.
    """

    def __init__(self, model, h, sigma=1, eps=None, delta=None, tol=None):
        self.model = model
        self.h = h
        self.sigma = sigma
        self.delta = model.delta_scale if delta is None else delta
        self.eps = default_eps(self.delta) if eps is None else eps
        self.tol = tol

    @property
    def section(self):
        return SectionDescriptor.inward(self.delta, self.sigma)

    def lift(self, p):
        return lift_to_section(self.model, self.h, self.section, float(p[0]), float(p[1]))

    def forward(self, p, eps=None):
        return return_map(self.model, self.h, self.lift(p), eps=self.eps if eps is None else eps, tol=self.tol)

    def backward(self, p, eps=None):
        return inverse_return_map(self.model, self.h, self.lift(p), eps=self.eps if eps is None else eps,
                                  sigma=self.sigma, tol=self.tol)

    def _chart(self, outcome, bounded):
        if not outcome.hit:
            return None
        if bounded and outcome.point.norm > self.eps:
            return None
        return outcome.chart

    def image(self, p, bounded=True):
        try:
            return self._chart(self.forward(p, None if bounded else math.inf), bounded)
        except SaddleflowError:
            return None

    def preimage(self, p, bounded=True):
        try:
            return self._chart(self.backward(p, None if bounded else math.inf), bounded)
        except SaddleflowError:
            return None

    def jacobian(self, p=(0.0, 0.0), fd_step=None):
        step = _check_fd_step(fd_step)

        def image(q):
            value = self.image(q, bounded=False)
            if value is None:
                raise _Unmapped('escape')
            return value

        return _differentiate(image, p, step, 'T')
