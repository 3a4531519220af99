"""
Two homoclinic loops: transition maps between the four sections, itineraries
and the census behind the dichotomy of the figure-eight.

For h < 0 each lobe carries its own L_h^sigma and the single-loop machinery
runs per lobe. For h > 0 the outer orbit visits both lobes and its return map
is T = T^glo_+ o T^loc_{-+} o T^glo_- o T^loc_{+-}.
"""
import logging
import math
from dataclasses import dataclass, field as dataclass_field, replace

import numpy as np

from .exceptions import ModelError, SaddleflowError, WrongSide
from .flow import SectionDescriptor, SectionKind, cross_sections
from .orbits import Side, escape_census, fixed_point_scan, orbit_record
from .poincare import (
    DomainLabel, LoopReturnMap, OutcomeTag, ReturnOutcome, SectionPoint, classify_domain, default_eps,
    global_map_coeffs, global_passage, lift_to_section, local_map, reverse_time_view, slope_angle_error,
)

logger = logging.getLogger(__name__)

ITINERARY_HEADER = ('step', 'sigma', 'section', 't', 'u1', 'v1')


@dataclass(frozen=True)
class TransitionTag:
    """Labels the local map T^loc_{from_sigma, to_sigma}."""
    from_sigma: int
    to_sigma: int

    def __post_init__(self):
        if self.from_sigma not in (1, -1) or self.to_sigma not in (1, -1):
            raise ValueError(f'Transition signs must be +1 or -1, got {self}')

    @property
    def label(self):
        return f'{self.from_sigma:+d}{self.to_sigma:+d}'.replace('1', '')


@dataclass
class ItineraryRecord:
    """Sections visited by one orbit, in order."""
    start: SectionPoint
    visits: list = dataclass_field(default_factory=list)
    outcome: ReturnOutcome = None

    @property
    def signs(self):
        return tuple(sigma for sigma, _, _, _, _ in self.visits)

    @property
    def alternates(self):
        kinds = [kind for _, kind, _, _, _ in self.visits]
        return all(a != b for a, b in zip(kinds, kinds[1:]))

    @property
    def increasing(self):
        times = [t for _, _, t, _, _ in self.visits]
        return all(b > a for a, b in zip(times, times[1:]))

    def csv_rows(self):
        return [[step, sigma, kind, t, u1, v1] for step, (sigma, kind, t, u1, v1) in enumerate(self.visits)]


def _require_figure_eight(model):
    if len(model.loops) < 2:
        raise ModelError(f'Model {model.name} has a single loop; the figure-eight maps need two')


def transition_map(model, h, tag, point, eps=None, tol=None, strict=False):
    """
    T^loc_{sigma1 sigma2}: from Pi^in_{sigma1}(h) to the first Out-section of
    either sign, a Hit only through Out_{sigma2} within ``eps``.

    Raises
    ------
    WrongSide
        With ``strict``, when the orbit leaves through Out_{-sigma2}.
    """
    _require_figure_eight(model)
    if isinstance(point, SectionPoint):
        start = point
    else:
        start = lift_to_section(model, h, SectionDescriptor.inward(model.delta_scale, tag.from_sigma), *point)
    if start.desc.sigma != tag.from_sigma or start.desc.which is not SectionKind.IN:
        raise ValueError(f'Transition {tag.label} starts on In{tag.from_sigma:+d}')
    outcome = local_map(model, start, eps=eps, sigma_out=tag.to_sigma, tol=tol)
    if strict and outcome.tag is OutcomeTag.WRONG_SIDE:
        raise WrongSide(f'Orbit left through Out{-tag.to_sigma:+d}, not Out{tag.to_sigma:+d}',
                        itinerary=list(outcome.itinerary))
    return outcome


def _passage(model, h, point, exit_sigma, eps, tol):
    """T^glo_{exit} o T^loc_{sigma, exit} from an In-section point."""
    local = transition_map(model, h, TransitionTag(point.desc.sigma, exit_sigma), point, eps=eps, tol=tol)
    if not local.hit:
        return local
    passage = global_passage(model, local.point, tol=tol)
    if not passage.hit:
        return replace(passage, tau=local.tau, exit_point=local.point, itinerary=local.itinerary)
    return ReturnOutcome(
        OutcomeTag.HIT, point=passage.point, tau=local.tau, itinerary=local.itinerary + (exit_sigma,),
        exit_point=local.point, t_global=passage.t_global,
    )


def _chain(model, h, point, exits, eps, tol):
    tau = t_global = 0.0
    itinerary = (point.desc.sigma,)
    outcome = None
    for exit_sigma in exits:
        outcome = _passage(model, h, point, exit_sigma, eps, tol)
        itinerary = itinerary + outcome.itinerary[1:]
        if not outcome.hit:
            return replace(outcome, itinerary=itinerary)
        tau += outcome.tau
        t_global += outcome.t_global
        point = outcome.point
    return replace(outcome, tau=tau, t_global=t_global, itinerary=itinerary)


def half_outer_map(model, h, point, eps=None, sigma=1, tol=None):
    """T^glo_{-sigma} o T^loc_{sigma,-sigma}: Pi^in_sigma(h) -> Pi^in_{-sigma}(h)."""
    point = point if isinstance(point, SectionPoint) else lift_to_section(
        model, h, SectionDescriptor.inward(model.delta_scale, sigma), *point)
    return _chain(model, h, point, (-sigma,), eps, tol)


def outer_return_map(model, h, point, eps=None, sigma=1, tol=None):
    """
    T = T^glo_+ o T^loc_{-+} o T^glo_- o T^loc_{+-} on Pi^in_+(h) (for
    ``sigma=-1`` the roles of the lobes are exchanged). For h > 0 this is the
    return map of the outer orbit; for h < 0 it is the cross-lobe composition.
    """
    _require_figure_eight(model)
    point = point if isinstance(point, SectionPoint) else lift_to_section(
        model, h, SectionDescriptor.inward(model.delta_scale, sigma), *point)
    return _chain(model, h, point, (-sigma, sigma), eps, tol)


def outer_inverse_map(model, h, point, eps=None, sigma=1, tol=None):
    """T^{-1} of the outer map through the reversed model, conjugated by J(u, v) = (v, u)."""
    _require_figure_eight(model)
    point = point if isinstance(point, SectionPoint) else lift_to_section(
        model, h, SectionDescriptor.inward(model.delta_scale, sigma), *point)
    delta = point.desc.delta
    reversed_model = reverse_time_view(model)
    current = point.swapped(SectionDescriptor.outward(delta, sigma))
    tau = t_global = 0.0
    itinerary = (sigma,)
    for exit_sigma in (-sigma, sigma):
        passage = global_passage(reversed_model, current, tol=tol)
        if not passage.hit:
            return replace(passage, itinerary=itinerary)
        t_global += passage.t_global
        local = local_map(reversed_model, passage.point, eps=eps, sigma_out=exit_sigma, tol=tol)
        itinerary = itinerary + (current.desc.sigma, exit_sigma)
        if not local.hit:
            return replace(local, itinerary=itinerary, exit_point=passage.point)
        tau += local.tau
        current = local.point
    image = current.swapped(SectionDescriptor.inward(delta, sigma))
    return ReturnOutcome(OutcomeTag.HIT, point=image, tau=tau, itinerary=itinerary, t_global=t_global)


class OuterReturnMap(LoopReturnMap):
    """The outer return map at h > 0 with the iteration interface of LoopReturnMap."""

    def forward(self, p, eps=None):
        return outer_return_map(self.model, self.h, self.lift(p), eps=self.eps if eps is None else eps,
                                sigma=self.sigma, tol=self.tol)

    def backward(self, p, eps=None):
        return outer_inverse_map(self.model, self.h, self.lift(p), eps=self.eps if eps is None else eps,
                                 sigma=self.sigma, tol=self.tol)


def follow_itinerary(model, h, point, n_visits=8, tol=None, t_max=None):
    """
    Record the sections of either sign an orbit crosses, alternating Out and
    In, for ``n_visits`` crossings after the start.
    """
    _require_figure_eight(model)
    delta = point.desc.delta
    outs = [SectionDescriptor.outward(delta, 1), SectionDescriptor.outward(delta, -1)]
    ins = [SectionDescriptor.inward(delta, 1), SectionDescriptor.inward(delta, -1)]
    record = ItineraryRecord(point, [(point.desc.sigma, point.desc.which.value, 0.0, point.u1, point.v1)])
    x, t = point.lifted.array, 0.0
    for k in range(n_visits):
        sections = outs if k % 2 == 0 else ins
        try:
            crossing = cross_sections(model, x, sections, t_max=t_max, tol=tol)
        except SaddleflowError as exc:
            record.outcome = ReturnOutcome(OutcomeTag.ESCAPED_GLOBAL if k % 2 else OutcomeTag.ESCAPED_LOCAL,
                                           reason=type(exc).__name__, itinerary=record.signs)
            return record
        t += crossing.time
        state = crossing.state
        record.visits.append((crossing.section.sigma, crossing.section.which.value, t, state.u1, state.v1))
        x = state.array
    record.outcome = ReturnOutcome(OutcomeTag.HIT, itinerary=record.signs)
    return record


def cross_lobe_ratio_check(census, lambda1):
    """
    v1tau / (e^{l1 tau} v10) on D2 rows of a transition census: the fitted C of
    |ratio - 1| <= C*delta and the largest |u1tau / v1tau|.
    """
    rows = [r for r in census.domain_rows() if r.label is DomainLabel.D2 and r.v1 != 0.0 and r.exit]
    ratios = [r.exit[1] / (math.exp(lambda1 * r.tau) * r.v1) for r in rows]
    slopes = [abs(r.exit[0] / r.exit[1]) for r in rows if r.exit[1] != 0.0]
    return {
        'samples': len(rows),
        'C': max((abs(q - 1.0) / census.delta for q in ratios), default=0.0),
        'max_u_over_v': max(slopes, default=0.0),
    }


@dataclass
class FigureEightReport:
    """
    Census of the dichotomy of the figure-eight at one level.

    For h < 0 ``lobes`` holds the records of L_h^+ and L_h^-; for h > 0
    ``outer`` holds L_h. ``conclusions`` maps each m to the conclusions drawn
    with the cones of that m.
    """
    model_id: str
    h: float
    eps: float
    grid_n: int
    m_values: tuple
    lobes: dict = dataclass_field(default_factory=dict)
    outer: object = None
    escapes: dict = dataclass_field(default_factory=dict)
    cross_lobe_fixed_points: int = 0
    slopes: dict = dataclass_field(default_factory=dict)
    ratio_check: dict = None
    symmetry: dict = None
    conclusions: dict = dataclass_field(default_factory=dict)

    @property
    def saddle_count(self):
        records = list(self.lobes.values()) + ([self.outer] if self.outer is not None else [])
        return sum(1 for r in records if r.is_saddle)

    @property
    def stable_across_m(self):
        values = list(self.conclusions.values())
        return all(v == values[0] for v in values)

    @property
    def passed(self):
        expected = 2 if self.h < 0 else 1
        return (self.saddle_count == expected and self.cross_lobe_fixed_points == 0
                and self.stable_across_m and all(all(v.values()) for v in self.conclusions.values()))

    def to_dict(self):
        return {
            'model_id': self.model_id,
            'h': self.h,
            'eps': self.eps,
            'grid_n': self.grid_n,
            'm_values': list(self.m_values),
            'lobes': {f'{s:+d}': r.to_dict() for s, r in sorted(self.lobes.items())},
            'outer': None if self.outer is None else self.outer.to_dict(),
            'escapes': self.escapes,
            'cross_lobe_fixed_points': self.cross_lobe_fixed_points,
            'slopes': self.slopes,
            'ratio_check': self.ratio_check,
            'symmetry': self.symmetry,
            'conclusions': {str(m): c for m, c in self.conclusions.items()},
            'saddle_count': self.saddle_count,
            'stable_across_m': self.stable_across_m,
            'passed': self.passed,
        }


def _cone_conclusions(censuses, m):
    relabeled = [c.relabel(m) for c in censuses]
    return {'Y2_preserved': all(not c.cone_violations() for c in relabeled)}


def _retention(report, curves):
    """Whether retained points sit within two grid spacings of the manifold traces."""
    forward = report.tube_violations(curves[Side.STABLE], 'forward') if Side.STABLE in curves else []
    backward = report.tube_violations(curves[Side.UNSTABLE], 'backward') if Side.UNSTABLE in curves else []
    return not forward and not backward


def figure_eight_census(model, h, eps=None, m_values=(5.0, 10.0, 20.0), grid_n=64, workers=None, max_iters=None):
    """
    Per-lobe (h < 0) or outer-orbit (h > 0) analysis of a figure-eight model
    with the cone and escape checks, repeated for every m in ``m_values``.

    Returns
    -------
    FigureEightReport
    """
    _require_figure_eight(model)
    if h == 0.0:
        raise ValueError('figure_eight_census needs h != 0')
    delta = model.delta_scale
    eps = default_eps(delta) if eps is None else eps
    report = FigureEightReport(model.name, h, eps, grid_n, tuple(m_values))
    censuses = []
    if h < 0:
        for sigma in model.loops:
            maps = LoopReturnMap(model, h, sigma, eps=eps)
            record = orbit_record(model, h, sigma=sigma, maps=maps)
            report.lobes[sigma] = record
            escapes = escape_census(model, h, grid_n=grid_n, max_iters=max_iters, workers=workers, maps=maps)
            report.escapes[f'{sigma:+d}'] = {**escapes.summary(), 'on_manifolds': _retention(escapes, record.manifolds)}
            censuses.append(classify_domain(model, h, eps=eps, m=m_values[0], grid_n=grid_n, sigma=sigma,
                                            workers=workers))
        scan = fixed_point_scan(model, h, grid_n=grid_n, workers=workers, maps=OuterReturnMap(model, h, 1, eps=eps))
        report.cross_lobe_fixed_points = scan.distinct
        plus, minus = report.lobes.get(1), report.lobes.get(-1)
        if plus is not None and minus is not None:
            report.symmetry = {
                'period_difference': abs(plus.period - minus.period),
                'beta_difference': abs(plus.floquet.beta - minus.floquet.beta),
            }
    else:
        maps = OuterReturnMap(model, h, 1, eps=eps)
        record = orbit_record(model, h, sigma=1, maps=maps)
        report.outer = record
        escapes = escape_census(model, h, grid_n=grid_n, max_iters=max_iters, workers=workers, maps=maps)
        report.escapes['outer'] = {**escapes.summary(), 'on_manifolds': _retention(escapes, record.manifolds)}
        report.slopes = outer_slopes(model, h, record)
        for sigma in model.loops:
            censuses.append(classify_domain(model, h, eps=eps, m=m_values[0], grid_n=grid_n, sigma=sigma,
                                            workers=workers, mapper=half_outer_map))
        report.ratio_check = cross_lobe_ratio_check(censuses[0], model.eigen.lambda1)
    for m in m_values:
        report.conclusions[m] = {
            **_cone_conclusions(censuses, m),
            'retained_on_manifolds': all(e['on_manifolds'] for e in report.escapes.values()),
        }
    logger.info(f'Figure-eight census of {model.name} at h={h:g}: {report.saddle_count} saddle(s), '
                f'passed={report.passed}')
    return report


def outer_slopes(model, h, record, radius=1e-4):
    """
    Angle errors of Lambda^u at M^in_+ against d_+/b_+ and of its push-forward
    to M^in_- against d_-/b_-.
    """
    curve = record.manifolds.get(Side.UNSTABLE)
    if curve is None:
        return {}
    plus = global_map_coeffs(model, h, sigma=1)
    minus = global_map_coeffs(model, h, sigma=-1)
    direction = curve.direction
    at_plus = slope_angle_error(direction[0], direction[1], plus.slope)
    offsets = np.linalg.norm(curve.branch - curve.origin, axis=1)
    index = int(np.argmin(np.abs(offsets - radius)))
    image = half_outer_map(model, h, tuple(curve.branch[index]), eps=math.inf, sigma=1)
    at_minus = slope_angle_error(*image.chart, minus.slope) if image.hit else math.nan
    return {'plus': at_plus, 'minus': at_minus, 'd_over_b_plus': plus.slope, 'd_over_b_minus': minus.slope}