"""
Trajectory integration and section crossings.

All integration goes through ``scipy.integrate.solve_ivp`` with the DOP853
scheme and dense output. Section crossings and the escape from the
neighborhood box are terminal events of the same solve.
"""
import logging
import math
from dataclasses import dataclass
from enum import Enum
from multiprocessing import Pool

import numpy as np
from scipy.integrate import solve_ivp

from . import conf
from .exceptions import Escaped, NoCrossing, StepSizeUnderflow, TangentialCrossing
from .models import PhaseState

logger = logging.getLogger(__name__)


class SectionKind(str, Enum):
    IN = 'In'
    OUT = 'Out'


@dataclass(frozen=True)
class SectionDescriptor:
    """
    One of the hypersurfaces {u2 = sigma*delta} (In) or {v2 = sigma*delta} (Out).

    ``direction`` is the sign of d(u2)/dt (In) or d(v2)/dt (Out) at a crossing in
    forward time. By default In-crossings move toward the saddle and
    Out-crossings away from it.
    """
    which: SectionKind
    sigma: int
    delta: float
    direction: int = None

    def __post_init__(self):
        object.__setattr__(self, 'which', SectionKind(self.which))
        if self.sigma not in (1, -1):
            raise ValueError(f'sigma must be +1 or -1, got {self.sigma}')
        if not (self.delta > 0.0 and math.isfinite(self.delta)):
            raise ValueError(f'delta must be positive, got {self.delta}')
        if self.direction is None:
            default = -self.sigma if self.which is SectionKind.IN else self.sigma
            object.__setattr__(self, 'direction', default)

    @classmethod
    def inward(cls, delta, sigma=1):
        return cls(SectionKind.IN, sigma, delta)

    @classmethod
    def outward(cls, delta, sigma=1):
        return cls(SectionKind.OUT, sigma, delta)

    @property
    def index(self):
        """Coordinate fixed by the section: u2 for In, v2 for Out."""
        return 1 if self.which is SectionKind.IN else 3

    @property
    def free_index(self):
        """Coordinate solved for when lifting a chart point."""
        return 3 if self.which is SectionKind.IN else 1

    @property
    def level(self):
        return self.sigma * self.delta

    def __call__(self, x):
        return x[self.index] - self.level

    def describe(self):
        return {'which': self.which.value, 'sigma': self.sigma, 'delta': self.delta, 'direction': self.direction}


@dataclass
class Trajectory:
    """
    Dense samples of one integration.

    Attributes:
        model_id (str): name of the integrated model.
        times (ndarray): strictly increasing sample times.
        states (ndarray): samples, shape (n, 4).
        energies (ndarray or None): first integral at the samples.
        h_drift (float or None): max |H(x(t)) - H(x(0))|.
    """
    model_id: str
    times: np.ndarray
    states: np.ndarray
    energies: np.ndarray = None
    h_drift: float = None

    @property
    def samples(self):
        return [PhaseState.from_array(x, t) for t, x in zip(self.times, self.states)]

    @property
    def end(self):
        return PhaseState.from_array(self.states[-1], self.times[-1])

    def rows(self):
        energies = self.energies if self.energies is not None else [float('nan')] * len(self.times)
        for t, x, h in zip(self.times, self.states, energies):
            yield [float(t), *(float(c) for c in x), float(h)]


@dataclass(frozen=True)
class Crossing:
    index: int
    section: SectionDescriptor
    state: PhaseState
    time: float


def neighborhood_bound(model):
    """Default escape bound in each coordinate: a multiple of the loop extent or of delta."""
    scale = model.loop_extent if model.loop_extent else model.delta_scale
    return conf.get('ESCAPE_BOX_FACTOR') * scale


def _tolerances(tol):
    if tol is None:
        tol = conf.get('TOL')
    if not 1e-14 <= tol <= 1e-6:
        raise ValueError(f'tol must lie in [1e-14, 1e-6], got {tol}')
    # DOP853 refuses relative tolerances below 100 machine epsilons.
    return max(tol, 2.5e-14), tol


class _RightHandSide:
    def __init__(self, field):
        self.field = field

    def __call__(self, t, x):
        return self.field(x)


class _SectionEvent:
    terminal = True

    def __init__(self, section, time_sign):
        self.section = section
        self.direction = section.direction * time_sign

    def __call__(self, t, x):
        return x[self.section.index] - self.section.level


class _BoxEvent:
    terminal = True
    direction = -1

    def __init__(self, bound, indices=None):
        self.bound = bound
        self.indices = indices

    def __call__(self, t, x):
        if self.indices is not None:
            x = x[self.indices]
        return self.bound - np.max(np.abs(x))


def parallel_map(function, items, workers):
    """Map over ``items`` in order, on a process pool when ``workers`` > 1."""
    if workers and workers > 1:
        with Pool(workers) as pool:
            return list(pool.imap(function, items))
    return [function(item) for item in items]


def _solve(model, x0, t_span, tol, events, dense_output=False):
    rtol, atol = _tolerances(tol)
    sol = solve_ivp(
        _RightHandSide(model.field), t_span, np.asarray(x0, dtype=float),
        method='DOP853', rtol=rtol, atol=atol, events=events, dense_output=dense_output,
    )
    if sol.status == -1:
        logger.error(f'Integration of {model.name} failed: {sol.message}')
        raise StepSizeUnderflow(sol.message, t=float(sol.t[-1]))
    return sol


def integrate(model, x0, t_span, tol=None, bound=None, sample_step=None):
    """
    Integrate the model from ``x0`` over ``t_span`` (forward in time).

    Parameters
    ----------
    model : ModelSpec
    x0 : array_like or PhaseState
    t_span : (float, float)
        Start and end time, t_span[1] > t_span[0].
    tol : float, optional
        Absolute tolerance in [1e-14, 1e-6]; defaults to the TOL setting.
    bound : float, optional
        Escape bound on max |x_i|; defaults to ``neighborhood_bound(model)``.
        ``math.inf`` disables the check.
    sample_step : float, optional
        Largest spacing of the dense samples; defaults to SAMPLE_STEP.

    Returns
    -------
    Trajectory

    Raises
    ------
    Escaped
        If max |x_i| reaches ``bound``.
    StepSizeUnderflow
        If the step size collapses.
    """
    if isinstance(x0, PhaseState):
        x0 = x0.array
    x0 = np.asarray(x0, dtype=float)
    if not np.all(np.isfinite(x0)):
        raise ValueError('x0 must be finite')
    t0, t1 = (float(t) for t in t_span)
    if not t1 > t0:
        raise ValueError(f'integrate runs forward in time, got t_span={t_span}')
    bound = neighborhood_bound(model) if bound is None else bound
    sample_step = conf.get('SAMPLE_STEP') if sample_step is None else sample_step

    events = [] if math.isinf(bound) else [_BoxEvent(bound)]
    sol = _solve(model, x0, (t0, t1), tol, events or None, dense_output=True)
    if sol.status == 1:
        t_exit = float(sol.t_events[0][0])
        logger.warning(f'Trajectory of {model.name} left the box {bound:g} at t={t_exit:g}')
        raise Escaped(f'Trajectory left the box max|x| <= {bound:g} at t={t_exit:g}', bound=bound, t_exit=t_exit)

    n = max(2, int(math.ceil((t1 - t0) / sample_step)) + 1)
    times = np.linspace(t0, t1, n)
    states = sol.sol(times).T
    states[0] = x0
    states[-1] = sol.y[:, -1]
    energies = None
    drift = None
    if model.is_conservative:
        energies = model.first_integral(states)
        drift = float(np.max(np.abs(energies - energies[0])))
    logger.debug(f'Integrated {model.name} over [{t0:g}, {t1:g}] in {sol.t.size} steps, drift={drift}')
    return Trajectory(model.name, times, states, energies, drift)


def cross_sections(model, x0, sections, t_max=None, tol=None, bound=None, tube=None):
    """
    First crossing of any of ``sections`` with its configured orientation.

    A negative ``t_max`` integrates backward; orientations keep referring to
    forward time. The crossing is located on the dense output by the event
    solver, checked against the section to 1e-12 and snapped onto it.

    Returns
    -------
    Crossing
        Index into ``sections``, the crossing state (with time) and the time.

    Raises
    ------
    NoCrossing
        If no crossing happens before ``t_max``.
    Escaped
        If max |x_i| reaches ``bound`` first, or max(|u1|, |v1|) reaches
        ``tube`` when a tube radius is given.
    TangentialCrossing
        If the section function has a vanishing time derivative at the root.
    """
    if isinstance(x0, PhaseState):
        x0 = x0.array
    x0 = np.asarray(x0, dtype=float)
    t_max = conf.get('T_MAX') if t_max is None else float(t_max)
    if t_max == 0.0:
        raise ValueError('t_max must be nonzero')
    for section in sections:
        if abs(section(x0)) <= 1e-12:
            raise ValueError(f'Start point already lies on section {section.describe()}')
    bound = neighborhood_bound(model) if bound is None else bound
    time_sign = 1 if t_max > 0 else -1
    events = [_SectionEvent(section, time_sign) for section in sections]
    escapes = {}
    if not math.isinf(bound):
        escapes[len(events)] = ('box', bound)
        events.append(_BoxEvent(bound))
    if tube is not None:
        escapes[len(events)] = ('tube', tube)
        events.append(_BoxEvent(tube, indices=[0, 2]))
    sol = _solve(model, x0, (0.0, t_max), tol, events)

    if sol.status != 1:
        raise NoCrossing(f'No section crossing within t_max={t_max:g}', t_max=t_max)
    hits = [(abs(float(ev[0])), i) for i, ev in enumerate(sol.t_events) if ev.size]
    _, index = min(hits)
    t_hit = float(sol.t_events[index][0])
    x_hit = np.array(sol.y_events[index][0], dtype=float)
    if index in escapes:
        reason, radius = escapes[index]
        raise Escaped(
            f'Trajectory left the {reason} of radius {radius:g} at t={t_hit:g}',
            bound=radius, t_exit=t_hit, reason=reason, state=x_hit.tolist(),
        )

    section = sections[index]
    residual = abs(section(x_hit))
    if residual > 1e-12:
        logger.warning(f'Crossing of {section.describe()} located to {residual:.3e} only')
    speed = float(model.field(x_hit)[section.index])
    if abs(speed) < conf.get('TANGENCY_THRESHOLD'):
        raise TangentialCrossing(
            f'Tangential crossing of {section.which.value}{section.sigma:+d} at t={t_hit:g}', speed=speed
        )
    x_hit[section.index] = section.level
    return Crossing(index, section, PhaseState.from_array(x_hit, t_hit), t_hit)


def cross_section(model, x0, section, t_max=None, tol=None, bound=None):
    """First crossing of one section; returns ``(PhaseState, time)``."""
    crossing = cross_sections(model, x0, [section], t_max=t_max, tol=tol, bound=bound)
    return crossing.state, crossing.time
