"""
Periodic orbits L_h in the invariant plane, their Floquet data, the section
traces of their stable and unstable manifolds and the escape census.

Every routine works on a return-map object with ``image``, ``preimage``,
``lift`` and ``jacobian`` (``poincare.LoopReturnMap`` for one loop; the
figure-eight module supplies the outer map) so lobes and outer orbits share
the same machinery.
"""
import logging
import math
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from . import conf
from .exceptions import ClosureFailure, LeftDomain, NewtonDiverged, NoOrbit, SaddleflowError
from .flow import SectionDescriptor, cross_sections, integrate, parallel_map
from .poincare import LoopReturnMap, census_grid, classify_domain, fd_jacobian, in_y1, lift_to_section

logger = logging.getLogger(__name__)


class Side:
    STABLE = 'Stable'
    UNSTABLE = 'Unstable'


@dataclass
class Floquet:
    """Eigenvalues of DT at a fixed point, ordered |alpha| <= |beta|."""
    alpha: complex
    beta: complex
    jacobian: np.ndarray
    vectors: np.ndarray

    def __iter__(self):
        yield self.alpha
        yield self.beta

    @property
    def det(self):
        return float(np.linalg.det(self.jacobian))

    @property
    def is_real(self):
        return abs(np.imag(self.alpha)) == 0.0 and abs(np.imag(self.beta)) == 0.0

    @property
    def is_saddle(self):
        return self.is_real and abs(self.alpha) < 1.0 < abs(self.beta)

    @property
    def consistency(self):
        """|alpha*beta - det DT| / |det DT|."""
        det = self.det
        return abs(self.alpha * self.beta - det) / abs(det) if det else math.inf

    def vector(self, side):
        column = 1 if side == Side.UNSTABLE else 0
        v = np.real(self.vectors[:, column])
        v = v / np.linalg.norm(v)
        return v if (v[0], v[1]) >= (0.0, 0.0) else -v

    def to_dict(self):
        def number(z):
            return float(np.real(z)) if np.imag(z) == 0 else {'re': float(np.real(z)), 'im': float(np.imag(z))}

        return {
            'alpha': number(self.alpha), 'beta': number(self.beta), 'det': self.det,
            'consistency': self.consistency, 'real': self.is_real, 'saddle': self.is_saddle,
            'jacobian': self.jacobian.tolist(),
        }


def floquet_from_jacobian(jacobian):
    values, vectors = np.linalg.eig(np.asarray(jacobian, dtype=float))
    order = np.argsort(np.abs(values))
    values, vectors = values[order], vectors[:, order]
    if np.all(np.isreal(values)):
        values, vectors = np.real(values), np.real(vectors)
    return Floquet(values[0], values[1], np.asarray(jacobian, dtype=float), vectors)


@dataclass
class ManifoldCurve:
    """
    Section trace of W^s or W^u of the fixed point.

    ``branch`` is one half grown from the fixed point; ``points`` is the full
    polyline through it, the other half being the image under (u1, v1) -> (-u1, -v1).
    """
    side: str
    origin: np.ndarray
    branch: np.ndarray
    direction: np.ndarray
    multiplier: float
    levels: int
    truncated: bool = False
    reached_boundary: bool = False

    @property
    def points(self):
        mirror = 2.0 * self.origin - self.branch[::-1]
        return np.vstack([mirror, self.origin[None, :], self.branch])

    @property
    def arclength(self):
        return float(np.sum(np.linalg.norm(np.diff(self.branch, axis=0), axis=1)))

    def tangent_error(self, radius, direction=None):
        """Angle between the chord to the first branch point at ``radius`` and ``direction``."""
        direction = self.direction if direction is None else np.asarray(direction, dtype=float)
        offsets = self.branch - self.origin
        norms = np.linalg.norm(offsets, axis=1)
        index = int(np.argmax(norms >= radius)) if np.any(norms >= radius) else len(norms) - 1
        chord = offsets[index]
        angle = abs(math.atan2(chord[1], chord[0]) - math.atan2(direction[1], direction[0])) % math.pi
        return min(angle, math.pi - angle)

    def to_dict(self):
        return {
            'side': self.side, 'multiplier': float(self.multiplier), 'levels': self.levels,
            'direction': self.direction.tolist(), 'n_points': int(len(self.points)),
            'arclength': self.arclength, 'truncated': self.truncated, 'reached_boundary': self.reached_boundary,
        }


@dataclass
class PeriodicOrbitRecord:
    """
    L_h with its section fixed point.

    Attributes:
        h (float): level of the orbit.
        fixed_point (SectionPoint): the fixed point of the return map.
        period (float): first return time.
        floquet (Floquet or None): eigen pair of DT at the fixed point.
        manifolds (dict): ManifoldCurve per side.
        residual (float): closure or Newton residual.
        sigma (int): sign of the In-section of the fixed point.
        itinerary (tuple): (sigma, section kind, time) visits of one period.
    """
    h: float
    fixed_point: object
    period: float
    floquet: Floquet = None
    manifolds: dict = dataclass_field(default_factory=dict)
    residual: float = 0.0
    sigma: int = 1
    itinerary: tuple = ()
    trajectory: object = None
    newton_iterations: int = 0
    flags: list = dataclass_field(default_factory=list)

    @property
    def is_saddle(self):
        return self.floquet is not None and self.floquet.is_saddle

    def to_dict(self):
        fp = self.fixed_point
        return {
            'h': self.h,
            'sigma': self.sigma,
            'fixed_point': {'u1': fp.u1, 'v1': fp.v1, 'lifted': list(map(float, fp.lifted.array))},
            'period': self.period,
            'residual': self.residual,
            'newton_iterations': self.newton_iterations,
            'floquet': None if self.floquet is None else self.floquet.to_dict(),
            'manifolds': {side: curve.to_dict() for side, curve in sorted(self.manifolds.items())},
            'itinerary': [list(v) for v in self.itinerary],
            'flags': list(self.flags),
        }


def _check_level(model, h, delta):
    if h == 0.0:
        raise NoOrbit('There is no periodic orbit L_h at h = 0')
    if h > 0.0 and len(model.loops) == 1:
        raise NoOrbit(f'Single-loop model {model.name} has no periodic orbit near the loop for h = {h:g} > 0')
    bound = conf.get('H_BOUND_FACTOR') * delta ** 2
    if abs(h) >= bound:
        raise NoOrbit(f'Level h = {h:g} lies outside |h| < {bound:g} where L_h meets the sections')


def planar_periodic_orbit(model, h, sigma=1, delta=None, tol=None, t_max=None):
    """
    L_h through the lift of (0, 0) on Pi^in_sigma(h), followed inside the
    invariant plane until it returns to the same In-section.

    Raises
    ------
    NoOrbit
        For h of the wrong sign (h >= 0 on a single loop).
    ClosureFailure
        If the orbit does not close to 1e-9 or leaves the level set.
    """
    delta = model.delta_scale if delta is None else delta
    _check_level(model, h, delta)
    start = lift_to_section(model, h, SectionDescriptor.inward(delta, sigma), 0.0, 0.0)
    x0 = start.lifted.array
    outs = [SectionDescriptor.outward(delta, 1), SectionDescriptor.outward(delta, -1)]
    ins = [SectionDescriptor.inward(delta, 1), SectionDescriptor.inward(delta, -1)]

    x, period = x0, 0.0
    visits = [(sigma, 'In', 0.0)]
    for _ in range(2 * len(model.loops)):
        leaving = cross_sections(model, x, outs, t_max=t_max, tol=tol)
        period += leaving.time
        visits.append((leaving.section.sigma, 'Out', period))
        entry = cross_sections(model, leaving.state, ins, t_max=t_max, tol=tol)
        period += entry.time
        visits.append((entry.section.sigma, 'In', period))
        x = entry.state.array
        if entry.section.sigma == sigma:
            break
    else:
        raise ClosureFailure(f'L_h at h={h:g} did not return to In{sigma:+d}')

    closure = float(np.max(np.abs(x - x0)))
    if closure > 1e-9:
        raise ClosureFailure(f'L_h at h={h:g} closes only to {closure:.3e}', closure=closure)
    trajectory = integrate(model, x0, (0.0, period), tol=tol)
    level_error = float(np.max(np.abs(trajectory.energies - h)))
    if level_error > 1e-9:
        raise ClosureFailure(f'L_h at h={h:g} leaves its level set by {level_error:.3e}', level_error=level_error)
    logger.info(f'L_h of {model.name} at h={h:g}, sigma={sigma:+d}: period {period:.12g}, closure {closure:.2e}')
    return PeriodicOrbitRecord(
        h=h, fixed_point=start, period=period, residual=closure, sigma=sigma,
        itinerary=tuple(visits), trajectory=trajectory,
    )


def _power_image(maps, p, power, bounded=True):
    for _ in range(power):
        p = maps.image(p, bounded=bounded)
        if p is None:
            return None
    return p


class _Unbounded:
    def __init__(self, maps, power):
        self.maps = maps
        self.power = power

    def __call__(self, p):
        image = _power_image(self.maps, p, self.power, bounded=False)
        if image is None:
            raise LeftDomain(f'T^{self.power} is undefined at {tuple(p)}')
        return image


def newton_fixed_point(model, h, guess=(0.0, 0.0), tol=1e-11, sigma=1, maps=None, power=1, fd_step=None,
                       max_iter=None, full_output=False):
    """
    Newton iteration on p -> T^power(p) - p with a finite-difference Jacobian.

    Returns
    -------
    SectionPoint, or (SectionPoint, info) with ``full_output``; ``info`` holds
    the iteration count and the final residual.

    Raises
    ------
    LeftDomain
        If an iterate leaves B_eps or the map is undefined there.
    NewtonDiverged
        If the residual is not below ``tol`` after ``max_iter`` steps.
    """
    maps = maps or LoopReturnMap(model, h, sigma)
    max_iter = conf.get('NEWTON_MAX_ITER') if max_iter is None else max_iter
    step = conf.get('FD_STEP') if fd_step is None else fd_step
    p = np.array(guess, dtype=float)
    iterations = 0
    while True:
        if np.hypot(*p) > maps.eps:
            raise LeftDomain(f'Newton iterate {tuple(p)} left B_eps', iterations=iterations)
        image = _power_image(maps, p, power)
        if image is None:
            raise LeftDomain(f'T^{power} is undefined at {tuple(p)}', iterations=iterations)
        residual = image - p
        norm = float(np.linalg.norm(residual))
        logger.debug(f'Newton step {iterations} at {tuple(p)}: residual {norm:.3e}')
        if norm <= tol:
            break
        if iterations >= max_iter:
            raise NewtonDiverged(f'Fixed point search stalled at residual {norm:.3e}', residual=norm)
        jacobian = fd_jacobian(_Unbounded(maps, power), p, step)
        try:
            p = p + np.linalg.solve(jacobian - np.eye(2), -residual)
        except np.linalg.LinAlgError as exc:
            raise NewtonDiverged(f'Singular Newton matrix at {tuple(p)}') from exc
        iterations += 1
    point = maps.lift(p)
    if full_output:
        return point, {'iterations': iterations, 'residual': norm}
    return point


def floquet(model, h, fixed_point, fd_step=None, sigma=1, maps=None):
    """
    Eigenvalues (alpha, beta) of the finite-difference DT at the fixed point.

    A complex pair is reported with a warning; it lies outside the saddle
    hypotheses rather than being an error.
    """
    maps = maps or LoopReturnMap(model, h, sigma)
    result = floquet_from_jacobian(maps.jacobian(fixed_point.chart, fd_step))
    if not result.is_real:
        logger.warning(f'Complex Floquet pair at h={h:g}: {result.alpha}, {result.beta}')
    logger.info(f'Floquet pair at h={h:g}: alpha={result.alpha:.6g}, beta={result.beta:.6g}')
    return result


def distance_to_polyline(points, polyline):
    """Distance from each point to the polyline (segments between consecutive vertices)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    polyline = np.atleast_2d(np.asarray(polyline, dtype=float))
    if len(polyline) == 1:
        return np.linalg.norm(points - polyline[0], axis=1)
    a, b = polyline[:-1], polyline[1:]
    ab = b - a
    lengths = np.maximum(np.sum(ab * ab, axis=1), 1e-300)
    ap = points[:, None, :] - a[None, :, :]
    s = np.clip(np.sum(ap * ab[None, :, :], axis=2) / lengths[None, :], 0.0, 1.0)
    nearest = a[None, :, :] + s[:, :, None] * ab[None, :, :]
    return np.min(np.linalg.norm(points[:, None, :] - nearest, axis=2), axis=1)


def manifold_curve(model, h, record, side, n_points=48, arc_budget=None, maps=None, max_levels=30):
    """
    Grow Lambda^u (iterating T) or Lambda^s (iterating T^{-1}) from a
    fundamental segment on the eigen-direction at distance MANIFOLD_SEED.

    Images of the segment are appended level by level, gaps wider than
    4*eps/n_points are refined from the fundamental segment, and growth stops
    at the boundary of B_eps or once the arclength exceeds ``arc_budget``.
    """
    maps = maps or LoopReturnMap(model, h, record.sigma)
    pair = record.floquet
    if pair is None or not pair.is_saddle:
        raise ValueError('manifold_curve needs a saddle Floquet pair')
    unstable = side == Side.UNSTABLE
    multiplier = float(pair.beta if unstable else pair.alpha)
    power = 2 if multiplier < 0 else 1
    factor = abs(multiplier) ** power if unstable else abs(multiplier) ** -power
    step = maps.image if unstable else maps.preimage
    origin = record.fixed_point.chart
    direction = pair.vector(side)
    seed = conf.get('MANIFOLD_SEED')
    max_gap = 4.0 * maps.eps / n_points

    def evaluate(radius, level):
        p = origin + radius * direction
        for _ in range(level * power):
            p = step(p)
            if p is None:
                return None
        return p

    radii = list(np.geomspace(seed, seed * factor, n_points))
    branch = [origin + r * direction for r in radii]
    truncated = reached = False
    level = 0
    while level < max_levels and not (truncated or reached):
        level += 1
        images = []
        for radius in radii:
            p = evaluate(radius, level)
            if p is None:
                truncated = True
                break
            if np.hypot(*(p - origin)) > maps.eps:
                reached = True
                break
            if images and np.linalg.norm(p - images[-1][1]) > max_gap:
                images.extend(_refine(evaluate, images[-1], (radius, p), level, max_gap))
            images.append((radius, p))
        branch.extend(p for _, p in images[1:])
        if arc_budget is not None and _arclength(branch) > arc_budget:
            break
    if truncated:
        logger.warning(f'{side} manifold at h={h:g} truncated at level {level}: the map escaped')
    curve = ManifoldCurve(side, origin, np.array(branch), direction, multiplier, level, truncated, reached)
    logger.info(f'{side} manifold at h={h:g}: {len(branch)} points, arclength {curve.arclength:.3e}')
    return curve


def _refine(evaluate, left, right, level, max_gap, depth=4):
    if depth == 0:
        return []
    radius = math.sqrt(left[0] * right[0])
    p = evaluate(radius, level)
    if p is None:
        return []
    middle = (radius, p)
    out = []
    if np.linalg.norm(p - left[1]) > max_gap:
        out.extend(_refine(evaluate, left, middle, level, max_gap, depth - 1))
    out.append(middle)
    if np.linalg.norm(right[1] - p) > max_gap:
        out.extend(_refine(evaluate, middle, right, level, max_gap, depth - 1))
    return out


def _arclength(points):
    points = np.asarray(points)
    return float(np.sum(np.linalg.norm(np.diff(points, axis=0), axis=1)))


def manifold_invariance(maps, curve):
    """
    Largest distance from T(p) to the unstable curve over branch points p
    whose image stays in B_eps.
    """
    images = [maps.image(p) for p in curve.branch]
    images = [q for q in images if q is not None]
    if not images:
        return 0.0
    return float(np.max(distance_to_polyline(images, curve.points)))


class EscapeLabel:
    RETAINED = 'retained'
    RETAINED_FORWARD = 'retained-forward'
    RETAINED_BACKWARD = 'retained-backward'
    ESCAPED = 'escaped'


ESCAPE_HEADER = ('u1', 'v1', 'fwd_escape_iters', 'bwd_escape_iters', 'label')


@dataclass(frozen=True)
class EscapeRow:
    i: int
    j: int
    u1: float
    v1: float
    forward: int = None
    backward: int = None

    @property
    def label(self):
        if self.forward is None and self.backward is None:
            return EscapeLabel.RETAINED
        if self.forward is None:
            return EscapeLabel.RETAINED_FORWARD
        if self.backward is None:
            return EscapeLabel.RETAINED_BACKWARD
        return EscapeLabel.ESCAPED

    def csv_row(self):
        return [self.u1, self.v1, -1 if self.forward is None else self.forward,
                -1 if self.backward is None else self.backward, self.label]


class _EscapeTask:
    def __init__(self, maps, max_iters):
        self.maps = maps
        self.max_iters = max_iters

    def _count(self, step, p):
        for n in range(self.max_iters):
            p = step(p)
            if p is None:
                return n
        return None

    def __call__(self, item):
        i, j, u1, v1 = item
        p = np.array([u1, v1])
        return EscapeRow(i, j, u1, v1, self._count(self.maps.image, p), self._count(self.maps.preimage, p))


@dataclass
class EscapeReport:
    """
    Iterations to escape under T and T^{-1} for the grid of B_eps. An entry of
    None (written as -1) means the point stayed in B_eps for max_iters steps.
    """
    model_id: str
    h: float
    eps: float
    grid_n: int
    max_iters: int
    rows: list = dataclass_field(default_factory=list)

    @property
    def spacing(self):
        return self.eps / (self.grid_n // 2)

    def counts(self):
        counts = {label: 0 for label in (EscapeLabel.RETAINED, EscapeLabel.RETAINED_FORWARD,
                                         EscapeLabel.RETAINED_BACKWARD, EscapeLabel.ESCAPED)}
        for row in self.rows:
            counts[row.label] += 1
        return counts

    def retained(self, direction):
        attr = 'forward' if direction == 'forward' else 'backward'
        return [r for r in self.rows if getattr(r, attr) is None]

    @property
    def all_escape(self):
        return all(r.forward is not None and r.backward is not None for r in self.rows)

    def symmetric(self):
        index = {(r.i, r.j): r for r in self.rows}
        return all(
            (index[(-r.i, -r.j)].forward, index[(-r.i, -r.j)].backward) == (r.forward, r.backward)
            for r in self.rows if (-r.i, -r.j) in index
        )

    def cone_sorting(self, m):
        """Retained-forward points outside Y1 and the origin, retained-backward points inside Y1."""
        forward = [r for r in self.retained('forward') if (r.u1, r.v1) != (0.0, 0.0) and not in_y1(r.u1, r.v1, m)]
        backward = [r for r in self.retained('backward') if in_y1(r.u1, r.v1, m)]
        return {'forward_outside_Y1': forward, 'backward_inside_Y1': backward}

    def tube_violations(self, curve, direction, width=None):
        """Retained points farther than ``width`` (default two grid spacings) from ``curve``."""
        width = 2.0 * self.spacing if width is None else width
        rows = self.retained(direction)
        if not rows:
            return []
        distances = distance_to_polyline([(r.u1, r.v1) for r in rows], curve.points)
        return [r for r, dist in zip(rows, distances) if dist > width]

    def csv_rows(self):
        return [r.csv_row() for r in self.rows]

    def summary(self):
        return {
            'model_id': self.model_id, 'h': self.h, 'eps': self.eps, 'grid_n': self.grid_n,
            'max_iters': self.max_iters, 'counts': self.counts(), 'all_escape': self.all_escape,
            'symmetric': self.symmetric(),
        }


def escape_census(model, h, eps=None, grid_n=64, max_iters=None, sigma=1, workers=None, maps=None):
    """
    Iterate T and T^{-1} from every grid point of B_eps and record the number
    of steps before the orbit leaves B_eps or the map becomes undefined.

    Returns
    -------
    EscapeReport
    """
    maps = maps or LoopReturnMap(model, h, sigma, eps=eps)
    max_iters = conf.get('MAX_ESCAPE_ITERS') if max_iters is None else max_iters
    workers = conf.get('WORKERS') if workers is None else workers
    items = list(census_grid(maps.eps, grid_n))
    rows = parallel_map(_EscapeTask(maps, max_iters), items, workers)
    report = EscapeReport(model.name, h, maps.eps, grid_n, max_iters, rows)
    logger.info(f'Escape census of {model.name} at h={h:g}: {report.counts()}')
    return report


class _ResidualTask:
    def __init__(self, maps, power):
        self.maps = maps
        self.power = power

    def __call__(self, item):
        i, j, u1, v1 = item
        p = np.array([u1, v1])
        image = _power_image(self.maps, p, self.power)
        return (float(np.linalg.norm(image - p)) if image is not None else math.inf), (u1, v1)


@dataclass
class FixedPointScan:
    power: int
    points: list
    candidates: int

    @property
    def distinct(self):
        return len(self.points)

    def only_origin(self, tol=1e-8):
        return all(math.hypot(p.u1, p.v1) <= tol for p in self.points)

    def to_dict(self):
        return {'power': self.power, 'candidates': self.candidates,
                'points': [[p.u1, p.v1] for p in self.points]}


def fixed_point_scan(model, h, eps=None, grid_n=64, power=1, sigma=1, workers=None, maps=None, tol=1e-10):
    """
    Fixed points of T^power on B_eps: grid points whose residual |T^power(p) - p|
    is within the Lipschitz reach of a fixed point seed Newton's method, and the
    distinct limits are collected.
    """
    maps = maps or LoopReturnMap(model, h, sigma, eps=eps)
    workers = conf.get('WORKERS') if workers is None else workers
    spacing = maps.eps / (grid_n // 2)
    try:
        lipschitz = float(np.linalg.norm(maps.jacobian(), 2)) ** power
    except SaddleflowError:
        lipschitz = 1.0
    reach = (1.0 + lipschitz) * spacing
    residuals = parallel_map(_ResidualTask(maps, power), list(census_grid(maps.eps, grid_n)), workers)
    candidates = sorted((r, p) for r, p in residuals if r <= reach)
    found = []
    for _, p in candidates:
        if any(math.hypot(p[0] - q.u1, p[1] - q.v1) <= spacing for q in found):
            continue
        try:
            point = newton_fixed_point(model, h, p, tol=tol, maps=maps, power=power)
        except (LeftDomain, NewtonDiverged):
            continue
        if all(math.hypot(point.u1 - q.u1, point.v1 - q.v1) > 1e-8 for q in found):
            found.append(point)
    logger.info(f'Fixed points of T^{power} at h={h:g}: {[(q.u1, q.v1) for q in found]} from {len(candidates)} seeds')
    return FixedPointScan(power, found, len(candidates))


def orbit_record(model, h, sigma=1, fd_step=None, manifolds=True, n_points=48, maps=None):
    """
    Full analysis of L_h: planar orbit, Newton fixed point, Floquet pair and,
    for a saddle, both manifold curves.
    """
    record = planar_periodic_orbit(model, h, sigma=sigma)
    maps = maps or LoopReturnMap(model, h, sigma)
    point, info = newton_fixed_point(model, h, record.fixed_point.chart, maps=maps, fd_step=fd_step, full_output=True)
    record.fixed_point = point
    record.residual = max(record.residual, info['residual'])
    record.newton_iterations = info['iterations']
    record.floquet = floquet(model, h, point, fd_step=fd_step, maps=maps)
    if not record.floquet.is_real:
        record.flags.append('complex Floquet pair: outside the saddle hypotheses')
    if manifolds and record.is_saddle:
        for side in (Side.UNSTABLE, Side.STABLE):
            curve = manifold_curve(model, h, record, side, n_points=n_points, maps=maps)
            record.manifolds[side] = curve
            if curve.truncated:
                record.flags.append(f'{side} manifold truncated')
    return record


def zero_level_exploration(model, eps=None, grid_n=64, sigma=1, workers=None):
    """
    Outcome labels of the return map at h = 0. Exploratory: nothing about this
    level is asserted.
    """
    logger.info(f'Exploring h = 0 for {model.name}; outcomes are reported without assertions')
    return classify_domain(model, 0.0, eps=eps, grid_n=grid_n, sigma=sigma, workers=workers)