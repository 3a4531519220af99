"""
Boundary-value problem near the saddle.

Given (u1(0), u2(0), v1(tau), v2(tau)) the solution is the fixed point of the
integral operator

    u_k(t) = e^{-l_k t} u_k0 + int_0^t e^{-l_k (t-s)} F_k(x(s)) ds
    v_k(t) = e^{-l_k (tau-t)} v_k,tau - int_t^tau e^{-l_k (s-t)} G_k(x(s)) ds

with (F, G) = field(x) - L x. Each sweep evaluates the integrals with composite
Gauss-Lobatto panels and exact exponential recurrences between panels.
"""
import logging
import math
from dataclasses import dataclass, field as dataclass_field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline
from scipy.optimize import root

from . import conf
from .exceptions import MaxIterExceeded, NewtonDiverged, NotContracting
from .flow import parallel_map
from .models import CaseTag, PhaseState

logger = logging.getLogger(__name__)

COMPONENTS = ('xi1', 'xi2', 'zeta1', 'zeta2')


@dataclass(frozen=True)
class BvpProblem:
    """
    Attributes:
        model (ModelSpec): field to solve on.
        tau (float): transit time.
        u10, u20 (float): data at t = 0.
        v1tau, v2tau (float): data at t = tau.
        delta (float): size of the box Omega = {max |x_i| <= delta}.
    """
    model: object
    tau: float
    u10: float
    u20: float
    v1tau: float
    v2tau: float
    delta: float

    def __post_init__(self):
        if not self.tau > 0.0:
            raise ValueError(f'tau must be positive, got {self.tau}')
        if not self.delta > 0.0:
            raise ValueError(f'delta must be positive, got {self.delta}')
        largest = max(abs(self.u10), abs(self.u20), abs(self.v1tau), abs(self.v2tau))
        if largest > self.delta * (1.0 + 1e-12):
            raise ValueError(f'Boundary data {largest:g} exceeds delta={self.delta:g}')

    @property
    def boundary(self):
        return np.array([self.u10, self.u20, self.v1tau, self.v2tau])

    def linear_part(self, times):
        """The solution of the linearized problem on ``times``, shape (n, 4)."""
        l1, l2 = self.model.eigen.lambda1, self.model.eigen.lambda2
        return np.column_stack([
            np.exp(-l1 * times) * self.u10,
            np.exp(-l2 * times) * self.u20,
            np.exp(-l1 * (self.tau - times)) * self.v1tau,
            np.exp(-l2 * (self.tau - times)) * self.v2tau,
        ])


@dataclass
class BvpSolution:
    """
    Grid solution of a ``BvpProblem``.

    ``xi1``, ``xi2``, ``zeta1`` and ``zeta2`` are the differences between the
    solution and the linear part, component by component.
    """
    problem: BvpProblem
    times: np.ndarray
    states: np.ndarray
    iterations: int
    contraction_ratio: float
    method: str = 'operator'
    history: list = dataclass_field(default_factory=list)

    @property
    def grid(self):
        return self.times

    @property
    def corrections(self):
        return self.states - self.problem.linear_part(self.times)

    @property
    def xi1(self):
        return self.corrections[:, 0]

    @property
    def xi2(self):
        return self.corrections[:, 1]

    @property
    def zeta1(self):
        return self.corrections[:, 2]

    @property
    def zeta2(self):
        return self.corrections[:, 3]

    @property
    def samples(self):
        return [PhaseState.from_array(x, t) for t, x in zip(self.times, self.states)]

    def boundary_residuals(self):
        p = self.problem
        return {
            'u1(0)': abs(self.states[0, 0] - p.u10),
            'u2(0)': abs(self.states[0, 1] - p.u20),
            'v1(tau)': abs(self.states[-1, 2] - p.v1tau),
            'v2(tau)': abs(self.states[-1, 3] - p.v2tau),
        }

    def max_abs(self):
        return float(np.max(np.abs(self.states)))


def lobatto_nodes(n):
    """Gauss-Lobatto nodes on [-1, 1]: the endpoints and the roots of P'_{n-1}."""
    if n < 3:
        raise ValueError('Gauss-Lobatto panels need at least 3 nodes')
    interior = np.polynomial.legendre.Legendre.basis(n - 1).deriv().roots()
    return np.concatenate([[-1.0], np.sort(interior.real), [1.0]])


def spectral_integration_matrix(nodes):
    """
    S[i, j] = integral of the j-th Lagrange basis polynomial from -1 to nodes[i].
    """
    n = len(nodes)
    vander = np.vander(nodes, n, increasing=True)
    coeffs = np.linalg.inv(vander)
    powers = np.arange(1, n + 1)
    antideriv = (nodes[:, None] ** powers - (-1.0) ** powers) / powers
    return antideriv @ coeffs


class PanelGrid:
    """Composite Gauss-Lobatto grid on [0, tau] with uniform panels."""

    def __init__(self, tau, n_nodes=None, n_points=None):
        n_nodes = conf.get('BVP_NODES') if n_nodes is None else int(n_nodes)
        n_points = conf.get('LOBATTO_POINTS') if n_points is None else int(n_points)
        self.tau = float(tau)
        self.n_points = n_points
        self.n_panels = max(1, int(math.ceil((n_nodes - 1) / (n_points - 1))))
        self.width = self.tau / self.n_panels
        reference = lobatto_nodes(n_points)
        self.local = 0.5 * self.width * (reference + 1.0)
        self.weights = 0.5 * self.width * spectral_integration_matrix(reference)
        starts = np.arange(self.n_panels) * self.width
        self.panel_times = starts[:, None] + self.local[None, :]
        self.panel_times[-1, -1] = self.tau
        self.times = np.concatenate([self.panel_times[:, :-1].ravel(), [self.tau]])

    def to_panels(self, values):
        """(N, k) node values -> (P, n, k) panel values with shared endpoints."""
        P, n = self.n_panels, self.n_points
        idx = np.arange(P)[:, None] * (n - 1) + np.arange(n)[None, :]
        return values[idx]

    def from_panels(self, panels):
        return np.concatenate([panels[:, :-1].reshape(-1, panels.shape[-1]), panels[-1:, -1]], axis=0)


def _sweep(problem, grid, states):
    """One application of the integral operator to grid values ``states``."""
    model = problem.model
    rates = np.array([model.eigen.lambda1, model.eigen.lambda2])
    remainder = model.field(states) - model.eigen.linear_rates() * states
    panels = grid.to_panels(remainder)
    local = grid.local
    S = grid.weights
    total = S[-1]

    # forward components u1, u2
    grow = np.exp(np.outer(local, rates))                  # e^{l (s - a)}, shape (n, 2)
    decay = np.exp(-np.outer(local, rates))                # e^{-l (t_i - a)}
    F = panels[:, :, :2] * grow[None]                      # (P, n, 2)
    partial = np.einsum('ij,pjk->pik', S, F)               # (P, n, 2)
    kick = np.einsum('j,pjk->pk', total, F) * decay[-1]   # contribution over a full panel
    u_start = np.empty((grid.n_panels, 2))
    current = problem.boundary[:2].copy()
    for p in range(grid.n_panels):
        u_start[p] = current
        current = decay[-1] * current + kick[p]
    u_panels = decay[None] * (u_start[:, None, :] + partial)

    # backward components v1, v2
    shrink = np.exp(-np.outer(grid.width - local, rates))  # e^{-l (b - s)}
    G = panels[:, :, 2:] / shrink[None]
    R = total[None, :] - S                                 # integral from s_i to b
    tail = np.einsum('ij,pjk->pik', R, G)
    kick_back = np.einsum('j,pjk->pk', total, G)
    v_end = np.empty((grid.n_panels, 2))
    current = problem.boundary[2:].copy()
    for p in range(grid.n_panels - 1, -1, -1):
        v_end[p] = current
        current = shrink[0] * (current - kick_back[p])
    v_panels = shrink[None] * (v_end[:, None, :] - tail)

    return grid.from_panels(np.concatenate([u_panels, v_panels], axis=2))


def apply_operator(problem, solution, n_nodes=None):
    """Apply one sweep of the integral operator to ``solution`` (fixed-point check)."""
    grid = PanelGrid(problem.tau, n_nodes=n_nodes if n_nodes is not None else len(solution.times))
    if grid.times.shape != solution.times.shape:
        raise ValueError('solution grid does not match the panel layout')
    return _sweep(problem, grid, solution.states)


def solve_bvp(problem, tol=None, max_iter=None, n_nodes=None, initial='zero'):
    """
    Iterate the integral operator to its fixed point.

    Parameters
    ----------
    problem : BvpProblem
    tol : float, optional
        Stop when successive iterates differ by at most ``tol`` in sup norm.
    max_iter : int, optional
        Defaults to the BVP_MAX_ITER setting.
    n_nodes : int, optional
        Grid size; defaults to BVP_NODES.
    initial : {'zero', 'linear'} or ndarray
        Starting function.

    Returns
    -------
    BvpSolution
        With the number of sweeps and the largest observed ratio of successive
        sup-norm differences.

    Raises
    ------
    NotContracting
        If successive differences stop shrinking (delta too large).
    MaxIterExceeded
        If ``max_iter`` sweeps do not reach ``tol``.
    """
    tol = conf.get('TOL') if tol is None else tol
    max_iter = conf.get('BVP_MAX_ITER') if max_iter is None else int(max_iter)
    grid = PanelGrid(problem.tau, n_nodes=n_nodes)
    if isinstance(initial, str):
        states = np.zeros((grid.times.size, 4)) if initial == 'zero' else problem.linear_part(grid.times)
    else:
        states = np.asarray(initial, dtype=float)

    diffs = []
    ratio = 0.0
    with np.errstate(over='ignore', invalid='ignore'):
        for iteration in range(1, max_iter + 1):
            updated = _sweep(problem, grid, states)
            diff = float(np.max(np.abs(updated - states)))
            states = updated
            if not math.isfinite(diff):
                raise NotContracting(f'Operator iterates diverged at sweep {iteration}', ratio=math.inf)
            if diffs and diffs[-1] > tol:
                ratio = max(ratio, diff / diffs[-1])
            diffs.append(diff)
            logger.debug(f'Sweep {iteration}: sup-norm change {diff:.3e}')
            if diff <= tol:
                break
            if len(diffs) >= 4 and diff >= diffs[-2] and diffs[-2] >= diffs[-3]:
                logger.error(f'Operator is not contracting for delta={problem.delta:g}, tau={problem.tau:g}')
                raise NotContracting(
                    f'Operator is not contracting (ratio {diff / diffs[-2]:.3g}) for delta={problem.delta:g}',
                    ratio=diff / diffs[-2],
                )
        else:
            raise MaxIterExceeded(f'No convergence to {tol:g} within {max_iter} sweeps', last_change=diffs[-1])

    if ratio >= 1.0:
        raise NotContracting(f'Empirical contraction ratio {ratio:.3g} >= 1', ratio=ratio)
    solution = BvpSolution(problem, grid.times, states, iteration, ratio, history=diffs)
    if solution.max_abs() > problem.delta:
        logger.warning(f'BVP solution leaves the box: max |x| = {solution.max_abs():.3g} > delta={problem.delta:g}')
    return solution


def shooting_solution(problem, tol=1e-13, times=None):
    """
    Solve the same problem by shooting on (v1(0), v2(0)).

    The forward flow is matched to (v1(tau), v2(tau)) with ``scipy.optimize.root``
    and sampled on ``times`` (by default the panel grid of ``solve_bvp``).

    Raises
    ------
    NewtonDiverged
        If the root finder fails.
    """
    model = problem.model
    times = PanelGrid(problem.tau).times if times is None else np.asarray(times)
    l1, l2 = model.eigen.lambda1, model.eigen.lambda2
    guess = np.array([np.exp(-l1 * problem.tau) * problem.v1tau, np.exp(-l2 * problem.tau) * problem.v2tau])

    def rhs(t, x):
        return model.field(x)

    def start(v0):
        return np.array([problem.u10, problem.u20, v0[0], v0[1]])

    def mismatch(v0):
        sol = solve_ivp(rhs, (0.0, problem.tau), start(v0), method='DOP853', rtol=2.5e-14, atol=1e-16)
        return sol.y[2:, -1] - problem.boundary[2:]

    result = root(mismatch, guess, method='hybr', tol=tol)
    if not result.success or np.max(np.abs(mismatch(result.x))) > 1e-11:
        raise NewtonDiverged(f'Shooting did not converge: {result.message}')
    sol = solve_ivp(
        rhs, (0.0, problem.tau), start(result.x), method='DOP853', rtol=2.5e-14, atol=1e-16, dense_output=True,
    )
    states = sol.sol(times).T
    logger.debug(f'Shooting converged after {result.nfev} evaluations')
    return BvpSolution(problem, times, states, int(result.nfev), float('nan'), method='shooting')


def bvp_residual(model, solution):
    """
    Defect max |dx/dt - field(x)| of a grid solution, derivative from a cubic spline.

    Returns
    -------
    (float, dict)
        The defect and the four boundary residuals.
    """
    spline = CubicSpline(solution.times, solution.states, axis=0)
    derivative = spline.derivative()(solution.times)
    defect = float(np.max(np.abs(derivative - model.field(solution.states))))
    return defect, solution.boundary_residuals()


def contraction_threshold(model, tau, boundary_fractions=(1.0, 1.0, 1.0, 1.0), lo=1e-3, hi=1.0,
                          target=0.9, iterations=20, n_nodes=None):
    """
    Largest delta in [lo, hi] (to bisection accuracy) whose operator contracts with ratio < target.

    Boundary data are ``boundary_fractions * delta``.
    """
    fractions = np.asarray(boundary_fractions, dtype=float)

    def contracts(delta):
        problem = BvpProblem(model, tau, *(fractions * delta), delta=delta)
        try:
            solution = solve_bvp(problem, tol=1e-10, max_iter=80, n_nodes=n_nodes)
        except (NotContracting, MaxIterExceeded):
            return False
        return solution.contraction_ratio < target

    if not contracts(lo):
        raise NotContracting(f'Operator does not contract even at delta={lo:g}', ratio=None)
    if contracts(hi):
        return hi
    for _ in range(iterations):
        mid = math.sqrt(lo * hi)
        if contracts(mid):
            lo = mid
        else:
            hi = mid
    logger.info(f'Contraction threshold of {model.name} at tau={tau:g}: delta ~ {lo:.4g}')
    return lo


# Bound templates. Each term is a function of (t, tau, delta, u10, v1tau, l1, l2);
# a component's template is the sum of its terms.

def _lead_u(t, tau, d, u10, v1, l1, l2):
    return np.exp(-l1 * t) * abs(u10) * d


def _lead_v(t, tau, d, u10, v1, l1, l2):
    return np.exp(-l1 * (tau - t)) * abs(v1) * d


def _square_u(t, tau, d, u10, v1, l1, l2):
    return np.exp(-l2 * t) * d * d


def _square_v(t, tau, d, u10, v1, l1, l2):
    return np.exp(-l2 * (tau - t)) * d * d


def _equal_cross_u(t, tau, d, u10, v1, l1, l2):
    return np.exp(-l1 * tau) * abs(v1) * d * np.ones_like(t)


def _equal_cross_v(t, tau, d, u10, v1, l1, l2):
    return np.exp(-l1 * tau) * abs(u10) * d * np.ones_like(t)


def _between_cross_u(t, tau, d, u10, v1, l1, l2):
    return np.exp(-l1 * (tau - t) - l2 * t) * d * abs(v1)


def _between_cross_v(t, tau, d, u10, v1, l1, l2):
    return np.exp(-l2 * (tau - t) - l1 * t) * d * abs(u10)


def _resonant_cross_u(t, tau, d, u10, v1, l1, l2):
    return t * np.exp(-l1 * (tau + t)) * abs(v1) * d


def _resonant_cross_v(t, tau, d, u10, v1, l1, l2):
    return (tau - t) * np.exp(-l1 * (2.0 * tau - t)) * abs(u10) * d


def _resonant_u(t, tau, d, u10, v1, l1, l2):
    return t * np.exp(-2.0 * l1 * t) * u10 * u10


def _resonant_v(t, tau, d, u10, v1, l1, l2):
    return (tau - t) * np.exp(-2.0 * l1 * (tau - t)) * v1 * v1


def _beyond_cross_u(t, tau, d, u10, v1, l1, l2):
    return np.exp(-l1 * (tau + t)) * d * abs(v1)


def _beyond_cross_v(t, tau, d, u10, v1, l1, l2):
    return np.exp(-l1 * (2.0 * tau - t)) * d * abs(u10)


TEMPLATES = {
    CaseTag.EQUAL: {
        'xi1': (('lead', _lead_u), ('cross', _equal_cross_u)),
        'xi2': (('square', _square_u),),
        'zeta1': (('lead', _lead_v), ('cross', _equal_cross_v)),
        'zeta2': (('square', _square_v),),
    },
    CaseTag.BETWEEN: {
        'xi1': (('lead', _lead_u), ('cross', _between_cross_u)),
        'xi2': (('square', _square_u),),
        'zeta1': (('lead', _lead_v), ('cross', _between_cross_v)),
        'zeta2': (('square', _square_v),),
    },
    CaseTag.RESONANT2: {
        'xi1': (('lead', _lead_u), ('cross', _resonant_cross_u)),
        'xi2': (('resonant', _resonant_u), ('square', _square_u)),
        'zeta1': (('lead', _lead_v), ('cross', _resonant_cross_v)),
        'zeta2': (('resonant', _resonant_v), ('square', _square_v)),
    },
    CaseTag.BEYOND2: {
        'xi1': (('lead', _lead_u), ('cross', _beyond_cross_u)),
        'xi2': (('square', _square_u),),
        'zeta1': (('lead', _lead_v), ('cross', _beyond_cross_v)),
        'zeta2': (('square', _square_v),),
    },
}


def template_values(case_tag, component, problem, times, ablate=()):
    """Bound template of ``component`` on ``times``; terms named ``component.term`` in ``ablate`` are dropped."""
    eigen = problem.model.eigen
    total = np.zeros_like(times, dtype=float)
    for name, term in TEMPLATES[CaseTag(case_tag)][component]:
        if f'{component}.{name}' in ablate:
            continue
        total = total + term(times, problem.tau, problem.delta, problem.u10, problem.v1tau,
                             eigen.lambda1, eigen.lambda2)
    return total


@dataclass(frozen=True)
class SamplePlan:
    """
    Grid of BVP samples for the estimate checks.

    Attributes:
        deltas (tuple): decreasing box sizes, at least three.
        taus (tuple): transit times at the largest delta.
        boundary (tuple): 4-tuples of fractions of delta for (u10, u20, v1tau, v2tau).
        tau_growth (float): taus scale as (deltas[0] / delta) ** tau_growth.
        floor (float): template values below this are excluded from ratios.
        stability (float): allowed relative growth of Mhat between successive deltas.
    """
    deltas: tuple = (0.1, 0.05, 0.025)
    taus: tuple = (2.0, 4.0, 8.0)
    boundary: tuple = ((1.0, 1.0, 1.0, 1.0), (1.0, -1.0, 0.5, -0.5), (-0.5, 1.0, -1.0, 0.25))
    tau_growth: float = 0.0
    floor: float = None
    stability: float = 0.25

    def __post_init__(self):
        deltas = tuple(float(d) for d in self.deltas)
        if len(deltas) < 3 or any(b >= a for a, b in zip(deltas, deltas[1:])):
            raise ValueError('SamplePlan needs at least three strictly decreasing deltas')
        object.__setattr__(self, 'deltas', deltas)

    def problems(self, model):
        for delta in self.deltas:
            scale = (self.deltas[0] / delta) ** self.tau_growth
            for tau in self.taus:
                for fractions in self.boundary:
                    data = np.asarray(fractions, dtype=float) * delta
                    yield BvpProblem(model, tau * scale, *data, delta=delta)


@dataclass
class EstimateReport:
    """
    Per-component supremum of |correction| / template over the plan.

    ``rows`` holds one dict per (component, delta, tau) with the local supremum;
    ``mhat`` maps component -> list of per-delta suprema.
    """
    case_tag: str
    model_id: str
    deltas: list
    rows: list
    mhat: dict
    ablate: tuple
    curves: list
    stability: float

    def growth(self, component):
        values = self.mhat[component]
        if values[0] == 0.0:
            return 0.0 if values[-1] == 0.0 else math.inf
        return values[-1] / values[0]

    def variation(self, component):
        values = [v for v in self.mhat[component] if v > 0.0]
        if not values:
            return 0.0
        return max(values) / min(values) - 1.0

    def is_stable(self, component):
        values = self.mhat[component]
        if not all(math.isfinite(v) for v in values):
            return False
        return all(b <= (1.0 + self.stability) * a for a, b in zip(values, values[1:]) if a > 0.0) and \
            not any(a == 0.0 and b > 0.0 for a, b in zip(values, values[1:]))

    @property
    def stable(self):
        return all(self.is_stable(c) for c in COMPONENTS)

    def to_dict(self):
        return {
            'case_tag': self.case_tag,
            'model_id': self.model_id,
            'ablate': list(self.ablate),
            'deltas': self.deltas,
            'mhat': self.mhat,
            'growth': {c: self.growth(c) for c in COMPONENTS},
            'variation': {c: self.variation(c) for c in COMPONENTS},
            'stable': {c: self.is_stable(c) for c in COMPONENTS},
            'rows': self.rows,
        }


def _solve_sample(problem):
    return solve_bvp(problem)


def verify_estimates(case_tag, model, sample_plan=None, ablate=(), workers=None):
    """
    Compare BVP corrections with the bound templates of the case.

    Every sample of ``sample_plan`` is solved with ``solve_bvp``; for each
    component the ratio |correction| / template is taken over grid nodes whose
    template exceeds the floor, and its supremum is reported per delta.

    Returns
    -------
    EstimateReport
    """
    case_tag = CaseTag(case_tag)
    plan = sample_plan or SamplePlan()
    floor = conf.get('TEMPLATE_FLOOR') if plan.floor is None else plan.floor
    workers = conf.get('WORKERS') if workers is None else workers
    problems = list(plan.problems(model))
    solutions = parallel_map(_solve_sample, problems, workers)

    suprema = {c: {d: 0.0 for d in plan.deltas} for c in COMPONENTS}
    rows = {}
    curves = []
    for index, solution in enumerate(solutions):
        problem = solution.problem
        corrections = solution.corrections
        curve = {'delta': problem.delta, 'tau': problem.tau, 't': solution.times}
        for k, component in enumerate(COMPONENTS):
            template = template_values(case_tag, component, problem, solution.times, ablate)
            mask = template > floor
            ratios = np.zeros_like(template)
            ratios[mask] = np.abs(corrections[mask, k]) / template[mask]
            top = float(np.max(ratios)) if mask.any() else 0.0
            suprema[component][problem.delta] = max(suprema[component][problem.delta], top)
            key = (component, problem.delta, problem.tau)
            rows[key] = max(rows.get(key, 0.0), top)
            curve[component] = ratios
        if index % len(plan.boundary) == 0:
            curves.append(curve)

    report = EstimateReport(
        case_tag=case_tag.value,
        model_id=model.name,
        deltas=list(plan.deltas),
        rows=[{'component': c, 'delta': d, 'tau': t, 'Mhat': v} for (c, d, t), v in sorted(rows.items())],
        mhat={c: [suprema[c][d] for d in plan.deltas] for c in COMPONENTS},
        ablate=tuple(ablate),
        curves=curves,
        stability=plan.stability,
    )
    logger.info(f'Estimates for {case_tag.value} on {model.name}: Mhat={report.mhat}, stable={report.stable}')
    return report
