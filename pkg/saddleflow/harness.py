"""
Orchestration of the management commands.

Each ``run_<command>`` function takes a validated ``ExperimentConfig`` and an
``ExperimentRun`` and writes its reports through the run; the run collects
the manifest and the failed assertions.
"""
import logging
import math
from pathlib import Path

import numpy as np

from . import conf
from .exceptions import CheckFailed, NumericalError, SaddleflowError
from .figure8 import ITINERARY_HEADER, OuterReturnMap, figure_eight_census, follow_itinerary
from .models import ModelKind, check_structure
from .orbits import (
    ESCAPE_HEADER, Side, escape_census, fixed_point_scan, manifold_invariance, orbit_record, zero_level_exploration,
)
from .poincare import (
    CENSUS_HEADER, LoopReturnMap, chain_rule_jacobian, classify_domain, coefficient_sweep, dual_census,
    flight_time_check, global_map_coeffs, global_map_taylor_check, return_map_jacobian,
)
from .reports import RunManifest, write_csv, write_json, write_trajectory
from .shilnikov import (
    COMPONENTS, BvpProblem, SamplePlan, bvp_residual, contraction_threshold, shooting_solution, solve_bvp,
    verify_estimates,
)

logger = logging.getLogger(__name__)

SWEEP_HEADER = ('h', 'u1', 'v1', 'alpha', 'beta', 'retained_forward', 'retained_backward', 'flight_time_error')
ASYMPTOTICS_HEADER = ('delta', 'u10', 'v10', 'tau', 'predicted', 'measured', 'rel_error')
BVP_HEADER = ('tau', 'u10', 'u20', 'v1tau', 'v2tau', 'iterations', 'contraction_ratio', 'shooting_diff', 'defect')
CURVE_HEADER = ('delta', 'tau', 't') + COMPONENTS
MANIFOLD_HEADER = ('side', 'index', 'u1', 'v1')


def level_tag(h):
    """File-name fragment of a level, e.g. ``h-1.000e-03``."""
    return f'h{h:+.3e}'


class ExperimentRun:
    """
    Output directory, manifest and assertion ledger of one command run.

    Methods:
        json(name, payload): Write a JSON report when the json format is enabled.
        csv(name, header, rows): Write a CSV table when the csv format is enabled.
        check(condition, message): Record a failed assertion.
        finish(): Write the manifest and raise CheckFailed for failed assertions.
    """

    def __init__(self, command, config):
        self.command = command
        self.config = config
        self.directory = Path(config.output['directory'])
        self.formats = set(config.output['formats'])
        self.manifest = RunManifest(command, config.config_hash, conf.get('ARTIFACT_VERSION'))
        self.failures = []
        self.messages = []

    def stage(self, name):
        return self.manifest.stage(name)

    def json(self, name, payload):
        if 'json' in self.formats:
            write_json(self.directory / name, payload)
            self.manifest.add(name)

    def csv(self, name, header, rows):
        if 'csv' in self.formats:
            write_csv(self.directory / name, header, rows)
            self.manifest.add(name)

    def trajectory(self, name, trajectory):
        if 'csv' in self.formats and trajectory is not None:
            write_trajectory(self.directory / name, trajectory)
            self.manifest.add(name)

    def say(self, message):
        self.messages.append(message)

    def check(self, condition, message):
        if not condition:
            logger.error(f'{self.command}: {message}')
            self.failures.append(message)
        return condition

    def finish(self):
        self.manifest.write(self.directory)
        if self.failures:
            raise CheckFailed(f'{len(self.failures)} check(s) failed: {"; ".join(self.failures)}',
                              failures=list(self.failures))


def run_verify_structure(config, run):
    model = config.model
    with run.stage('structure'):
        report = check_structure(model, n_samples=config.numerics['n_samples'])
    run.json('structure.json', {'model': model.describe(), 'report': report.to_dict()})
    run.say(f'Structure of {model.name}: {"passed" if report.passed else "failed " + ", ".join(report.failed())}')
    run.check(report.passed, f'structural violations above tolerance: {", ".join(report.failed())}')


def run_bvp(config, run):
    """Operator solutions against the shooting oracle at delta_scale, then the estimate suite."""
    model = config.model
    numerics, bvp = config.numerics, config.bvp
    delta = model.delta_scale
    rows = []
    with run.stage('oracle'):
        for tau in bvp['tau_list']:
            for fractions in bvp['boundary']:
                problem = BvpProblem(model, tau, *(np.asarray(fractions) * delta), delta=delta)
                solution = solve_bvp(problem, tol=numerics['tol'], n_nodes=bvp['nodes'])
                oracle = shooting_solution(problem, times=solution.times)
                diff = float(np.max(np.abs(solution.states - oracle.states)))
                defect = _defect(model, solution)
                rows.append([tau, *problem.boundary, solution.iterations, solution.contraction_ratio, diff, defect])
                run.check(diff <= 1e-8, f'operator and shooting differ by {diff:.3e} at tau={tau:g}')
                run.check(solution.contraction_ratio < 0.9,
                          f'contraction ratio {solution.contraction_ratio:.3g} at tau={tau:g}')
    run.csv('bvp_samples.csv', BVP_HEADER, rows)

    plan = SamplePlan(deltas=tuple(bvp['deltas']), taus=tuple(bvp['tau_list']),
                      boundary=tuple(tuple(b) for b in bvp['boundary']), tau_growth=bvp['tau_growth'])
    with run.stage('estimates'):
        report = verify_estimates(model.eigen.case_tag, model, plan, ablate=tuple(bvp['ablate']),
                                  workers=numerics['workers'])
    with run.stage('contraction threshold'):
        tau = max(bvp['tau_list'])
        threshold = _threshold(model, tau, bvp['boundary'][0], bvp['nodes'])
    run.json('estimates.json', {**report.to_dict(), 'contraction_threshold': {'tau': tau, 'delta': threshold}})
    run.csv('estimate_curves.csv', CURVE_HEADER, _curve_rows(report.curves))
    run.say(f'Estimates for {report.case_tag}: stable={report.stable}')
    if not bvp['ablate'] and model.kind is ModelKind.LOCAL_NORMAL_FORM:
        run.check(report.stable, f'estimate constants grow across deltas: {report.mhat}')


def _threshold(model, tau, fractions, n_nodes):
    try:
        return contraction_threshold(model, tau, fractions, iterations=10, n_nodes=n_nodes)
    except NumericalError as exc:
        logger.warning(f'No contraction threshold at tau={tau:g}: {exc}')
        return None


def _defect(model, solution):
    defect, _ = bvp_residual(model, solution)
    return defect


def _curve_rows(curves):
    for curve in curves:
        for k, t in enumerate(curve['t']):
            yield [curve['delta'], curve['tau'], t, *(curve[c][k] for c in COMPONENTS)]


def _flight_samples(eps):
    return [(eps * s, eps * s) for s in (0.25, 0.5)] + [(eps * 0.5, eps * 0.125)]


def run_poincare(config, run):
    """Coefficients of T^glo, the chain-rule check and flight-time asymptotics per level."""
    model = config.model
    numerics = config.numerics
    payload = {'model': model.describe(), 'levels': {}}
    asymptotics = []
    for h in config.h_list:
        entry = {}
        with run.stage(f'coefficients {level_tag(h)}'):
            coeffs = global_map_coeffs(model, h, fd_step=numerics['fd_step'])
            entry['coeffs'] = coeffs.to_dict()
            entry['slope'] = coeffs.slope
            entry['taylor_ratio'] = global_map_taylor_check(model, h, coeffs)
        with run.stage(f'jacobians {level_tag(h)}'):
            try:
                direct = return_map_jacobian(model, h, fd_step=numerics['fd_step'])
                product = chain_rule_jacobian(model, h, fd_step=numerics['fd_step'])
            except SaddleflowError as exc:
                logger.warning(f'No Jacobian of T at h={h:g}: {exc}')
                entry['jacobian'] = {'error': type(exc).__name__, 'message': str(exc)}
            else:
                scale = np.maximum(np.abs(direct), 1e-300)
                agreement = float(np.max(np.abs(direct - product) / scale))
                entry['jacobian'] = {'direct': direct, 'chain_rule': product, 'relative_difference': agreement}
        with run.stage(f'flight times {level_tag(h)}'):
            report = flight_time_check(model, h, _flight_samples(numerics['eps']), deltas=numerics['deltas'],
                                       tol=numerics['tol'])
        entry['asymptotics'] = report.to_dict()
        asymptotics += [[r['delta'], r['u10'], r['v10'], r['tau'], r['predicted'], r['measured'], r['rel_error']]
                        for r in report.rows]
        payload['levels'][repr(h)] = entry
        run.say(f'h={h:g}: d/b={coeffs.slope:.6g}, flight-time errors {report.errors}')
    nonzero = [h for h in config.h_list if h != 0.0]
    if nonzero:
        with run.stage('coefficient sweep'):
            base, _, constant = coefficient_sweep(model, nonzero, fd_step=numerics['fd_step'])
        payload['sweep'] = {'base': base.to_dict(), 'C': constant}
    run.json('poincare.json', payload)
    run.csv('asymptotics.csv', ASYMPTOTICS_HEADER, asymptotics)


def run_domain(config, run):
    """Forward and inverse census per level; prints whether D is empty."""
    model = config.model
    numerics = config.numerics
    summaries = {}
    for h in config.h_list:
        tag = level_tag(h)
        kwargs = dict(eps=numerics['eps'], m=numerics['m'], grid_n=numerics['grid_n'], workers=numerics['workers'])
        with run.stage(f'census {tag}'):
            census = classify_domain(model, h, tol=numerics['tol'], **kwargs)
        with run.stage(f'inverse census {tag}'):
            inverse = dual_census(model, h, **kwargs)
        summary = {'forward': census.summary(), 'inverse': inverse.summary()}
        if not census.is_empty:
            summary['forward']['cone_ratio'] = census.cone_ratio_check()
            summary['forward']['expansion_constant'] = census.expansion_constant()
            try:
                coeffs = global_map_coeffs(model, h, fd_step=numerics['fd_step'])
            except SaddleflowError as exc:
                logger.warning(f'No limit slope at h={h:g}: {exc}')
            else:
                errors = census.slope_errors(coeffs.slope)
                summary['forward']['slope_error'] = max(errors, default=0.0)
        summaries[repr(h)] = summary
        run.csv(f'domain_{tag}.csv', CENSUS_HEADER, census.csv_rows())
        run.csv(f'domain_inverse_{tag}.csv', CENSUS_HEADER, inverse.csv_rows())
        run.say(f'h={h:g}: D empty: {"true" if census.is_empty else "false"}')
    run.json('domain.json', {'model': model.describe(), 'levels': summaries})


def return_maps(model, h, numerics):
    """The outer map for a figure-eight above the loops, the single-loop map otherwise."""
    if h > 0.0 and len(model.loops) > 1:
        return OuterReturnMap(model, h, eps=numerics['eps'], tol=numerics['tol'])
    return LoopReturnMap(model, h, eps=numerics['eps'], tol=numerics['tol'])


def _escape_entry(report):
    return {**report.summary(), 'retained_forward': len(report.retained('forward')),
            'retained_backward': len(report.retained('backward'))}


def run_orbit(config, run):
    """L_h with Newton fixed point, Floquet pair, escape census and fixed-point scans per level."""
    model = config.model
    numerics = config.numerics
    levels = {}
    for h in config.h_list:
        tag = level_tag(h)
        if h == 0.0:
            with run.stage(f'zero level {tag}'):
                census = zero_level_exploration(model, eps=numerics['eps'], grid_n=numerics['grid_n'],
                                                workers=numerics['workers'])
            run.csv(f'zero_level_{tag}.csv', CENSUS_HEADER, census.csv_rows())
            levels[repr(h)] = {'zero_level': census.summary()}
            continue
        maps = return_maps(model, h, numerics)
        entry = {}
        if h > 0.0 and len(model.loops) == 1:
            with run.stage(f'escapes {tag}'):
                escapes = escape_census(model, h, grid_n=numerics['grid_n'], max_iters=numerics['max_iters'],
                                        workers=numerics['workers'], maps=maps)
            entry['escapes'] = _escape_entry(escapes)
            run.check(escapes.all_escape, f'points retained at h={h:g} > 0')
            run.say(f'h={h:g}: all points escape: {"true" if escapes.all_escape else "false"}')
        else:
            with run.stage(f'orbit {tag}'):
                record = orbit_record(model, h, fd_step=numerics['fd_step'], manifolds=False, maps=maps)
            entry['orbit'] = record.to_dict()
            run.trajectory(f'orbit_{tag}.csv', record.trajectory)
            with run.stage(f'escapes {tag}'):
                escapes = escape_census(model, h, grid_n=numerics['grid_n'], max_iters=numerics['max_iters'],
                                        workers=numerics['workers'], maps=maps)
            entry['escapes'] = _escape_entry(escapes)
            with run.stage(f'fixed points {tag}'):
                scans = [fixed_point_scan(model, h, grid_n=numerics['grid_n'], power=power,
                                          workers=numerics['workers'], maps=maps) for power in (1, 2)]
            entry['fixed_point_scans'] = [scan.to_dict() for scan in scans]
            alpha, beta = record.floquet
            run.check(record.is_saddle, f'L_h at h={h:g} is not a saddle (alpha={alpha}, beta={beta})')
            run.check(all(scan.distinct <= 1 for scan in scans), f'second fixed point of T or T^2 at h={h:g}')
            run.say(f'h={h:g}: fixed point ({record.fixed_point.u1:.3e}, {record.fixed_point.v1:.3e}), '
                    f'alpha={alpha:.6g}, beta={beta:.6g}')
        run.csv(f'escapes_{tag}.csv', ESCAPE_HEADER, escapes.csv_rows())
        levels[repr(h)] = entry
    run.json('orbit.json', {'model': model.describe(), 'levels': levels})


def run_manifolds(config, run):
    """Lambda^s and Lambda^u of L_h as polylines, with their invariance defect."""
    model = config.model
    numerics = config.numerics
    levels = {}
    for h in config.h_list:
        tag = level_tag(h)
        maps = return_maps(model, h, numerics)
        with run.stage(f'manifolds {tag}'):
            record = orbit_record(model, h, fd_step=numerics['fd_step'], n_points=numerics['n_points'], maps=maps)
        rows = []
        for side in (Side.STABLE, Side.UNSTABLE):
            curve = record.manifolds.get(side)
            if curve is not None:
                rows += [[side, k, u1, v1] for k, (u1, v1) in enumerate(curve.points)]
        entry = record.to_dict()
        unstable = record.manifolds.get(Side.UNSTABLE)
        if unstable is not None:
            entry['invariance'] = manifold_invariance(maps, unstable)
        run.check(record.is_saddle, f'no saddle at h={h:g}: the manifolds are undefined')
        run.csv(f'manifolds_{tag}.csv', MANIFOLD_HEADER, rows)
        levels[repr(h)] = entry
        run.say(f'h={h:g}: {len(rows)} manifold points')
    run.json('manifolds.json', {'model': model.describe(), 'levels': levels})


def run_figure8(config, run):
    """Per-lobe or outer census of a figure-eight model and an itinerary per level."""
    model = config.model
    numerics = config.numerics
    levels = {}
    for h in config.h_list:
        tag = level_tag(h)
        with run.stage(f'figure-eight {tag}'):
            report = figure_eight_census(model, h, eps=numerics['eps'], m_values=tuple(numerics['m_values']),
                                      grid_n=numerics['grid_n'], workers=numerics['workers'],
                                      max_iters=numerics['max_iters'])
        records = [report.outer] if report.outer is not None else [report.lobes[s] for s in sorted(report.lobes)]
        rows = []
        for record in records:
            itinerary = follow_itinerary(model, h, record.fixed_point, n_visits=4 * len(model.loops),
                                         tol=numerics['tol'])
            rows += [[record.sigma, *row] for row in itinerary.csv_rows()]
        run.csv(f'itinerary_{tag}.csv', ('start',) + ITINERARY_HEADER, rows)
        levels[repr(h)] = report.to_dict()
        run.check(report.passed, f'figure-eight census at h={h:g} did not pass')
        run.say(f'h={h:g}: {report.saddle_count} saddle orbit(s), passed={report.passed}')
    run.json('figure8.json', {'model': model.describe(), 'levels': levels})


def run_sweep(config, run):
    """One summary row per level: fixed point, Floquet pair, retained counts and flight-time error."""
    model = config.model
    numerics = config.numerics
    rows = []
    for h in config.h_list:
        tag = level_tag(h)
        maps = return_maps(model, h, numerics)
        fixed_point = alpha = beta = None
        if h < 0.0 or len(model.loops) > 1:
            with run.stage(f'orbit {tag}'):
                record = orbit_record(model, h, fd_step=numerics['fd_step'], manifolds=False, maps=maps)
            fixed_point = record.fixed_point
            alpha, beta = record.floquet
            if h < 0.0:
                run.check(record.is_saddle, f'L_h at h={h:g} is not a saddle')
        with run.stage(f'escapes {tag}'):
            escapes = escape_census(model, h, grid_n=numerics['grid_n'], max_iters=numerics['max_iters'],
                                    workers=numerics['workers'], maps=maps)
        with run.stage(f'flight times {tag}'):
            flights = flight_time_check(model, h, _flight_samples(numerics['eps'])[:1], tol=numerics['tol'])
        rows.append([
            h,
            None if fixed_point is None else fixed_point.u1,
            None if fixed_point is None else fixed_point.v1,
            _real(alpha), _real(beta),
            len(escapes.retained('forward')), len(escapes.retained('backward')),
            flights.max_error(model.delta_scale),
        ])
    run.csv('sweep.csv', SWEEP_HEADER, rows)
    run.json('sweep.json', {'model': model.describe(), 'header': list(SWEEP_HEADER), 'rows': rows})
    run.say(f'Swept {len(rows)} level(s)')


def _real(value):
    if value is None:
        return None
    return float(np.real(value)) if np.imag(value) == 0 else math.nan


COMMANDS = {
    'verify_structure': run_verify_structure,
    'bvp': run_bvp,
    'poincare': run_poincare,
    'domain': run_domain,
    'orbit': run_orbit,
    'manifolds': run_manifolds,
    'figure8': run_figure8,
    'sweep': run_sweep,
}


def execute(command, config):
    """
    Run ``command`` on ``config`` and write its manifest.

    Returns
    -------
    ExperimentRun

    Raises
    ------
    SaddleflowError
        Whatever the stage raises, or CheckFailed once the reports are written.
    """
    run = ExperimentRun(command, config)
    logger.info(f'Running {command} on {config.model.name} into {run.directory}')
    COMMANDS[command](config, run)
    run.finish()
    return run
