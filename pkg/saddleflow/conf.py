"""
Settings for the saddleflow app are all namespaced in the SADDLEFLOW setting.
For example your project's `settings.py` file might look like this:

SADDLEFLOW = {
    'TOL': 1e-12,
    'CONE_M': 10.0,
}

Library functions take these values as defaults whenever the caller passes
``None`` for the corresponding argument.
"""
from django.conf import settings
from django.test.signals import setting_changed
from rest_framework.settings import APISettings

from . import __version__

DEFAULTS = {
    # integration
    'TOL': 1e-12,
    'T_MAX': 50.0,
    'SAMPLE_STEP': 0.01,
    'ESCAPE_BOX_FACTOR': 3.0,
    'TANGENCY_THRESHOLD': 1e-10,
    # section charts and maps
    'EPS_FACTOR': 0.1,
    'H0_FACTOR': 0.1,
    'H_BOUND_FACTOR': 0.5,
    'CONE_M': 10.0,
    'FD_STEP': 1e-6,
    'CHART_TOL': 1e-13,
    'SOLVABILITY_THRESHOLD': 1e-8,
    'TUBE_FACTOR': 0.5,
    # orbits
    'MAX_ESCAPE_ITERS': 50,
    'MANIFOLD_SEED': 1e-5,
    'NEWTON_MAX_ITER': 25,
    # Shilnikov problem
    'BVP_NODES': 2000,
    'LOBATTO_POINTS': 5,
    'BVP_MAX_ITER': 200,
    'TEMPLATE_FLOOR': 1e-14,
    # models; k3 < 0 keeps the net (u1, v1) stretch along the loop of order e at delta = 0.1
    'DEFAULT_COUPLING': {'k1': 0.3, 'k2': 0.3, 'k3': -0.9},
    'FIGURE_EIGHT_COUPLING': {'k1': 0.3, 'k2': 0.3, 'k3': -0.75},
    # harness
    'WORKERS': 1,
    'ARTIFACT_VERSION': __version__,
}


saddleflow_settings = APISettings(getattr(settings, 'SADDLEFLOW', None), DEFAULTS)


def reload_saddleflow_settings(*args, **kwargs):
    global saddleflow_settings

    setting, value = kwargs['setting'], kwargs['value']

    if setting == 'SADDLEFLOW':
        saddleflow_settings = APISettings(value, DEFAULTS)


setting_changed.connect(reload_saddleflow_settings)


def get(name):
    """Return the current value of a SADDLEFLOW setting."""
    return getattr(saddleflow_settings, name)
