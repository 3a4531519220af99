from ._base import ExperimentCommand


class Command(ExperimentCommand):
    help = 'Periodic orbit L_h, its Floquet pair, the escape census and fixed-point scans per level.'
    name = 'orbit'
