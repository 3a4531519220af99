from ._base import ExperimentCommand


class Command(ExperimentCommand):
    help = 'Global-map coefficients, return-map Jacobians and flight-time asymptotics per level.'
    name = 'poincare'
