from ._base import ExperimentCommand


class Command(ExperimentCommand):
    help = 'Summary table over numerics.h_list: fixed point, Floquet pair, retained counts and flight-time error.'
    name = 'sweep'
