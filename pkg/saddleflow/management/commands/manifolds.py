from ._base import ExperimentCommand


class Command(ExperimentCommand):
    help = 'Section traces of the stable and unstable manifolds of L_h per level.'
    name = 'manifolds'
