from ._base import ExperimentCommand


class Command(ExperimentCommand):
    help = 'Census of the domain of the return map and its inverse on B_eps; prints "D empty: true|false" per level.'
    name = 'domain'
