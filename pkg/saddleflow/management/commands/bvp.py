from ._base import ExperimentCommand


class Command(ExperimentCommand):
    help = 'Solve the Shilnikov boundary-value problem against a shooting oracle and fit the estimate constants.'
    name = 'bvp'
