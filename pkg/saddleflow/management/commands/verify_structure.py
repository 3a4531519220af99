from ._base import ExperimentCommand


class Command(ExperimentCommand):
    help = 'Check symmetry, invariant plane, normal-form identities and conservation of the configured model.'
    name = 'verify_structure'
