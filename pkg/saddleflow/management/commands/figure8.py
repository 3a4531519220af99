from ._base import ExperimentCommand


class Command(ExperimentCommand):
    help = 'Per-lobe and outer-orbit census of a figure-eight model per level.'
    name = 'figure8'
