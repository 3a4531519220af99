from django.apps import AppConfig


class SaddleflowConfig(AppConfig):
    name = 'saddleflow'
    verbose_name = 'Saddle-loop dynamics'
