"""Lab app - run configuration, gradient checks, benchmarks, ablations and the CLI."""
from django.apps import AppConfig


class LabConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'apps.lab'
    verbose_name = 'Experiment Lab'
