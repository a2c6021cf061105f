"""Structure app - content-only token graphs, drift regularizer and candidate buckets."""
from django.apps import AppConfig


class StructureConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'apps.structure'
    verbose_name = 'Latent Structure'
