"""Modeling app - the weight-tied recurrent block, forward pass, losses and checkpoints."""
from django.apps import AppConfig


class ModelingConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'apps.modeling'
    verbose_name = 'Recurrent Sparse Model'
