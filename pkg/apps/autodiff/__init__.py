"""Autodiff app - dense float64 tensors with a define-by-run gradient tape."""
from django.apps import AppConfig


class AutodiffConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'apps.autodiff'
    verbose_name = 'Tensor Autodiff'
