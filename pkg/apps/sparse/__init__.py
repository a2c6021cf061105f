"""Sparse activations app - sparsemax, entmax-1.5 and their Jacobian products."""
from django.apps import AppConfig


class SparseConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'apps.sparse'
    verbose_name = 'Sparse Activations'
