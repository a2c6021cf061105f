"""Attention app - top-k sparse multi-head attention and expert routing."""
from django.apps import AppConfig


class AttentionAppConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'apps.attention'
    verbose_name = 'Sparse Attention'
