"""Memory app - token cache and gated segment memory for the recurrent block."""
from django.apps import AppConfig


class MemoryConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'apps.memory'
    verbose_name = 'Recurrent Memory'
