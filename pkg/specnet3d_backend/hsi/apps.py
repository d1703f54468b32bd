from django.apps import AppConfig


class HsiConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "hsi"
    verbose_name = "Hyperspectral classification"
