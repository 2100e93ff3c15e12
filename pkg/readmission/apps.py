from django.apps import AppConfig


class ReadmissionConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'readmission'
    verbose_name = 'ICU readmission benchmark'
