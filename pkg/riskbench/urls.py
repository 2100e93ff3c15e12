"""
URL configuration for the riskbench project.

Only the admin site is routed; benchmark runs stored by the management
commands can be browsed there.
"""
from django.contrib import admin
from django.urls import path

urlpatterns = [
    path('admin/', admin.site.urls),
]
