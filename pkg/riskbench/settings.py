"""
Django settings for the riskbench project.

The project hosts one app, ``readmission``, whose management commands run the
ICU readmission benchmark. Tunable defaults for those commands live in the
``READMISSION`` dict below; a run's JSON config file, ``READMISSION_*``
environment variables and command-line flags override them in that order.
"""

import math
import os
from pathlib import Path

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = os.environ.get('DJANGO_SECRET_KEY', 'django-insecure-riskbench-local-only')

# SECURITY WARNING: don't run with debug turned on in production!
DEBUG = os.environ.get('DJANGO_DEBUG', '1') == '1'

ALLOWED_HOSTS = ['localhost', '127.0.0.1']


# Application definition

INSTALLED_APPS = [
    'django.contrib.admin',
    'django.contrib.auth',
    'django.contrib.contenttypes',
    'django.contrib.sessions',
    'django.contrib.messages',
    'django.contrib.staticfiles',
    'readmission',
]

MIDDLEWARE = [
    'django.middleware.security.SecurityMiddleware',
    'django.contrib.sessions.middleware.SessionMiddleware',
    'django.middleware.common.CommonMiddleware',
    'django.middleware.csrf.CsrfViewMiddleware',
    'django.contrib.auth.middleware.AuthenticationMiddleware',
    'django.contrib.messages.middleware.MessageMiddleware',
    'django.middleware.clickjacking.XFrameOptionsMiddleware',
]

ROOT_URLCONF = 'riskbench.urls'

TEMPLATES = [
    {
        'BACKEND': 'django.template.backends.django.DjangoTemplates',
        'DIRS': [],
        'APP_DIRS': True,
        'OPTIONS': {
            'context_processors': [
                'django.template.context_processors.debug',
                'django.template.context_processors.request',
                'django.contrib.auth.context_processors.auth',
                'django.contrib.messages.context_processors.messages',
            ],
        },
    },
]

WSGI_APPLICATION = 'riskbench.wsgi.application'


# Database

DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': os.environ.get('READMISSION_DB', BASE_DIR / 'db.sqlite3'),
    }
}


AUTH_PASSWORD_VALIDATORS = [
    {
        'NAME': 'django.contrib.auth.password_validation.UserAttributeSimilarityValidator',
    },
    {
        'NAME': 'django.contrib.auth.password_validation.MinimumLengthValidator',
    },
]


LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = True

USE_TZ = True

STATIC_URL = 'static/'

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# Logging

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{asctime} {levelname} {name} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'loggers': {
        'readmission': {
            'handlers': ['console'],
            'level': os.environ.get('READMISSION_LOG_LEVEL', 'INFO'),
            'propagate': False,
        },
    },
}


# Benchmark defaults

READMISSION = {
    'train': {
        'lr': 0.001,
        'batch_size': 128,
        'epochs': 80,
        'dropout_p': 0.5,
        'class_weight': 'auto',
    },
    'split': {
        'test_fraction': 0.1,
        'val_fraction': 0.1,
    },
    'data': {
        'min_code_stays': 100,
        'max_events': None,
    },
    'ode': {
        'h_max_dp': 1.0,  # days
        'h_max_mv': 1.0,  # hours
        'max_steps': None,
    },
    'mce': {
        'window_dp': 365.0,
        'window_mv': 24.0,
        'buckets': 8,
        'epochs': 5,
        'lr': 0.01,
        'batch_size': 256,
        'max_context': 32,
    },
    'bayes': {
        'lr': 0.001,
        'batch_size': 128,
        'max_epochs': 200,
        'patience': 10,
        'n_mc': 1,
        'rho_init': -5.0,
        'prior_pi': 0.5,
        'prior_sigma1': 1.0,
        'prior_sigma2': math.exp(-6.0),
        'class_weight': 'auto',
    },
    'interpret': {
        'or_samples': 10000,
        'code_samples': 10000,
        'patient_samples': 10000,
        'top_k': 10,
    },
    'evaluation': {
        'n_resamples': 100,
    },
    'jobs': 1,
}
