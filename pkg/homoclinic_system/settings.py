"""
Django settings for homoclinic_system project.

The project hosts a single application, ``saddleflow``, whose management
commands run the numerical experiments. There is no web surface, so no URL
configuration, middleware or database is declared.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/5.0/ref/settings/
"""

from pathlib import Path
import os
from dotenv import load_dotenv
load_dotenv()
# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = os.getenv('SECRET_KEY', 'saddleflow-local-only')

DEBUG = os.getenv('SADDLEFLOW_DEBUG', 'false').lower() == 'true'
ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'rest_framework',
    'saddleflow',
]

# Experiments keep no state between runs; reports go to the filesystem.
DATABASES = {}


# Internationalization
# https://docs.djangoproject.com/en/5.0/topics/i18n/

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = True

USE_TZ = True


LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{levelname} {asctime} {module} {message}',
            'style': '{',
        },
        'simple': {
            'format': '[{levelname}] {message}',
            'style': '{',
        },
    },
    'handlers': {
        'file': {
            'level': 'DEBUG',
            'class': 'logging.FileHandler',
            'filename': os.path.join(BASE_DIR, 'debug.log'),
            'formatter': 'verbose',
        },
        'console': {
            'level': os.getenv('SADDLEFLOW_CONSOLE_LEVEL', 'INFO'),
            'class': 'logging.StreamHandler',
            'formatter': 'simple',
        },
    },
    'loggers': {
        'django': {
            'handlers': ['console', 'file'],
            'level': 'INFO',
            'propagate': True,
        },
        'saddleflow': {
            'handlers': ['console', 'file'],
            'level': 'DEBUG',
            'propagate': False,
        },
    },
}

SADDLEFLOW = {
    'TOL': 1e-12,
    'T_MAX': 50.0,
    'ESCAPE_BOX_FACTOR': 3.0,
    'EPS_FACTOR': 0.1,
    'H0_FACTOR': 0.1,
    'H_BOUND_FACTOR': 0.5,
    'CONE_M': 10.0,
    'FD_STEP': 1e-6,
    'MAX_ESCAPE_ITERS': 50,
    'BVP_NODES': 2000,
    'TEMPLATE_FLOOR': 1e-14,
    'WORKERS': int(os.getenv('SADDLEFLOW_WORKERS', '1')),
}
