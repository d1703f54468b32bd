import os
from pathlib import Path
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = os.getenv('DJANGO_SECRET_KEY', 'specnet3d-local-only')
DEBUG = os.getenv('DJANGO_DEBUG', 'False') == 'True'
ALLOWED_HOSTS = []

# Application definition
INSTALLED_APPS = [
    'django.contrib.auth',
    'django.contrib.contenttypes',
    'rest_framework',
    'hsi',
]

# Worker threads for gradient shards and prediction; results do not depend on it
SPECNET3D_THREADS = int(os.getenv('SPECNET3D_THREADS', '1'))
# Samples per gradient shard; changing it changes floating-point summation order
SPECNET3D_GRAD_SHARD = int(os.getenv('SPECNET3D_GRAD_SHARD', '8'))
SPECNET3D_LOG_LEVEL = os.getenv('SPECNET3D_LOG_LEVEL', 'INFO')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '%(asctime)s %(levelname)s %(name)s: %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'plain',
        },
    },
    'loggers': {
        'hsi': {
            'handlers': ['console'],
            'level': SPECNET3D_LOG_LEVEL,
            'propagate': False,
        },
    },
}

# Internationalization
LANGUAGE_CODE = "en-us"
TIME_ZONE = "UTC"
USE_I18N = False
USE_TZ = True

# Default primary key field type
DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"
