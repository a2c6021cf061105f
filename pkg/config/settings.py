"""
Django settings for the sparse recurrent transformer lab.

The project has no web surface: Django hosts the management commands
(train, eval, gradcheck, bench, ablate, export_graph, fetch_corpus), the
settings layer and the logging configuration.

For more information on this file, see
https://docs.djangoproject.com/en/5.2/topics/settings/
"""

from pathlib import Path
import os

from dotenv import load_dotenv

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

load_dotenv(BASE_DIR / '.env')


SECRET_KEY = os.environ.get(
    'DJANGO_SECRET_KEY',
    'django-insecure-lab-dev-key-no-web-surface'
)

DEBUG = os.environ.get('DJANGO_DEBUG', 'True').lower() == 'true'

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'apps.core',
    'apps.autodiff',
    'apps.sparse',
    'apps.attention',
    'apps.memory',
    'apps.structure',
    'apps.modeling',
    'apps.training',
    'apps.lab',
]

# No ORM models anywhere in the project.
DATABASES = {}

USE_TZ = True
TIME_ZONE = 'UTC'


# =============================================================================
# Model defaults (desk scale)
# =============================================================================

RESS_D_MODEL = int(os.environ.get('RESS_D_MODEL', '64'))
RESS_N_HEADS = int(os.environ.get('RESS_N_HEADS', '4'))
RESS_K = int(os.environ.get('RESS_K', '4'))
RESS_K_TOP = int(os.environ.get('RESS_K_TOP', '32'))
RESS_MEMORY_SLOTS = int(os.environ.get('RESS_MEMORY_SLOTS', '16'))
RESS_EXPERTS = int(os.environ.get('RESS_EXPERTS', '8'))
RESS_ACTIVE_EXPERTS = int(os.environ.get('RESS_ACTIVE_EXPERTS', '2'))
RESS_PHI = os.environ.get('RESS_PHI', 'entmax15')
RESS_LAMBDA_STRUCT = float(os.environ.get('RESS_LAMBDA_STRUCT', '0.1'))
RESS_LAMBDA_BIAS = float(os.environ.get('RESS_LAMBDA_BIAS', '1.0'))
RESS_LOAD_BALANCE_COEFF = float(os.environ.get('RESS_LOAD_BALANCE_COEFF', '0.0'))

# =============================================================================
# Training defaults (not taken from any published run; desk values)
# =============================================================================

RESS_LR_PEAK = float(os.environ.get('RESS_LR_PEAK', '3e-4'))
RESS_BATCH_SIZE = int(os.environ.get('RESS_BATCH_SIZE', '32'))
RESS_WARMUP_STEPS = int(os.environ.get('RESS_WARMUP_STEPS', '200'))
RESS_TOTAL_STEPS = int(os.environ.get('RESS_TOTAL_STEPS', '10000'))
RESS_WEIGHT_DECAY = float(os.environ.get('RESS_WEIGHT_DECAY', '0.01'))
RESS_GRAD_CLIP_NORM = float(os.environ.get('RESS_GRAD_CLIP_NORM', '1.0'))
RESS_EARLY_STOP_PATIENCE = int(os.environ.get('RESS_EARLY_STOP_PATIENCE', '5'))
RESS_STEPS = int(os.environ.get('RESS_STEPS', '5000'))
RESS_EVAL_INTERVAL = int(os.environ.get('RESS_EVAL_INTERVAL', '250'))

# Task defaults
RESS_TASK = os.environ.get('RESS_TASK', 'copy')
RESS_SEQ_LEN = int(os.environ.get('RESS_SEQ_LEN', '32'))
RESS_TASK_VOCAB = int(os.environ.get('RESS_TASK_VOCAB', '16'))

# char_lm corpus: written by `fetch_corpus`; the bundled excerpt is used while it is absent
RESS_CORPUS_PATH = Path(os.environ.get('RESS_CORPUS_PATH', BASE_DIR / 'data' / 'corpus.txt'))
RESS_CORPUS_EBOOKS = os.environ.get('RESS_CORPUS_EBOOKS', '11,12,1342')
RESS_CORPUS_URL = os.environ.get('RESS_CORPUS_URL', 'https://www.gutenberg.org/cache/epub/{ebook}/pg{ebook}.txt')
RESS_CORPUS_TIMEOUT = int(os.environ.get('RESS_CORPUS_TIMEOUT', '60'))

# Seed used when no --seed flag is given
RESS_SEED = int(os.environ.get('SEED', '0'))

# Output root for runs started without --out
RESS_RUNS_DIR = Path(os.environ.get('RESS_RUNS_DIR', BASE_DIR / 'runs'))

# Gradient-check tolerance for the gradcheck command
RESS_GRADCHECK_TOLERANCE = float(os.environ.get('RESS_GRADCHECK_TOLERANCE', '1e-4'))


# =============================================================================
# Logging Configuration
# =============================================================================

RESS_LOG_FORMAT = os.environ.get('RESS_LOG_FORMAT', 'verbose')
RESS_LOG_LEVEL = os.environ.get('RESS_LOG_LEVEL', 'INFO')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{levelname} {asctime} {module} {message}',
            'style': '{',
        },
        'json': {
            '()': 'pythonjsonlogger.jsonlogger.JsonFormatter',
            'format': '%(asctime)s %(levelname)s %(name)s %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': RESS_LOG_FORMAT,
        },
    },
    'root': {
        'handlers': ['console'],
        'level': 'WARNING',
    },
    'loggers': {
        'apps': {
            'handlers': ['console'],
            'level': RESS_LOG_LEVEL,
            'propagate': False,
        },
    },
}
