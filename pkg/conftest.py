import os
import sys
from pathlib import Path

# Run tests the same way `manage.py test` does: project dir on sys.path and
# the Django settings module configured before test modules are imported.
sys.path.insert(0, str(Path(__file__).resolve().parent / "specnet3d_backend"))
os.environ.setdefault("DJANGO_SETTINGS_MODULE", "specnet3d.settings")

import django  # noqa: E402

django.setup()
