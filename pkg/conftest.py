import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'homoclinic_system.settings')
django.setup()
