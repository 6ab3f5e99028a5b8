import sys

from .engine.lab import main

sys.exit(main())
