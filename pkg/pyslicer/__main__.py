"""Run the command line front end with ``python -m pyslicer``."""
import sys

from .cli import main

sys.exit(main())
