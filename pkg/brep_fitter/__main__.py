"""
Entry point for running brep_fitter as a module.

Usage: python -m brep_fitter
"""

import sys

from brep_fitter.cli import main

if __name__ == "__main__":
    sys.exit(main())
