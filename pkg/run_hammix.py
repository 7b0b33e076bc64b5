#!/usr/bin/env python3
"""
hammix command-line runner
Bayesian clustering of categorical data with mixtures of Hamming distributions.
"""

import sys
from pathlib import Path

# Add src directory to Python path
sys.path.insert(0, str(Path(__file__).parent / "src"))

from cli import main

if __name__ == "__main__":
    sys.exit(main())
