#!/usr/bin/env python3
"""
SA3 - Desk-Scale Cross-Domain Detection
Launcher for the python-core command line (generate, train, eval, ablate).
"""

import sys
from pathlib import Path

# Add python-core to path
sys.path.insert(0, str(Path(__file__).parent / 'python-core'))

from main import main  # noqa: E402

if __name__ == '__main__':
    sys.exit(main())
