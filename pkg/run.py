#!/usr/bin/env python3
"""
Reply-sentiment pipeline entry point.

Usage:
    python run.py run --config fixtures/config.json --out outputs/smoke
    python run.py predict --checkpoint outputs/smoke/stage2_bilstm.ckpt --text "what a game"
"""

import sys
from pathlib import Path

# Add the project root to Python path
project_root = Path(__file__).resolve().parent
sys.path.insert(0, str(project_root))

from app.cli import main

if __name__ == '__main__':
    sys.exit(main())
