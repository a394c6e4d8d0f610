"""Command-line entry point: ``python app.py <command> [options]``.

Run ``python app.py --help`` for the list of commands. The dashboard is
started separately with ``streamlit run Home.py``.
"""

import sys

# utils.cli pins BLAS threads on import, before numpy is loaded
from utils.cli import main

if __name__ == "__main__":
    sys.exit(main())
