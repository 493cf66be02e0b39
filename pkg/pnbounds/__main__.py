"""Entry point for ``python -m pnbounds``."""

import sys

from pnbounds.cli import main

if __name__ == "__main__":
    sys.exit(main())
