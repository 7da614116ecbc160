"""Run the command-line harness with ``python -m qmc_abc``."""

from .cli import main

raise SystemExit(main())
