"""Entry point for ``python -m deglif``."""

from deglif.cli import main

main()
