"""Command-line entrypoint for the hardhank solver."""

from hardhank import run_cli

raise SystemExit(run_cli())
