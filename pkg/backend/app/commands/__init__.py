"""Command-line subcommand registration."""
