"""Command-line commands and run output files."""
