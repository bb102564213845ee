"""Core module for configuration, logging and errors."""
