"""Test suite for levy-qwalk."""
