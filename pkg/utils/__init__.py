"""Argument validation helpers shared by the numeric packages."""
