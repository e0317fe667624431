"""Provide tests for pyslicer."""
