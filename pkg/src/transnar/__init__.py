"""Desk-scale TransNAR."""
