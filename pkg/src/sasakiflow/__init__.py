"""Reduced Sasaki-Ricci flow laboratory."""
