"""Minimal dense neural engine with compiled and numpy kernel backends."""
