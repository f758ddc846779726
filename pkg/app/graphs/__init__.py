"""Visibility graphs, force-directed layout and rasterisation."""
