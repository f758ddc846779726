"""Evaluation metrics and report export."""
