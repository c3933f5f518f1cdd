"""Sparse light-field toolkit."""
