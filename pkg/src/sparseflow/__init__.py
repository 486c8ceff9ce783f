"""Sparse signal recovery by gradient flow of a smoothed Lasso energy."""
