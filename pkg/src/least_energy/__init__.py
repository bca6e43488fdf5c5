"""Least-energy solutions of the large-exponent Lane-Emden problem in the plane."""
