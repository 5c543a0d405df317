"""Individualized treatment effect prediction with penalized logistic regression."""

__version__ = "0.1.0"
