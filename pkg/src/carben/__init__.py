"""Composite adversarial attack engine and robustness benchmark."""

__version__ = "0.1.0"
