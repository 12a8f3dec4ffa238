"""Driven-condensate ratchet: mean-field and many-body dynamics, chaos
diagnostics, correlation dimension and scaling-law fits."""

__version__ = "0.1.0"
