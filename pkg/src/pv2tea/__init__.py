"""Desk-scale multimodal attribute value extraction with bias-reduction schemes."""

__version__ = "0.1.0"
