"""Implicit tri-plane fields for pulmonary tree repair, labeling and segment reconstruction."""
__version__ = "0.1.0"
