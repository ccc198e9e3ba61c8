"""Multi-tab website-fingerprinting traffic demixing workbench."""

__version__ = "0.1.0"
