"""Core configuration for the ARGUS detector."""
