"""Fisher auto-encoders, mutual-information auto-encoders and the Fisher-Shannon plane."""

__version__ = "0.1.0"
