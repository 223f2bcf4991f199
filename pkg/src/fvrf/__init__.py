"""Function-valued random features for operator learning."""
__version__ = "0.1.0"
