"""Variable-smoothness Besov norms, extension operators and trace checks on
sampled functions over rough planar domains."""

__version__ = "0.1.0"
