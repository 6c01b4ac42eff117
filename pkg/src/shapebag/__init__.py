"""Object instance retrieval fusing texture words with boundary-normal shape words."""

__version__ = "0.1.0"
