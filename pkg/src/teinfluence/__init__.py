"""Transfer-entropy detection of influential action sequences."""

__version__ = "0.1.0"
