"""Analysis toolkit for language-prior failures in OCR of polytonic Greek."""

__version__ = "0.1.0"
