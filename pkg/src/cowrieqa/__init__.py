"""Cowrie honeypot log parsing with a QA-style utility extractor."""

__version__ = "0.1.0"
