"""Integration tests package initialization."""
