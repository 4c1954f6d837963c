"""Tests for the Ge'ez MT toolkit."""
