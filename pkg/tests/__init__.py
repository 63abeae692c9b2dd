"""Test utilities and fixtures."""
