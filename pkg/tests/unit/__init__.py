"""Unit tests for the monodrift package."""
