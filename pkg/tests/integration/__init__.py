"""Integration tests for the monodrift command line."""
