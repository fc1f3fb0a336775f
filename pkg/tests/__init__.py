"""Test suite for latentflow."""
