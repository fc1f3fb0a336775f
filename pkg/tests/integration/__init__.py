"""CLI and trained-model integration tests."""
