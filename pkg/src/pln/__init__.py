"""Progressive learning networks: layer-wise grown feed-forward networks."""
