"""Cost-aware pruning of random forests."""
