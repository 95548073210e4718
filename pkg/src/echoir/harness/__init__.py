"""Command-line harness: image files, synthetic data, training, evaluation."""
