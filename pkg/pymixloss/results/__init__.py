"""CSV result files of training runs and experiments."""
