"""Experiment harness: TOML configs, the trial runner and the command line."""
