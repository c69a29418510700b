"""High-accuracy lp-norm regression."""
