"""Adversarial attacks on trainable image tampering localizers.

The package bundles a small reverse-mode autodiff engine, two desk-scale
convolutional localizers with a synthetic-forgery data generator, the
optimization-based and gradient-sign attacks plus post-processing
baselines, localization/quality metrics, and an experiment harness with
a command-line interface.
"""

__version__ = "0.1.0"
