"""Semi-supervised GAN fine-tuning of a small transformer text classifier."""

__version__ = "0.1.0"
