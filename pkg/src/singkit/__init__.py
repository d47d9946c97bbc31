"""singkit: digitize a voice from raw recordings and render controllable singing."""

__version__ = "0.1.0"
