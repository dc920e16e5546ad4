"""Shouted-speech detection and stereo-trained embedding compensation."""

__version__ = "0.1.0"
