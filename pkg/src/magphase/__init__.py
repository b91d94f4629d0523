"""Joint magnitude/phase spectrogram modeling toolkit."""

__version__ = "0.1.0"
