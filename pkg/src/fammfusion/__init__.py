"""Camera, GPS and IMU pose fusion with fuzzy adaptive motion-model selection."""

__version__ = "0.1.0"
