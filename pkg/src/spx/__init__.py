"""Single-pixel sensing simulation, reconstruction and recognisability sweeps."""

__version__ = "0.1.0"
