"""Vehicle detection and classification from radio-link attenuation fingerprints."""

__version__ = "0.1.0"
