"""Zero-bias open-set detection with sequential change charts."""

__version__ = "0.1.0"
