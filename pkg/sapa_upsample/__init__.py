"""SAPA upsample - similarity-aware feature upsamplers and their tooling."""

__version__ = "0.1.0"
