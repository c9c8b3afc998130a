"""routelens — passive BGP route collection, MRT archival, and live analysis."""

__version__ = "0.1.0"
