"""AMR shortest-path demonstration retrieval for in-context relation extraction."""

__version__ = "0.1.0"
