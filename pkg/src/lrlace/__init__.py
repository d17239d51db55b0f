"""Long-range lattice random walks, lace-expansion algebra and their audits."""

__version__ = "0.1.0"
