"""First p-Laplacian eigenvalue along conformal curvature flows on triangulated surfaces."""
__version__ = "0.1.0"
