"""
Tessera - Johnson-Mehl and sliced-Voronoi percolation engine
"""
__version__ = "1.0.0"
