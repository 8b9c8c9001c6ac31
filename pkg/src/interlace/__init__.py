"""Random interlacements on Z^d: potential theory, vacant-set sampling and
the deterministic lattice geometry of separation, fills and path surgery."""

__version__ = "0.1.0"
