"""Energy-conserving discontinuous Galerkin solver for generalised KdV equations."""
__version__ = "0.1.0"
