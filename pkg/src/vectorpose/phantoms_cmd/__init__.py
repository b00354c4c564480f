from ._phantoms import make_phantoms

__all__ = ["make_phantoms"]
