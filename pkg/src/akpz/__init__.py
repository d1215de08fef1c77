"""Cut-off anisotropic KPZ / stochastic Burgers toolkit."""
__version__ = "0.1.0"
