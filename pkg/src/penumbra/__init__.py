"""Neutron aperture image denoising laboratory."""

__version__ = "0.1.0"
