"""Reversible data hiding in baseline JPEG images by histogram shifting of +-1 AC
coefficients, with block selection driven by a distortion / file-size trade-off."""

__version__ = "0.1.0"
