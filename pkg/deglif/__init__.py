"""DeGLIF: graph label denoising with leave-one-out influence functions."""

__version__ = "1.0.0"
