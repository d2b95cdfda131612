"""Self-training physics-informed neural networks on 1D benchmark PDEs."""

__version__ = "0.1.0"
