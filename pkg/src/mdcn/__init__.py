"""Multi-factor single-image super-resolution built on a from-scratch
numpy autodiff engine: multi-scale dual-path dense blocks, hierarchical
feature distillation with channel attention, and per-factor sub-pixel
reconstruction heads sharing one trunk."""

__version__ = "0.1.0"
