"""In-context meta-learning of forward dynamics: data generation, meta-models, diffusion and evaluation."""

__version__ = "0.1.0"
