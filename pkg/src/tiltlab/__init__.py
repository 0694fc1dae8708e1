"""tiltlab: a desk-scale laboratory for KL-tilted diffusion fine-tuning.

Toy diffusion models whose tilted targets, soft values and soft-optimal
policies are computable exactly, so every training and guidance
algorithm can be checked against independent oracles.
"""

__version__ = "0.1.0"
