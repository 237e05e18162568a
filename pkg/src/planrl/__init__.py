"""planrl: on-policy model-based RL with latent-space planning.

A latent world model (encoder, dynamics, reward, critic, policy prior,
task embeddings) drives an MPPI-style planner; the executed actions feed
clipped-surrogate policy updates whose advantages carry a bonus from the
gap between model-free and model-based action values. Everything runs on
a small float64 tape-autodiff core; numpy is the only dependency.
"""

__version__ = "0.1.0"
