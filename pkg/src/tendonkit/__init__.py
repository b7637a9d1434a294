"""Tendon-driven dexterous hand toolkit.

Hand/tendon modeling, EKF joint sensing, a batched in-hand rotation RL
environment, a compact PPO trainer, and a closed-loop policy runtime with a
simulated motor driver.
"""

__version__ = "0.1.0"
