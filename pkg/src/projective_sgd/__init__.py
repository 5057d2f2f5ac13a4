"""Online SGD on projective losses over mixture data: finite-d simulation,
limit ODE and SDE, and universality experiments."""

__version__ = "0.1.0"
