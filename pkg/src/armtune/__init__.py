"""TPE hyperparameter tuning of from-scratch PPO and SAC on a kinematic 7-DOF reach task."""

__version__ = "0.1.0"
