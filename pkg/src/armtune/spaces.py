"""Built-in search spaces, default hyperparameters and the published best values.

Parameters whose range spans at least two decades (learning_rate,
buffer_size, learning_starts) are searched on a log scale; everything else,
including the discount factor, is searched linearly over the stated range.
"""
from __future__ import annotations

from armtune.tpe import ParamDomain, SearchSpace

PPO_SPACE = SearchSpace((
    ParamDomain("learning_rate", "log_uniform", 1e-5, 1e-1),
    ParamDomain("n_steps", "int_uniform", 64, 4096),
    ParamDomain("batch_size", "int_uniform", 16, 256),
    ParamDomain("gamma", "uniform", 0.95, 0.999),
    ParamDomain("ent_coef", "uniform", 0.0, 0.1),
    ParamDomain("vf_coef", "uniform", 0.2, 1.0),
    ParamDomain("max_grad_norm", "uniform", 0.1, 10.0),
    ParamDomain("gae_lambda", "uniform", 0.8, 0.99),
    ParamDomain("clip_range", "uniform", 0.1, 0.4),
))

SAC_SPACE = SearchSpace((
    ParamDomain("buffer_size", "int_log_uniform", 1000, 1_000_000),
    ParamDomain("learning_starts", "int_log_uniform", 100, 10_000),
    ParamDomain("batch_size", "int_uniform", 16, 256),
    ParamDomain("tau", "uniform", 0.001, 0.1),
    ParamDomain("gamma", "uniform", 0.9, 0.999),
    ParamDomain("learning_rate", "log_uniform", 1e-5, 1e-1),
    ParamDomain("ent_coef", "uniform", 0.0, 0.2),
    ParamDomain("target_update_interval", "int_uniform", 1, 100),
    ParamDomain("gradient_steps", "int_uniform", 1, 20),
    ParamDomain("use_sde", "categorical", choices=(False, True)),
))

PPO_DEFAULTS = {
    "learning_rate": 0.0003,
    "n_steps": 2048,
    "batch_size": 64,
    "gamma": 0.99,
    "ent_coef": 0.0,
    "vf_coef": 0.5,
    "max_grad_norm": 0.5,
    "gae_lambda": 0.95,
    "clip_range": 0.2,
}

PPO_PUBLISHED_BEST = {
    "learning_rate": 0.0153,
    "n_steps": 559,
    "batch_size": 193,
    "gamma": 0.9657,
    "ent_coef": 0.0548,
    "vf_coef": 0.3999,
    "max_grad_norm": 9.4229,
    "gae_lambda": 0.8543,
    "clip_range": 0.2865,
}

SAC_DEFAULTS = {
    "buffer_size": 1_000_000,
    "learning_starts": 1000,
    "batch_size": 256,
    "tau": 0.005,
    "gamma": 0.99,
    "learning_rate": 0.0003,
    "ent_coef": 0.2,
    "target_update_interval": 1,
    "gradient_steps": 1,
    "use_sde": False,
}

SAC_PUBLISHED_BEST = {
    "buffer_size": 79709,
    "learning_starts": 7126,
    "batch_size": 104,
    "tau": 0.034480,
    "gamma": 0.920970,
    "learning_rate": 0.000728,
    "ent_coef": 0.008345,
    "target_update_interval": 40,
    "gradient_steps": 10,
    "use_sde": True,
}

SPACES = {"ppo": PPO_SPACE, "sac": SAC_SPACE}
DEFAULTS = {"ppo": PPO_DEFAULTS, "sac": SAC_DEFAULTS}
PUBLISHED_BEST = {"ppo": PPO_PUBLISHED_BEST, "sac": SAC_PUBLISHED_BEST}
