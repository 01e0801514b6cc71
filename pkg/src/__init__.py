"""
Stateful Online Recommender Lab - Source Package

This package contains the core modules for online-learning experiments:
- hashing: hashed id lookup and collision analysis
- model: factorized logistic scorer trained by per-example SGD
- datagen: synthetic drifting interaction streams and the event log format
- policies: retraining policies and their update-count cost
- replay: prequential replay, AUC and lift tables
- checkpoint: bit-exact save / load / resume
"""

__version__ = "1.0.0"
__author__ = "Online Recs Team"
__description__ = "Stateful online learning for hashed-embedding recommenders"

# Import main classes for easier access
from .checkpoint import load, resume_equivalence_check, save
from .datagen import DriftGenConfig, DriftStreamGenerator, Event
from .hashing import HashConfig, HashMode, collision_sweep, measure_collisions
from .model import ModelConfig, ModelState, init_model, predict, sgd_step
from .policies import CostMeter, PolicyKind, RetrainPolicy, cost_ratio, run_policy
from .replay import ReplayReport, ReplaySpec, lift_table, replay

__all__ = [
    'CostMeter',
    'DriftGenConfig',
    'DriftStreamGenerator',
    'Event',
    'HashConfig',
    'HashMode',
    'ModelConfig',
    'ModelState',
    'PolicyKind',
    'ReplayReport',
    'ReplaySpec',
    'RetrainPolicy',
    'collision_sweep',
    'cost_ratio',
    'init_model',
    'lift_table',
    'load',
    'measure_collisions',
    'predict',
    'replay',
    'resume_equivalence_check',
    'run_policy',
    'save',
    'sgd_step',
]
