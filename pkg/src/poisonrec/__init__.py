"""Data-poisoning attacks on top-N recommender systems.

Matrix-factorization and random-walk recommenders, influence functions over
their training data, optimized fake-user attacks, shilling-detection
features, and an experiment harness.
"""

from .ratings import DatasetError, ParseError, RatingDataset, ingest, partial_view, serialize, synth
from .mf import FactorModel, top_n, train
from .influence import MFInfluence, greedy_select, influence_report
from .attack import AttackPlan, FakeUserProfile, inject, run_attack, run_graph_attack
from .graph import build_transition, stationary
from .evaluation import ExperimentConfig, hit_ratio, run_experiment

__version__ = "0.1.0"
