"""Compositional value iteration for open MDPs composed as string diagrams."""

from .diagram import OpenMdp, StringDiagram, dsum, flatten, index, seq
from .engine import CacheKind, CviConfig, CviResult, GscKind, cvi_run, exact_values, mono_run
from .mdp import Mdp, NumericMode, TargetWeight
from .model_io import load_model, dump_model
from .pareto import ParetoCache, ParetoOver, ParetoUnder

__version__ = "0.1.0"

__all__ = [
    "CacheKind", "CviConfig", "CviResult", "GscKind", "Mdp", "NumericMode", "OpenMdp",
    "ParetoCache", "ParetoOver", "ParetoUnder", "StringDiagram", "TargetWeight",
    "cvi_run", "dsum", "dump_model", "exact_values", "flatten", "index", "load_model",
    "mono_run", "seq",
]
