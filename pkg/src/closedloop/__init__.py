"""Belief-tree planning guided by learned priors, trained in a closed loop."""

from .heuristics import HeuristicProvider, NetworkProvider, UniformProvider, network_provider, uniform_provider
from .pomdp import Belief, DomainModel, EnumerableModel, FactoredReward, exact_bayes_update, particle_bayes_update
from .tree import SearchConfig, SearchResult, run_search
from .values import FactoredValue, recover_value

__version__ = "0.1.0"

__all__ = [
    "Belief", "DomainModel", "EnumerableModel", "FactoredReward", "FactoredValue", "HeuristicProvider",
    "NetworkProvider", "SearchConfig", "SearchResult", "UniformProvider", "exact_bayes_update",
    "network_provider", "particle_bayes_update", "recover_value", "run_search", "uniform_provider",
]
