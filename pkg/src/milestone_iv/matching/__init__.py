from .brute_force import brute_force_full_match, brute_force_pairing
from .full_match import optimal_full_match
from .pairing import optimal_nonbipartite_match
from .types import SCALE, FullMatching, MatchedSet, Pairing

__all__ = [
    "SCALE",
    "FullMatching",
    "MatchedSet",
    "Pairing",
    "brute_force_full_match",
    "brute_force_pairing",
    "optimal_full_match",
    "optimal_nonbipartite_match",
]
