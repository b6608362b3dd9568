"""
Parent Discovery - Voting
Each accepted candidate votes for every feature in its R; features whose
vote count reaches ceil(gamma * q) form the parent estimate.
"""

import math
from dataclasses import dataclass
from pathlib import Path
from typing import FrozenSet, Iterable, List, NamedTuple, Optional, Sequence, Union

import numpy as np
import pandas as pd

from CandidateSearchSystem import CandidateSet
from DiscoveryErrors import InvalidArgumentError

# ceil(gamma * q) must not round up on float noise (0.7 * 10 = 7.000000000000001)
THRESHOLD_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class VoteTally:
    votes: np.ndarray
    q: int

    def __post_init__(self):
        votes = np.asarray(self.votes, dtype=int).copy()
        votes.setflags(write=False)
        object.__setattr__(self, "votes", votes)
        object.__setattr__(self, "q", int(self.q))
        if votes.ndim != 1:
            raise InvalidArgumentError("votes must be a vector")
        if self.q < 0 or np.any(votes < 0) or np.any(votes > self.q):
            raise InvalidArgumentError(f"votes must lie in [0, q={self.q}]")

    @property
    def d(self) -> int:
        return self.votes.shape[0]


def tally_sets(r_sets: Iterable[Iterable[int]], d: int) -> VoteTally:
    votes = np.zeros(d, dtype=int)
    q = 0
    for r in r_sets:
        members = sorted(set(r))
        votes[members] += 1
        q += 1
    return VoteTally(votes=votes, q=q)


def tally(candidates: CandidateSet) -> VoteTally:
    """votes_j = number of candidates whose R contains j"""
    return tally_sets((c.tuple.R for c in candidates.candidates), candidates.d)


def vote_threshold(q: int, gamma: float) -> int:
    return math.ceil(gamma * q - THRESHOLD_SLACK)


def cutoff(votes: VoteTally, gamma: float) -> FrozenSet[int]:
    """{j : votes_j >= ceil(gamma q)}; empty when q = 0. gamma = 1 keeps full-vote features"""
    if not 0.0 <= gamma <= 1.0:
        raise InvalidArgumentError(f"gamma must lie in [0, 1], got {gamma}")
    if votes.q == 0:
        return frozenset()
    threshold = vote_threshold(votes.q, gamma)
    return frozenset(int(j) for j in np.flatnonzero(votes.votes >= threshold))


def top_k_report(votes: VoteTally, k: int) -> List[int]:
    """Indices of the k largest counts; ties go to the lower index"""
    if not 1 <= k <= votes.d:
        raise InvalidArgumentError(f"k must lie in [1, {votes.d}], got {k}")
    order = sorted(range(votes.d), key=lambda j: (-int(votes.votes[j]), j))
    return order[:k]


class GapAdvice(NamedTuple):
    gap: int
    above: FrozenSet[int]
    suggested_gamma: float


def vote_gap(votes: VoteTally) -> Optional[GapAdvice]:
    """
    Largest drop between consecutive sorted vote counts.
    Advisory only: the cutoff is never chosen automatically.
    """
    if votes.q == 0 or votes.d < 2:
        return None
    order = top_k_report(votes, votes.d)
    counts = [int(votes.votes[j]) for j in order]
    drops = [counts[i] - counts[i + 1] for i in range(len(counts) - 1)]
    split = int(np.argmax(drops))
    if drops[split] == 0:
        return None
    return GapAdvice(
        gap=drops[split],
        above=frozenset(order[: split + 1]),
        suggested_gamma=counts[split] / votes.q,
    )


def tally_frame(votes: VoteTally, feature_names: Optional[Sequence[str]] = None) -> pd.DataFrame:
    names = list(feature_names) if feature_names is not None else [f"x{j + 1}" for j in range(votes.d)]
    return pd.DataFrame({"feature": names, "votes": votes.votes, "q": votes.q})


def write_tally_csv(votes: VoteTally, path: Union[str, Path], feature_names: Optional[Sequence[str]] = None) -> Path:
    """CSV `feature,votes,q`, one row per feature"""
    path = Path(path)
    tally_frame(votes, feature_names).to_csv(path, index=False)
    return path
