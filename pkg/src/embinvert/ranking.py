"""Selection stage: score every pool entry against the target, keep the best N.

Scoring reuses the generations cached at pool-build time, so the stage
costs exactly V embedder evaluations regardless of N.  Ties in similarity
break by ascending pool index to keep runs reproducible.
"""
import warnings
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .core import EmbeddingVector, cosine_similarity
from .errors import ConfigInvalid
from .models import EmbedderHandle, QueryLedger
from .pool import LatentPool


@dataclass(frozen=True)
class RankedCandidate:
    pool_index: int
    initial_similarity: float
    rank: int  # 1-based, 1 = most similar


def rank_candidates(pool: LatentPool, target: EmbeddingVector,
                    embedder: EmbedderHandle,
                    ledger: Optional[QueryLedger] = None) -> List[RankedCandidate]:
    """Embed every cached image exactly once and sort by similarity.

    Charges V selection queries to the ledger when one is supplied.
    """
    sims = np.array([
        cosine_similarity(embedder.embed(entry.image), target)
        for entry in pool.entries
    ])
    if ledger is not None:
        ledger.charge_topn(len(pool.entries))
    indices = np.arange(len(pool.entries))
    order = np.lexsort((indices, -sims))
    return [
        RankedCandidate(pool_index=int(j), initial_similarity=float(sims[j]),
                        rank=r + 1)
        for r, j in enumerate(order)
    ]


def top_n(ranked: List[RankedCandidate], n: int) -> List[RankedCandidate]:
    """First n candidates by rank; clamps (with a warning) when n exceeds V."""
    if n < 1:
        raise ConfigInvalid(f"top-N must be >= 1, got {n}")
    if n > len(ranked):
        warnings.warn(
            f"top-N {n} exceeds the pool volume {len(ranked)}; clamping",
            stacklevel=2)
        n = len(ranked)
    return list(ranked[:n])
