"""Attack orchestration: ranked sequential refinement with exact accounting.

Candidates are refined strictly in rank order.  The loop halts at the
first candidate whose refinement reaches the confidence bar; if none does,
every candidate is refined and the one with the highest final similarity
wins (ties go to the lower rank, the cheaper find).  The query ledger adds
the selection cost V to whatever the refiners consumed, and in black-box
mode the per-candidate iteration cap is derived from the global budget so
the total can never overrun it.
"""
import time
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

from .core import EmbeddingVector, ImageSample, LatentCode, TargetSpec
from .errors import AllCandidatesFailed, BudgetTooSmall, ConfigInvalid, NonFiniteLoss
from .models import AttackSession, QueryLedger
from .pool import LatentPool
from .ranking import RankedCandidate, rank_candidates, top_n
from .refine import (
    GreedyConfig,
    PerturbationBudget,
    RefineResult,
    STOP_CONFIDENCE,
    StepSchedule,
    refine_blackbox,
    refine_whitebox,
)

MODE_WHITEBOX = "whitebox"
MODE_BLACKBOX = "blackbox"


@dataclass(frozen=True)
class AttackResult:
    reconstruction: ImageSample
    refined_latent: LatentCode
    chosen_rank: int
    final_similarity: float
    ledger: QueryLedger
    candidates: Tuple[RankedCandidate, ...]
    candidate_traces: Tuple[RefineResult, ...]
    wall_time: float


def compute_tmax(q_max: int, v: int, n: int) -> int:
    """Per-candidate iteration cap that keeps N refinements plus the
    V selection queries inside the global budget: floor((q_max - v) / n)."""
    if n < 1:
        raise ConfigInvalid(f"N must be >= 1, got {n}")
    if q_max <= v:
        raise BudgetTooSmall(
            f"query budget {q_max} does not exceed the selection cost V = {v}")
    return (q_max - v) // n


def ranked_adversary(pool: LatentPool, candidates: Sequence[RankedCandidate],
                     target: EmbeddingVector, session: AttackSession,
                     budget: PerturbationBudget, tau_C: float, mode: str,
                     t_max: Optional[int] = None,
                     query_cap: Optional[int] = None,
                     step_config: StepSchedule = StepSchedule(),
                     greedy_config: GreedyConfig = GreedyConfig()) -> AttackResult:
    """Refine candidates in rank order with early stop and argmax fallback.

    Candidates whose refinement aborts on a non-finite objective are
    skipped; if every candidate aborts, AllCandidatesFailed is raised.
    """
    if mode not in (MODE_WHITEBOX, MODE_BLACKBOX):
        raise ConfigInvalid(f"unknown mode {mode!r}")
    if mode == MODE_WHITEBOX and t_max is None:
        raise ConfigInvalid("white-box mode needs t_max")
    if mode == MODE_BLACKBOX and query_cap is None:
        raise ConfigInvalid("black-box mode needs query_cap")
    if not candidates:
        raise ConfigInvalid("no candidates to refine")

    started = time.perf_counter()
    refined: List[Tuple[RankedCandidate, RefineResult]] = []
    for cand in candidates:
        x_G = pool.entries[cand.pool_index].latent
        try:
            if mode == MODE_WHITEBOX:
                result = refine_whitebox(x_G, target, session, budget,
                                         t_max, tau_C, step_config)
            else:
                result = refine_blackbox(x_G, target, session, budget,
                                         query_cap, tau_C, greedy_config)
        except NonFiniteLoss:
            continue
        refined.append((cand, result))
        if result.stop_reason == STOP_CONFIDENCE:
            break
    if not refined:
        raise AllCandidatesFailed(
            f"all {len(candidates)} candidate refinements aborted")

    best_idx = 0
    for i in range(1, len(refined)):
        if refined[i][1].final_similarity > refined[best_idx][1].final_similarity:
            best_idx = i
    chosen_cand, chosen_result = refined[best_idx]
    reconstruction = session.generator.generate(chosen_result.refined)
    return AttackResult(
        reconstruction=reconstruction,
        refined_latent=chosen_result.refined,
        chosen_rank=chosen_cand.rank,
        final_similarity=chosen_result.final_similarity,
        ledger=session.ledger,
        candidates=tuple(c for c, _ in refined),
        candidate_traces=tuple(r for _, r in refined),
        wall_time=time.perf_counter() - started,
    )


@dataclass(frozen=True)
class AttackSettings:
    """Everything run_attack needs beyond the pool and the backend."""

    mode: str
    budget: PerturbationBudget
    tau_C: float
    n_top: int
    t_max: Optional[int] = None       # white-box per-candidate iterations
    q_max: Optional[int] = None       # black-box global query budget
    step_config: StepSchedule = StepSchedule()
    greedy_config: GreedyConfig = GreedyConfig()

    def validate(self):
        if self.mode == MODE_WHITEBOX:
            if self.t_max is None or self.q_max is not None:
                raise ConfigInvalid("white-box mode takes t_max and no Q_max")
        elif self.mode == MODE_BLACKBOX:
            if self.q_max is None or self.t_max is not None:
                raise ConfigInvalid("black-box mode takes Q_max and no t_max")
        else:
            raise ConfigInvalid(f"unknown mode {self.mode!r}")
        if self.n_top < 1:
            raise ConfigInvalid("top-N must be >= 1")


def run_attack(target_spec: TargetSpec, pool: LatentPool,
               settings: AttackSettings, backend,
               sink=None) -> AttackResult:
    """Full attack on one target: rank, select, refine.

    ``backend`` provides ``generator`` and ``embedder_by_id``; the target
    model is looked up from ``target_spec.target_model_id``.  Only the
    target embedding and model id are ever read from ``target_spec``; the
    identity annotation is evaluation-side metadata that the attack must
    stay blind to.  When ``sink`` is given the finished result is handed
    to it (the CLI uses this to persist records).
    """
    settings.validate()
    started = time.perf_counter()
    embedder = backend.embedder_by_id(target_spec.target_model_id)
    generator = backend.generator
    target = target_spec.target_embedding

    ledger = QueryLedger(q_max=settings.q_max)
    session = AttackSession(generator, embedder, ledger,
                            allow_gradient=settings.mode == MODE_WHITEBOX)

    ranked = rank_candidates(pool, target, embedder, ledger)
    selected = top_n(ranked, settings.n_top)

    if settings.mode == MODE_BLACKBOX:
        per_candidate_cap = compute_tmax(settings.q_max, len(pool.entries),
                                         len(selected))
        if per_candidate_cap < 1:
            raise BudgetTooSmall(
                f"budget {settings.q_max} leaves no refinement queries for "
                f"{len(selected)} candidates after V = {len(pool.entries)}")
        result = ranked_adversary(pool, selected, target, session,
                                  settings.budget, settings.tau_C,
                                  MODE_BLACKBOX, query_cap=per_candidate_cap,
                                  greedy_config=settings.greedy_config)
    else:
        result = ranked_adversary(pool, selected, target, session,
                                  settings.budget, settings.tau_C,
                                  MODE_WHITEBOX, t_max=settings.t_max,
                                  step_config=settings.step_config)
    result = AttackResult(
        reconstruction=result.reconstruction,
        refined_latent=result.refined_latent,
        chosen_rank=result.chosen_rank,
        final_similarity=result.final_similarity,
        ledger=result.ledger,
        candidates=result.candidates,
        candidate_traces=result.candidate_traces,
        wall_time=time.perf_counter() - started,
    )
    if sink is not None:
        sink(result)
    return result
