"""Adversarial refinement of a single latent code inside an L2 or Linf ball.

Both refiners maximize the embedding-similarity objective through an
AttackSession and share the same bookkeeping contract:

  * the unperturbed latent is evaluated first (one query); refinement
    iterations start after that,
  * ``trace`` holds one similarity per iteration (the initial evaluation
    is reported separately as ``initial_similarity``),
  * every evaluated iterate has already been projected into the budget
    ball, so feasibility holds at all times,
  * the refiner returns at the first iterate reaching the confidence bar
    tau_C, otherwise after the budget with the best iterate seen.

The white-box path is projected gradient ascent with momentum and an
adaptive step schedule: progress is reviewed at a thinning sequence of
checkpoints and, when a review fails, the step is halved and the search
restarts from the best point so far.  The black-box path is a greedy
coordinate search driven entirely by observed objective gains; it never
touches gradients.
"""
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .core import EmbeddingVector, LatentCode
from .errors import ConfigInvalid, NonFiniteLoss
from .models import AttackSession

NORM_L2 = "l2"
NORM_LINF = "linf"

STOP_CONFIDENCE = "confidence_reached"
STOP_BUDGET = "budget_exhausted"


@dataclass(frozen=True)
class PerturbationBudget:
    norm: str
    epsilon: float

    def __post_init__(self):
        if self.norm not in (NORM_L2, NORM_LINF):
            raise ConfigInvalid(f"norm must be {NORM_L2!r} or {NORM_LINF!r}, got {self.norm!r}")
        if not self.epsilon > 0:
            raise ConfigInvalid(f"epsilon must be > 0, got {self.epsilon}")


@dataclass(frozen=True)
class RefineResult:
    refined: LatentCode
    initial_similarity: float
    final_similarity: float
    iterations_used: int
    queries_used: int
    stop_reason: str
    trace: Tuple[float, ...]


@dataclass(frozen=True)
class StepSchedule:
    """Knobs of the adaptive white-box schedule.

    Checkpoints sit at cumulative fractions of the iteration budget whose
    gaps start at ``checkpoint_initial`` and shrink by ``checkpoint_shrink``
    down to ``checkpoint_min``.  A checkpoint fails when fewer than
    ``success_fraction`` of its window's iterations improved the objective,
    or when the best value stalled and the step was not already halved.
    """

    momentum: float = 0.75
    initial_step_factor: float = 0.1
    checkpoint_initial: float = 0.22
    checkpoint_shrink: float = 0.03
    checkpoint_min: float = 0.06
    success_fraction: float = 0.75

    def __post_init__(self):
        if not 0.0 <= self.momentum <= 1.0:
            raise ConfigInvalid("momentum must be in [0, 1]")
        if self.initial_step_factor <= 0:
            raise ConfigInvalid("initial_step_factor must be > 0")
        if not 0.0 < self.checkpoint_min <= self.checkpoint_initial:
            raise ConfigInvalid("checkpoint fractions must satisfy 0 < min <= initial")


@dataclass(frozen=True)
class GreedyConfig:
    """Knobs of the black-box greedy coordinate search.

    Coordinates are proposed in priority order; a coordinate's priority is
    an exponentially decayed average of the gains its proposals produced
    (untried coordinates rank first, so the opening pass sweeps every
    coordinate once).  The step starts at ``initial_step`` and is scaled by
    ``step_decay`` after ``stagnation_window`` consecutive rejected
    proposals (0 means one full sweep of the latent).  ``max_coords``
    optionally caps how many distinct coordinates may ever be touched.
    """

    initial_step: float = 0.5
    step_decay: float = 0.5
    gain_decay: float = 0.9
    stagnation_window: int = 0
    min_step: float = 1e-3
    max_coords: Optional[int] = None

    def __post_init__(self):
        if self.initial_step <= 0 or self.min_step <= 0:
            raise ConfigInvalid("steps must be > 0")
        if not 0.0 < self.step_decay <= 1.0:
            raise ConfigInvalid("step_decay must be in (0, 1]")
        if not 0.0 <= self.gain_decay < 1.0:
            raise ConfigInvalid("gain_decay must be in [0, 1)")
        if self.stagnation_window < 0:
            raise ConfigInvalid("stagnation_window must be >= 0")
        if self.max_coords is not None and self.max_coords < 1:
            raise ConfigInvalid("max_coords must be >= 1 when set")


def project(delta: np.ndarray, budget: PerturbationBudget) -> np.ndarray:
    """Map a perturbation into the budget ball (idempotent).

    L2: radial scaling by min(1, eps/||delta||).  Linf: per-coordinate
    clamp to [-eps, eps].  The L2 rescale repeats if rounding left the
    norm a few ulp above eps, so the result is a true fixed point.
    """
    delta = np.asarray(delta, dtype=np.float64)
    if budget.norm == NORM_L2:
        norm = float(np.linalg.norm(delta))
        while norm > budget.epsilon:
            delta = delta * (budget.epsilon / norm)
            norm = float(np.linalg.norm(delta))
        return delta
    return np.clip(delta, -budget.epsilon, budget.epsilon)


def _checkpoints(t_max: int, sched: StepSchedule):
    """Strictly increasing iteration indices of the step-review points."""
    points = []
    p_prev, p = 0.0, sched.checkpoint_initial
    while True:
        w = int(math.ceil(p * t_max))
        if w >= t_max:
            break
        if not points or w > points[-1]:
            points.append(w)
        gap = max(p - p_prev - sched.checkpoint_shrink, sched.checkpoint_min)
        p_prev, p = p, p + gap
    return points


def _finite_or_raise(value: float, trace):
    if not math.isfinite(value):
        raise NonFiniteLoss(f"objective evaluated to {value!r}", trace=trace)
    return value


def refine_whitebox(x_G: LatentCode, target: EmbeddingVector,
                    session: AttackSession, budget: PerturbationBudget,
                    t_max: int, tau_C: float,
                    step_config: StepSchedule = StepSchedule()) -> RefineResult:
    """Projected gradient ascent with momentum and adaptive step halving."""
    if t_max < 1:
        raise ConfigInvalid(f"t_max must be >= 1, got {t_max}")
    x0 = x_G.values
    trace = []
    s0 = _finite_or_raise(session.loss(x0, target), trace)
    queries = 1
    if s0 >= tau_C:
        return RefineResult(refined=x_G, initial_similarity=s0,
                            final_similarity=s0, iterations_used=0,
                            queries_used=queries, stop_reason=STOP_CONFIDENCE,
                            trace=())

    step = step_config.initial_step_factor * budget.epsilon
    delta = np.zeros_like(x0)
    delta_prev = delta
    best_s, best_delta = s0, delta
    s_prev = s0
    successes = 0
    checkpoints = _checkpoints(t_max, step_config)
    next_cp = 0
    window_start = 0
    best_at_last_cp = best_s
    halved_at_last_cp = True  # suppress the stall rule before the first review

    stop_reason = STOP_BUDGET
    iterations = 0
    for it in range(1, t_max + 1):
        grad = session.loss_gradient(x0 + delta, target)
        if budget.norm == NORM_L2:
            gnorm = float(np.linalg.norm(grad))
            direction = grad / gnorm if gnorm > 0 else grad
        else:
            direction = np.sign(grad)
        z = project(delta + step * direction, budget)
        a = step_config.momentum if it > 1 else 1.0
        candidate = project(delta + a * (z - delta) + (1.0 - a) * (delta - delta_prev),
                            budget)
        delta_prev, delta = delta, candidate

        s = _finite_or_raise(session.loss(x0 + delta, target), trace)
        queries += 1
        trace.append(s)
        iterations = it
        if s > s_prev:
            successes += 1
        s_prev = s
        if s > best_s:
            best_s, best_delta = s, delta
        if s >= tau_C:
            stop_reason = STOP_CONFIDENCE
            break

        if next_cp < len(checkpoints) and it == checkpoints[next_cp]:
            window = it - window_start
            too_few = successes < step_config.success_fraction * window
            stalled = (not halved_at_last_cp) and (best_s <= best_at_last_cp)
            if too_few or stalled:
                step *= 0.5
                delta = best_delta
                delta_prev = best_delta
                s_prev = best_s
                halved_at_last_cp = True
            else:
                halved_at_last_cp = False
            best_at_last_cp = best_s
            successes = 0
            window_start = it
            next_cp += 1

    refined = LatentCode(values=x0 + best_delta, seed=x_G.seed,
                         p_K=x_G.p_K, p_D=x_G.p_D)
    return RefineResult(refined=refined, initial_similarity=s0,
                        final_similarity=max(best_s, s0),
                        iterations_used=iterations, queries_used=queries,
                        stop_reason=stop_reason, trace=tuple(trace))


def refine_blackbox(x_G: LatentCode, target: EmbeddingVector,
                    session: AttackSession, budget: PerturbationBudget,
                    query_cap: int, tau_C: float,
                    greedy_config: GreedyConfig = GreedyConfig()) -> RefineResult:
    """Greedy coordinate search under a hard evaluation budget.

    Every proposal costs exactly one query; a proposal is kept only if it
    improves the best objective seen.  Gradients are never requested.
    """
    if query_cap < 1:
        raise ConfigInvalid(f"query_cap must be >= 1, got {query_cap}")
    cfg = greedy_config
    x0 = x_G.values
    d = x0.size
    trace = []
    s0 = _finite_or_raise(session.loss(x0, target), trace)
    queries = 1
    best_s = s0
    if s0 >= tau_C:
        return RefineResult(refined=x_G, initial_similarity=s0,
                            final_similarity=s0, iterations_used=0,
                            queries_used=queries, stop_reason=STOP_CONFIDENCE,
                            trace=())

    scores = np.full(d, np.inf)       # untried coordinates go first
    last_visit = np.full(d, -1, dtype=np.int64)
    preferred = np.ones(d)
    delta = np.zeros(d)
    best_delta = delta
    touched = set()
    step = cfg.initial_step
    window = cfg.stagnation_window if cfg.stagnation_window > 0 else d
    consecutive_fails = 0
    stop_reason = STOP_BUDGET

    while queries < query_cap:
        if cfg.max_coords is not None and len(touched) >= cfg.max_coords:
            allowed = list(touched)
        else:
            allowed = range(d)
        # Highest decayed gain first; ties go to the least recently visited,
        # then the lowest index, which makes the opening pass a plain sweep.
        coord = max(allowed, key=lambda j: (scores[j], -last_visit[j], -j))
        sign = preferred[coord]
        proposal = delta.copy()
        proposal[coord] += sign * step
        proposal = project(proposal, budget)

        s = _finite_or_raise(session.loss(x0 + proposal, target), trace)
        queries += 1
        trace.append(s)
        gain = s - best_s
        if gain > 0:
            delta = proposal
            best_delta = proposal
            best_s = s
            touched.add(coord)
            consecutive_fails = 0
        else:
            preferred[coord] = -sign
            consecutive_fails += 1
            if consecutive_fails >= window:
                step = max(step * cfg.step_decay, cfg.min_step)
                consecutive_fails = 0
        observed = max(gain, 0.0)
        if math.isinf(scores[coord]):
            scores[coord] = observed
        else:
            scores[coord] = cfg.gain_decay * scores[coord] + (1.0 - cfg.gain_decay) * observed
        last_visit[coord] = queries

        if s >= tau_C:
            stop_reason = STOP_CONFIDENCE
            break

    refined = LatentCode(values=x0 + best_delta, seed=x_G.seed,
                         p_K=x_G.p_K, p_D=x_G.p_D)
    return RefineResult(refined=refined, initial_similarity=s0,
                        final_similarity=best_s,
                        iterations_used=queries - 1, queries_used=queries,
                        stop_reason=stop_reason, trace=tuple(trace))
