"""
Toy reinforcement fine-tuning harness.

A softmax policy over a SID vocabulary, one logit row per context, stands in
for the language model. Each step samples a group of k-item lists per
context, scores them with the list rewards, turns the rewards into group
advantages and takes one REINFORCE step with a KL anchor to the starting
logits. Ranking metrics (Acc@k, MRR) live here too.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from .errors import PolicyDivergedError
from .hsom import render_sid
from .model.config import SimulateConfig
from .model.schema import EvalReport, RewardBreakdown, RewardWeights
from .rewards import render_completion, score_group

logger = logging.getLogger(__name__)

GREEDY_TEMPERATURE = 1e-6
THINK_TEXT = "ranking candidate POIs by visit pattern and target time"
EVAL_KS = (1, 5, 10)


def _log_softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - np.max(x)
    return shifted - np.log(np.sum(np.exp(shifted)))


def softmax(x: np.ndarray) -> np.ndarray:
    return np.exp(_log_softmax(x))


@dataclass
class ToyPolicy:
    """Logits of shape (contexts, items); item names are rendered SIDs."""
    logits: np.ndarray
    items: List[str]
    temperature: float = 1.0

    def __post_init__(self):
        if self.logits.ndim != 2 or self.logits.shape[1] != len(self.items):
            raise ValueError(f"logits of shape {self.logits.shape} do not match {len(self.items)} items")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")

    @property
    def n_contexts(self) -> int:
        return self.logits.shape[0]

    @property
    def n_items(self) -> int:
        return self.logits.shape[1]

    @property
    def greedy(self) -> bool:
        return self.temperature <= GREEDY_TEMPERATURE

    def ranking(self, context: int, k: int) -> List[int]:
        """Greedy decoding: the k highest logits, ties by item index."""
        return [int(i) for i in np.argsort(-self.logits[context], kind="stable")[:k]]

    def copy(self) -> "ToyPolicy":
        return ToyPolicy(logits=self.logits.copy(), items=list(self.items), temperature=self.temperature)


def group_advantages(rewards: Sequence[float], variance_floor: float = 1e-8) -> np.ndarray:
    """(r - mean) / max(population std, floor); all zeros when the rewards are equal."""
    rewards = np.asarray(rewards, dtype=np.float64)
    if rewards.size < 2:
        raise ValueError(f"a group needs at least 2 rewards, got {rewards.size}")
    if np.ptp(rewards) == 0.0:
        return np.zeros_like(rewards)
    centered = rewards - rewards.mean()
    return centered / max(float(rewards.std()), variance_floor)


def sample_list(
    policy: ToyPolicy,
    context: int,
    k: int,
    rng: np.random.Generator,
    with_replacement: bool = False,
) -> List[int]:
    """
    k items from softmax(logits / temperature). Without replacement this is
    sequential sampling with renormalization, done in one shot via Gumbel-top-k.
    """
    if not with_replacement and k > policy.n_items:
        raise ValueError(f"cannot draw {k} distinct items from {policy.n_items}")
    if policy.greedy:
        if with_replacement:
            return [policy.ranking(context, 1)[0]] * k
        return policy.ranking(context, k)
    scaled = policy.logits[context] / policy.temperature
    if with_replacement:
        return [int(i) for i in rng.choice(policy.n_items, size=k, p=softmax(scaled))]
    keys = scaled + rng.gumbel(size=policy.n_items)
    return [int(i) for i in np.argsort(-keys, kind="stable")[:k]]


def sequence_log_prob(
    logits: np.ndarray,
    completion: Sequence[int],
    temperature: float = 1.0,
    with_replacement: bool = False,
) -> float:
    scaled = np.asarray(logits, dtype=np.float64) / temperature
    if with_replacement:
        return float(np.sum(_log_softmax(scaled)[list(completion)]))
    mask = np.zeros(scaled.shape, dtype=bool)
    total = 0.0
    for item in completion:
        remaining = np.where(mask, -np.inf, scaled)
        total += float(_log_softmax(remaining)[item])
        mask[item] = True
    return total


def _log_prob_gradient(
    logits: np.ndarray,
    completion: Sequence[int],
    temperature: float,
    with_replacement: bool,
) -> np.ndarray:
    scaled = logits / temperature
    grad = np.zeros_like(scaled)
    if with_replacement:
        p = softmax(scaled)
        for item in completion:
            grad[item] += 1.0
        grad -= len(completion) * p
        return grad / temperature
    mask = np.zeros(scaled.shape, dtype=bool)
    for item in completion:
        remaining = np.where(mask, -np.inf, scaled)
        grad -= np.exp(_log_softmax(remaining))
        grad[item] += 1.0
        mask[item] = True
    return grad / temperature


def kl_divergence(logits: np.ndarray, reference: np.ndarray, temperature: float = 1.0) -> float:
    """KL(softmax(logits/T) || softmax(reference/T))."""
    log_p = _log_softmax(np.asarray(logits, dtype=np.float64) / temperature)
    log_q = _log_softmax(np.asarray(reference, dtype=np.float64) / temperature)
    return float(np.sum(np.exp(log_p) * (log_p - log_q)))


def _kl_gradient(logits: np.ndarray, reference: np.ndarray, temperature: float) -> np.ndarray:
    log_p = _log_softmax(logits / temperature)
    log_q = _log_softmax(reference / temperature)
    p = np.exp(log_p)
    kl = float(np.sum(p * (log_p - log_q)))
    return p * (log_p - log_q - kl) / temperature


@dataclass
class RolloutGroup:
    context: int
    completions: List[List[int]]
    texts: List[str]
    breakdowns: List[RewardBreakdown]
    rewards: np.ndarray
    advantages: np.ndarray

    @property
    def mean_distinct(self) -> float:
        return float(np.mean([len(set(c)) for c in self.completions]))


def surrogate_objective(
    logits: np.ndarray,
    reference: np.ndarray,
    completions: Sequence[Sequence[int]],
    advantages: Sequence[float],
    temperature: float = 1.0,
    kl_coeff: float = 0.01,
    with_replacement: bool = False,
) -> float:
    """(1/G) sum_g A_g log pi(o_g) - kl_coeff * KL(pi || pi_ref) for one context."""
    pg = sum(a * sequence_log_prob(logits, c, temperature, with_replacement)
             for a, c in zip(advantages, completions)) / len(completions)
    return pg - kl_coeff * kl_divergence(logits, reference, temperature)


def surrogate_gradient(
    logits: np.ndarray,
    reference: np.ndarray,
    completions: Sequence[Sequence[int]],
    advantages: Sequence[float],
    temperature: float = 1.0,
    kl_coeff: float = 0.01,
    with_replacement: bool = False,
) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    grad = np.zeros_like(logits)
    for a, c in zip(advantages, completions):
        if a != 0.0:
            grad += a * _log_prob_gradient(logits, c, temperature, with_replacement)
    grad /= len(completions)
    if kl_coeff:
        grad -= kl_coeff * _kl_gradient(logits, np.asarray(reference, dtype=np.float64), temperature)
    return grad


def kl_safe_step(learning_rate: float, kl_coeff: float, policy: ToyPolicy) -> float:
    """
    Cap the step so the KL term alone cannot overshoot: its curvature in the
    logits is at most kl_coeff * max(p) / T^2.
    """
    if kl_coeff <= 0:
        return learning_rate
    t = max(policy.temperature, GREEDY_TEMPERATURE)
    p_max = max(float(np.max(softmax(row / t))) for row in policy.logits)
    return min(learning_rate, t * t / (kl_coeff * p_max))


def rollout(
    policy: ToyPolicy,
    context: int,
    gt: str,
    weights: RewardWeights,
    group: int,
    rng: np.random.Generator,
    with_replacement: bool = False,
) -> RolloutGroup:
    """Sample `group` completions for a context and score them."""
    if not with_replacement and policy.n_items < weights.k:
        raise ValueError(f"vocabulary of {policy.n_items} items is smaller than k={weights.k}")
    completions = [sample_list(policy, context, weights.k, rng, with_replacement) for _ in range(group)]
    texts = [render_completion([policy.items[i] for i in c], THINK_TEXT) for c in completions]
    breakdowns = score_group(texts, gt, weights)
    rewards = np.array([b.total for b in breakdowns])
    return RolloutGroup(
        context=context,
        completions=completions,
        texts=texts,
        breakdowns=breakdowns,
        rewards=rewards,
        advantages=group_advantages(rewards),
    )


def policy_update(
    policy: ToyPolicy,
    groups: Sequence[RolloutGroup],
    learning_rate: float,
    kl_coeff: float,
    reference: np.ndarray,
    with_replacement: bool = False,
) -> ToyPolicy:
    """One gradient-ascent step on the surrogate of every context in `groups`, in place."""
    step = kl_safe_step(learning_rate, kl_coeff, policy)
    t = max(policy.temperature, GREEDY_TEMPERATURE)
    grads = {
        g.context: surrogate_gradient(
            policy.logits[g.context], reference[g.context], g.completions, g.advantages,
            t, kl_coeff, with_replacement,
        )
        for g in groups
    }
    for context, grad in grads.items():
        policy.logits[context] += step * grad
    if not np.all(np.isfinite(policy.logits)):
        raise PolicyDivergedError("policy logits are not finite", {"step_size": step, "kl_coeff": kl_coeff})
    return policy


def first_rank(ranked: Sequence[str], gt: str) -> Optional[int]:
    try:
        return list(ranked).index(gt) + 1
    except ValueError:
        return None


def acc_at_k(ranked_lists: Sequence[Sequence[str]], gts: Sequence[str], k: int) -> float:
    """Fraction of cases whose ground truth sits in the first k positions."""
    if not ranked_lists:
        raise ValueError("no ranked lists to evaluate")
    hits = []
    for ranked, gt in zip(ranked_lists, gts):
        rank = first_rank(ranked, gt)
        hits.append(1.0 if rank is not None and rank <= k else 0.0)
    return sum(hits) / len(hits)


def mrr(ranked_lists: Sequence[Sequence[str]], gts: Sequence[str], k: int = 10) -> float:
    """Mean of 1/rank, counting ranks beyond k (or absent) as 0."""
    if not ranked_lists:
        raise ValueError("no ranked lists to evaluate")
    terms = []
    for ranked, gt in zip(ranked_lists, gts):
        rank = first_rank(ranked, gt)
        terms.append(1.0 / rank if rank is not None and rank <= k else 0.0)
    return sum(terms) / len(terms)


def evaluate_rankings(
    ranked_lists: Sequence[Sequence[str]],
    gts: Sequence[str],
    ks: Sequence[int] = EVAL_KS,
    cutoff: int = 10,
) -> EvalReport:
    return EvalReport(
        acc_at={k: acc_at_k(ranked_lists, gts, k) for k in ks},
        mrr=mrr(ranked_lists, gts, cutoff),
        m=len(ranked_lists),
        cutoff=cutoff,
    )


def uniform_mrr(n_items: int, k: int = 10) -> float:
    """MRR@k of a uniformly random ranking of n items: H_k / n."""
    return sum(1.0 / r for r in range(1, min(k, n_items) + 1)) / n_items


def sampled_ranking(
    policy: ToyPolicy,
    context: int,
    k: int,
    n_draws: int,
    rng: np.random.Generator,
) -> List[int]:
    """
    Rank by sampling: draw `n_draws` single items at temperature 1 and order
    the distinct draws by log-probability.
    """
    log_p = _log_softmax(policy.logits[context])
    draws = set(int(i) for i in rng.choice(policy.n_items, size=n_draws, p=np.exp(log_p)))
    return sorted(draws, key=lambda i: (-log_p[i], i))[:k]


@dataclass
class SyntheticEnv:
    """
    Next-POI tasks with one hidden answer per context. The starting logits
    favour a few decoys over the answer, with base rates decaying by decoy rank.
    """
    items: List[str]
    ground_truth: List[int]
    initial_logits: np.ndarray

    @property
    def n_contexts(self) -> int:
        return len(self.ground_truth)

    def gt_sid(self, context: int) -> str:
        return self.items[self.ground_truth[context]]

    def policy(self, temperature: float = 1.0) -> ToyPolicy:
        return ToyPolicy(logits=self.initial_logits.copy(), items=list(self.items), temperature=temperature)


def synthetic_items(n_items: int) -> List[str]:
    """Distinct two-layer SIDs on a 4x6 first layer."""
    return [render_sid([(1, (i // 6) % 4, i % 6), (2, i // 24, 0)]) for i in range(n_items)]


def parse_env(env: str) -> Tuple[int, int]:
    """'synth:50x20' -> (50 items, 20 contexts)."""
    kind, _, dims = env.partition(":")
    if kind != "synth":
        raise ValueError(f"Unknown environment '{env}'; expected synth:<items>x<contexts>")
    try:
        n_items, n_contexts = (int(v) for v in dims.lower().split("x"))
    except ValueError:
        raise ValueError(f"invalid environment size in '{env}'")
    if n_items < 2 or n_contexts < 1:
        raise ValueError(f"environment needs >= 2 items and >= 1 context, got {env}")
    return n_items, n_contexts


def make_env(
    n_items: int,
    n_contexts: int,
    seed: int = 0,
    items: Optional[Sequence[str]] = None,
    n_decoys: int = 5,
    decoy_logit: float = 2.0,
    decay: float = 0.7,
    noise: float = 0.1,
) -> SyntheticEnv:
    """
    Build an environment; `items` (e.g. SIDs of a real table) are sampled down
    to n_items when given, else synthetic SIDs are rendered.
    """
    rng = np.random.default_rng(seed)
    if items is not None:
        pool = sorted(items)
        if len(pool) < n_items:
            raise ValueError(f"need {n_items} items, the table has {len(pool)}")
        names = [pool[i] for i in sorted(rng.choice(len(pool), size=n_items, replace=False))]
    else:
        names = synthetic_items(n_items)
    logits = rng.normal(0.0, noise, size=(n_contexts, n_items))
    truth = []
    for c in range(n_contexts):
        order = rng.permutation(n_items)
        truth.append(int(order[0]))
        for j, decoy in enumerate(order[1:1 + n_decoys]):
            logits[c, decoy] += decoy_logit * decay ** j
    return SyntheticEnv(items=names, ground_truth=truth, initial_logits=logits)


def _eval_ks(cutoff: int) -> List[int]:
    return [k for k in EVAL_KS if k <= cutoff] or [cutoff]


def evaluate_policy(policy: ToyPolicy, env: SyntheticEnv, cutoff: int = 10) -> EvalReport:
    """Greedy decoding: one top-k list per context."""
    ranked = [[policy.items[i] for i in policy.ranking(c, cutoff)] for c in range(env.n_contexts)]
    gts = [env.gt_sid(c) for c in range(env.n_contexts)]
    return evaluate_rankings(ranked, gts, ks=_eval_ks(cutoff), cutoff=cutoff)


def evaluate_sampled(
    policy: ToyPolicy,
    env: SyntheticEnv,
    cutoff: int = 10,
    n_lists: int = 64,
    seed: int = 0,
) -> EvalReport:
    """
    Acc@k/MRR of lists drawn from the policy itself (without replacement, at
    its temperature), `n_lists` draws per context. Unlike greedy decoding this
    keeps moving after the answer reaches the top logit.
    """
    rng = np.random.default_rng([seed, n_lists])
    k = min(cutoff, policy.n_items)
    ranked, gts = [], []
    for c in range(env.n_contexts):
        for _ in range(n_lists):
            ranked.append([policy.items[i] for i in sample_list(policy, c, k, rng)])
            gts.append(env.gt_sid(c))
    return evaluate_rankings(ranked, gts, ks=_eval_ks(cutoff), cutoff=cutoff)


def evaluate_decoded(
    policy: ToyPolicy,
    env: SyntheticEnv,
    cutoff: int = 10,
    n_draws: int = 100,
    seed: int = 0,
) -> EvalReport:
    """Acc@k/MRR of the sampled decoder (see `sampled_ranking`), one list per context."""
    rng = np.random.default_rng([seed, n_draws])
    ranked = [
        [policy.items[i] for i in sampled_ranking(policy, c, cutoff, n_draws, rng)]
        for c in range(env.n_contexts)
    ]
    gts = [env.gt_sid(c) for c in range(env.n_contexts)]
    return evaluate_rankings(ranked, gts, ks=_eval_ks(cutoff), cutoff=cutoff)


@dataclass
class ToyRun:
    """`report` holds the final sampled-list metrics; greedy and decoded lists are reported beside it."""
    curve: List[Dict[str, float]] = field(default_factory=list)
    report: Optional[EvalReport] = None
    greedy_report: Optional[EvalReport] = None
    decoded_report: Optional[EvalReport] = None
    policy: Optional[ToyPolicy] = None
    final_mean_distinct: float = 0.0


def _curve_row(
    step: int,
    sampled: EvalReport,
    greedy: EvalReport,
    mean_reward: Optional[float],
    mean_distinct: Optional[float],
) -> Dict[str, float]:
    row = {"step": step, "mean_reward": mean_reward}
    row.update({f"acc{k}": v for k, v in sorted(sampled.acc_at.items())})
    row.update({"mrr": sampled.mrr, "greedy_mrr": greedy.mrr, "mean_distinct": mean_distinct})
    return row


def train_toy(
    env: SyntheticEnv,
    config: SimulateConfig,
    weights: RewardWeights,
    seed: int = 0,
    progress: bool = False,
) -> ToyRun:
    """
    Run `config.steps` updates. Every step rolls out a group for each context,
    then applies one synchronized update to all contexts.
    """
    rng = np.random.default_rng(seed)
    policy = env.policy(config.temperature)
    reference = env.initial_logits.copy()
    run = ToyRun(policy=policy)
    k = weights.k

    def snapshot(step: int, mean_reward: Optional[float], mean_distinct: Optional[float]) -> EvalReport:
        sampled = evaluate_sampled(policy, env, k, config.eval_lists, seed)
        run.curve.append(_curve_row(step, sampled, evaluate_policy(policy, env, k), mean_reward, mean_distinct))
        return sampled

    mean_reward, mean_distinct = None, None
    snapshot(0, mean_reward, mean_distinct)
    for step in tqdm(range(1, config.steps + 1), desc="simulate", disable=not progress):
        groups = [
            rollout(policy, c, env.gt_sid(c), weights, config.group, rng, config.with_replacement)
            for c in range(env.n_contexts)
        ]
        policy_update(policy, groups, config.learning_rate, config.kl_coeff, reference, config.with_replacement)
        mean_reward = float(np.mean([g.rewards.mean() for g in groups]))
        mean_distinct = float(np.mean([g.mean_distinct for g in groups]))
        if step % config.eval_every == 0 or step == config.steps:
            report = snapshot(step, mean_reward, mean_distinct)
            logger.debug("step %d reward %.4f mrr %.4f", step, mean_reward, report.mrr)
    run.report = evaluate_sampled(policy, env, k, config.eval_lists, seed)
    run.greedy_report = evaluate_policy(policy, env, k)
    run.decoded_report = evaluate_decoded(policy, env, k, config.decode_draws, seed)
    run.final_mean_distinct = mean_distinct or 0.0
    logger.info("toy policy after %d steps: MRR %.4f, greedy %.4f, decoded %.4f (uniform %.4f)",
                config.steps, run.report.mrr, run.greedy_report.mrr, run.decoded_report.mrr,
                uniform_mrr(len(env.items), k))
    return run
