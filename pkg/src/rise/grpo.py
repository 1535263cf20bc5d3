"""Group-relative advantages and the clipped surrogate on a softmax policy.

The toy policy is a categorical distribution over a discrete action set, so
the likelihood ratio of a "response" is the ratio of one action's
probability under the current and the frozen logits.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from rise.config import ScheduleConfig

RewardGroup = Sequence[float]
Group = tuple[Sequence[int], Sequence[float]]


def group_advantages(rewards: RewardGroup, eps_norm: float) -> np.ndarray:
    """(r - mean) / (std + eps_norm) with the population std."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or r.size < 2:
        raise ValueError("a reward group needs at least two rewards")
    if not eps_norm > 0:
        raise ValueError("eps_norm must be positive")
    centered = r - r.mean()
    return centered / (np.sqrt(np.mean(centered**2)) + eps_norm)


def clipped_objective(ratios: Sequence[float], adv: Sequence[float], eps_clip: float) -> float:
    """Negated clipped surrogate for one group (a loss to minimise)."""
    ratios = np.asarray(ratios, dtype=np.float64)
    adv = np.asarray(adv, dtype=np.float64)
    if ratios.shape != adv.shape:
        raise ValueError("ratios and advantages differ in length")
    unclipped = ratios * adv
    clipped = np.clip(ratios, 1.0 - eps_clip, 1.0 + eps_clip) * adv
    return float(-np.mean(np.minimum(unclipped, clipped)))


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits)
    return shifted - np.log(np.sum(np.exp(shifted)))


@dataclass
class ToyPolicy:
    logits: np.ndarray
    snapshot_old: np.ndarray

    @classmethod
    def uniform(cls, n_actions: int) -> "ToyPolicy":
        z = np.zeros(n_actions)
        return cls(z, z.copy())

    @property
    def n_actions(self) -> int:
        return self.logits.shape[0]

    def probs(self) -> np.ndarray:
        return np.exp(log_softmax(self.logits))

    def old_probs(self) -> np.ndarray:
        return np.exp(log_softmax(self.snapshot_old))

    def snapshot(self) -> "ToyPolicy":
        """Freeze the current logits as the old policy for a new round."""
        return ToyPolicy(self.logits.copy(), self.logits.copy())

    def sample(self, rng: np.random.Generator, size: int | None = None):
        return rng.choice(self.n_actions, size=size, p=self.probs())


def toy_policy_logprob(p: ToyPolicy, action: int) -> tuple[float, float]:
    """(log π_new(action), log π_old(action))."""
    if not 0 <= action < p.n_actions:
        raise IndexError(f"action {action} out of range for {p.n_actions} actions")
    return float(log_softmax(p.logits)[action]), float(log_softmax(p.snapshot_old)[action])


def _prepare(p: ToyPolicy, groups: Sequence[Group], eps_norm: float):
    if not groups:
        raise ValueError("grpo_update needs at least one group")
    new_lp = log_softmax(p.logits)
    old_lp = log_softmax(p.snapshot_old)
    prepared = []
    for actions, rewards in groups:
        actions = np.asarray(actions, dtype=np.intp)
        if len(actions) != len(rewards):
            raise ValueError("actions and rewards differ in length")
        adv = group_advantages(rewards, eps_norm)
        ratios = np.exp(new_lp[actions] - old_lp[actions])
        prepared.append((actions, adv, ratios))
    return prepared


def grpo_loss(p: ToyPolicy, groups: Sequence[Group], eps_norm: float, eps_clip: float) -> float:
    """Mean over groups of the clipped objective."""
    prepared = _prepare(p, groups, eps_norm)
    return float(np.mean([clipped_objective(r, a, eps_clip) for _, a, r in prepared]))


def grpo_gradient(p: ToyPolicy, groups: Sequence[Group], eps_norm: float, eps_clip: float) -> np.ndarray:
    """Analytic gradient of :func:`grpo_loss` with respect to the logits."""
    prepared = _prepare(p, groups, eps_norm)
    probs = p.probs()
    grad = np.zeros_like(p.logits, dtype=np.float64)
    for actions, adv, ratios in prepared:
        # The unclipped branch carries gradient unless the clip is binding.
        active = np.where(adv >= 0, ratios <= 1.0 + eps_clip, ratios >= 1.0 - eps_clip)
        coef = -(adv * ratios * active) / len(actions)
        # d ratio_i / d logits = ratio_i * (e_{a_i} - probs)
        np.add.at(grad, actions, coef)
        grad -= coef.sum() * probs
    return grad / len(prepared)


def grpo_update(p: ToyPolicy, groups: Sequence[Group], cfg: ScheduleConfig,
                step_size: float | None = None) -> ToyPolicy:
    """One gradient-descent step on the loss; the old snapshot is kept.

    ``step_size`` defaults to ``cfg.step_size``.
    """
    if step_size is None:
        step_size = cfg.step_size
    grad = grpo_gradient(p, groups, cfg.eps_norm, cfg.eps_clip)
    return ToyPolicy(p.logits - step_size * grad, p.snapshot_old.copy())
