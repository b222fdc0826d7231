"""Synthetic engagement streams drawn from the novelty generative model.

Known per-learner skills and known (time-varying) engagement margins: a label
is +1 exactly when the noisy team performance difference lands within the
learner's margin for the current phase of their stream. Margins are set per
phase as the quantile of the learner's own |difference| values at a target
engagement rate, so realized rates are controlled. The default parameters
give streams where the margin model has an honest edge over the static
baselines: a high-engagement first phase followed by a tightened-margin
second phase that a running-mean predictor adapts to only slowly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .corpus import EngagementEvent

FRAGMENTS_PER_LECTURE = 10

DEFAULT_RATE_BANDS = ((0.85, 0.95), (0.50, 0.60))


@dataclass
class SynthTruth:
    learner_ids: list[str]
    skills: np.ndarray          # (n_learners, n_kcs) true skill levels
    margins: np.ndarray         # (n_learners, n_phases) true engagement margins
    target_rates: np.ndarray    # (n_learners, n_phases) intended engagement rates


def _zipf_weights(n_kcs: int, exponent: float) -> np.ndarray:
    weights = 1.0 / np.arange(1, n_kcs + 1) ** exponent
    return weights / weights.sum()


def generate_novelty_stream(
    n_learners: int,
    events_per_learner: int | None = None,
    *,
    total_events: int | None = None,
    n_kcs: int = 200,
    topics_per_event: int = 5,
    seed: int = 0,
    performance_noise_sq: float = 0.001,
    skill_spread: float = 0.2,
    depth_beta: tuple[float, float] = (0.4, 1.0),
    topic_skew: float = 2.5,
    rate_bands: tuple[tuple[float, float], ...] = DEFAULT_RATE_BANDS,
) -> tuple[list[EngagementEvent], SynthTruth]:
    """Engagement events labelled by the within-margin rule on true skills.

    Each event draws ``topics_per_event`` distinct KCs from a Zipf-skewed
    popularity (head topics recur enough to be learnable) and cosine depths
    from Beta(*depth_beta*). True skills are centred, per learner, on the
    depth mean so the margin rule is the only engagement mechanism. Each
    learner's stream is split evenly into ``len(rate_bands)`` phases; the
    phase margin is the quantile of that phase's |performance difference| at
    a rate drawn from the band. Events come grouped by learner with
    per-learner order 0..m-1.
    """
    if (events_per_learner is None) == (total_events is None):
        raise ValueError("pass exactly one of events_per_learner / total_events")
    if events_per_learner is not None:
        counts = np.full(n_learners, events_per_learner, dtype=np.int64)
    else:
        base, extra = divmod(total_events, n_learners)
        counts = np.full(n_learners, base, dtype=np.int64)
        counts[:extra] += 1
    if counts.min() < len(rate_bands):
        raise ValueError("each learner needs at least one event per phase")
    total = int(counts.sum())
    n_phases = len(rate_bands)

    rng = np.random.default_rng(seed)
    weights = _zipf_weights(n_kcs, topic_skew)
    depth_mean = depth_beta[0] / (depth_beta[0] + depth_beta[1])
    skills = rng.normal(0.0, skill_spread, size=(n_learners, n_kcs))
    skills = skills - (skills * weights).sum(axis=1, keepdims=True) + depth_mean
    rates = np.column_stack([
        rng.uniform(lo, hi, size=n_learners) for lo, hi in rate_bands])

    log_w = np.log(weights)
    topics = np.empty((total, topics_per_event), dtype=np.int64)
    chunk = 20_000  # bounds the Gumbel key matrix to ~32 MB
    for start in range(0, total, chunk):
        stop = min(start + chunk, total)
        keys = rng.gumbel(size=(stop - start, n_kcs)) + log_w
        part = np.argpartition(-keys, topics_per_event - 1, axis=1)[:, :topics_per_event]
        row_keys = np.take_along_axis(keys, part, axis=1)
        order = np.argsort(-row_keys, axis=1)
        topics[start:stop] = np.take_along_axis(part, order, axis=1)

    cosines = rng.beta(depth_beta[0], depth_beta[1], size=(total, topics_per_event))
    learner_idx = np.repeat(np.arange(n_learners), counts)
    diff = (skills[learner_idx[:, None], topics].sum(axis=1)
            - cosines.sum(axis=1)
            + rng.normal(0.0, math.sqrt(2.0 * topics_per_event * performance_noise_sq),
                         size=total))

    margins = np.empty((n_learners, n_phases))
    labels = np.empty(total, dtype=np.int64)
    pos = 0
    for li in range(n_learners):
        count = int(counts[li])
        bounds = np.linspace(0, count, n_phases + 1).astype(int)
        for phase in range(n_phases):
            lo, hi = pos + bounds[phase], pos + bounds[phase + 1]
            margin = float(np.quantile(np.abs(diff[lo:hi]), rates[li, phase]))
            margins[li, phase] = margin
            labels[lo:hi] = np.where(np.abs(diff[lo:hi]) <= margin, 1, -1)
        pos += count

    learner_ids = [f"u{i:05d}" for i in range(n_learners)]
    events: list[EngagementEvent] = []
    pos = 0
    for li, count in enumerate(counts):
        lid = learner_ids[li]
        for order in range(int(count)):
            row = pos + order
            events.append(EngagementEvent(
                learner_id=lid,
                lecture_id=f"{lid}-L{order // FRAGMENTS_PER_LECTURE}",
                fragment_index=order % FRAGMENTS_PER_LECTURE,
                order=order,
                topics=tuple(
                    (int(topics[row, j]), float(cosines[row, j]))
                    for j in range(topics_per_event)
                ),
                label=int(labels[row]),
            ))
        pos += int(count)

    truth = SynthTruth(learner_ids=learner_ids, skills=skills,
                       margins=margins, target_rates=rates)
    return events, truth


def random_event_stream(n_events: int, seed: int, n_kcs: int = 50,
                        max_topics: int = 4, learner_id: str = "u",
                        positive_rate: float = 0.6) -> list[EngagementEvent]:
    """A single learner's random stream, for invariance tests."""
    rng = np.random.default_rng(seed)
    events = []
    for order in range(n_events):
        n_topics = int(rng.integers(1, max_topics + 1))
        kcs = rng.choice(n_kcs, size=n_topics, replace=False)
        events.append(EngagementEvent(
            learner_id=learner_id,
            lecture_id=f"L{order // FRAGMENTS_PER_LECTURE}",
            fragment_index=order % FRAGMENTS_PER_LECTURE,
            order=order,
            topics=tuple((int(kc), float(rng.uniform(0.0, 1.0))) for kc in kcs),
            label=1 if rng.random() < positive_rate else -1,
        ))
    return events
