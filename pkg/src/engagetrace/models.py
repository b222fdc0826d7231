"""The model zoo: every predictor behind one online predict-then-update interface.

Each model sees a learner's events strictly in order. For every event it first
produces P(engaged) from the current state, then consumes the observed label to
move the state forward (density filtering: the posterior becomes the prior of
the next step). Gaussian models condition a team performance difference on the
outcome and moment-match through :mod:`engagetrace.gaussmath`; the knowledge-
tracing model runs exact noisy-AND updates over Bernoulli skills.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels as _k
from .corpus import EngagementEvent
from .errors import (
    DataError,
    DegenerateEvidenceError,
    EnumerationBoundError,
    SchemaVersionError,
)
from .gaussmath import Gaussian1D, std_cdf, std_quantile

MODEL_KINDS = (
    "persistence",
    "majority",
    "vanilla-trueskill",
    "vanilla-trueskill-video",
    "multiskill-kt",
    "truelearn-dynamic-depth",
    "truelearn-fixed-depth",
    "truelearn-novelty",
)

# Original two-player rating-system defaults, used by the vanilla kinds.
VANILLA_INIT_MEAN = 25.0
VANILLA_INIT_VAR = (25.0 / 3.0) ** 2
VANILLA_BETA_SQ = (25.0 / 6.0) ** 2
VANILLA_TAU = 25.0 / 300.0

VAR_FLOOR = 1e-12
PI_FLOOR = 1e-12
KT_MAX_SKILLS = 10
SELF_SKILL = -1  # reserved kc_id for the whole-learner skill of two-player kinds

STATE_SCHEMA_VERSION = 1


@dataclass
class MarginTracker:
    """Counts engaged outcomes to derive the learner's engagement margin."""

    engaged_count: int = 0
    total_count: int = 0

    def smoothed_rate(self) -> float:
        # Laplace smoothing keeps the rate inside (0, 1) before any evidence.
        return (self.engaged_count + 1.0) / (self.total_count + 2.0)

    def observe(self, label: int) -> None:
        self.total_count += 1
        if label == 1:
            self.engaged_count += 1


@dataclass
class ModelConfig:
    kind: str
    init_mean: float = 0.0
    init_var: float = 1.0            # sigma_0^2
    beta_sq: float = 0.25            # performance noise, beta = 0.5
    tau: float = 0.0                 # drift per time step
    use_negative: bool = True
    top_k: int = 5
    kt_noise: float = 0.1
    default_rate: float = 0.75       # cold-start engagement probability

    def validate(self) -> "ModelConfig":
        if self.kind not in MODEL_KINDS:
            raise ValueError(
                f"unknown model kind {self.kind!r}; valid kinds: {', '.join(MODEL_KINDS)}")
        if not self.init_var > 0.0:
            raise ValueError(f"init_var must be > 0, got {self.init_var}")
        if not self.beta_sq > 0.0:
            raise ValueError(f"beta_sq must be > 0, got {self.beta_sq}")
        if self.tau < 0.0:
            raise ValueError(f"tau must be >= 0, got {self.tau}")
        if not 0.0 <= self.kt_noise < 0.5:
            raise ValueError(f"kt_noise must lie in [0, 0.5), got {self.kt_noise}")
        if self.top_k < 1:
            raise ValueError(f"top_k must be >= 1, got {self.top_k}")
        if not 0.0 < self.default_rate < 1.0:
            raise ValueError(f"default_rate must lie in (0, 1), got {self.default_rate}")
        return self

    @property
    def beta(self) -> float:
        return math.sqrt(self.beta_sq)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def config_for(kind: str, **overrides) -> ModelConfig:
    """A ModelConfig with per-kind defaults (vanilla kinds use rating-system ones)."""
    if kind in ("vanilla-trueskill", "vanilla-trueskill-video"):
        base = dict(init_mean=VANILLA_INIT_MEAN, init_var=VANILLA_INIT_VAR,
                    beta_sq=VANILLA_BETA_SQ, tau=VANILLA_TAU)
    else:
        base = {}
    base.update(overrides)
    return ModelConfig(kind=kind, **base).validate()


@dataclass
class LearnerState:
    """Everything a model may keep per learner.

    Gaussian skills and Bernoulli masteries are sparse maps from kc_id; a
    missing entry means the configured prior. ``last_order`` carries the
    event order at which a skill last took part in an update, for lazy drift.
    """

    skills: dict[int, Gaussian1D] = field(default_factory=dict)
    pis: dict[int, float] = field(default_factory=dict)
    last_order: dict[int, int] = field(default_factory=dict)
    tracker: MarginTracker = field(default_factory=MarginTracker)
    last_label: int = 0        # 0 = no history yet
    pos_labels: int = 0
    n_labels: int = 0


# ---------------------------------------------------------------------------
# Baselines


def predict_persistence(history: Sequence[int], default_rate: float = 0.75) -> tuple[float, int]:
    """Predict the previous label with certainty; cold start uses the default rate."""
    if not history:
        return default_rate, 1 if default_rate >= 0.5 else -1
    last = history[-1]
    return (1.0, 1) if last == 1 else (0.0, -1)


def predict_majority(history: Sequence[int], default_rate: float = 0.75) -> tuple[float, int]:
    """P(engaged) = fraction of past +1 labels; threshold at 0.5."""
    if not history:
        p = default_rate
    else:
        p = sum(1 for label in history if label == 1) / len(history)
    return p, 1 if p >= 0.5 else -1


# ---------------------------------------------------------------------------
# Gaussian team machinery


def _clamp_prob(p: float) -> float:
    return min(max(p, 1e-15), 1.0 - 1e-15)


def predict_greater(learner_team: Gaussian1D, resource_team: Gaussian1D,
                    team_size: int, beta_sq: float) -> float:
    """P(learner team performance exceeds resource team performance)."""
    if team_size < 1:
        raise ValueError(f"team_size must be >= 1, got {team_size}")
    c = math.sqrt(learner_team.variance + resource_team.variance
                  + 2.0 * team_size * beta_sq)
    return _clamp_prob(std_cdf((learner_team.mean - resource_team.mean) / c))


def predict_novelty(learner_team: Gaussian1D, resource_team: Gaussian1D,
                    team_size: int, beta_sq: float, margin: float) -> float:
    """P(|performance difference| <= margin), the engaged band of the novelty model."""
    if not margin > 0.0:
        raise ValueError(f"margin must be > 0, got {margin}")
    c = math.sqrt(learner_team.variance + resource_team.variance
                  + 2.0 * team_size * beta_sq)
    d = learner_team.mean - resource_team.mean
    return _clamp_prob(std_cdf((margin - d) / c) - std_cdf((-margin - d) / c))


def derive_margin(tracker: MarginTracker, team_size: int, beta: float) -> float:
    """Margin whose within-band mass at team noise sqrt(|K|)*beta equals the
    learner's smoothed engagement rate."""
    rate = tracker.smoothed_rate()
    return math.sqrt(team_size) * beta * std_quantile((rate + 1.0) / 2.0)


def _condition_difference(d_mean: float, c_sq: float, mode: str,
                          margin: float = 0.0) -> tuple[float, float]:
    """Moment-matched posterior of the total performance difference.

    Modes: "pos" (difference > 0), "neg" (difference < 0), "within"
    (|difference| <= margin), "outside" (one-sided beyond the margin, on the
    side of the current mean).
    """
    if mode == "pos":
        return _k.trunc_above_moments(d_mean, c_sq, 0.0)
    if mode == "neg":
        m, v = _k.trunc_above_moments(-d_mean, c_sq, 0.0)
        return -m, v
    if mode == "within":
        m, v, mass = _k.trunc_within_moments(d_mean, c_sq, margin)
        if mass < 1e-300:
            raise DegenerateEvidenceError(
                f"within-margin mass underflowed for difference N({d_mean}, {c_sq}) "
                f"and margin {margin}")
        return m, v
    if mode == "outside":
        if d_mean >= 0.0:
            m, v = _k.trunc_above_moments(d_mean - margin, c_sq, 0.0)
            return m + margin, v
        m, v = _k.trunc_above_moments(-d_mean - margin, c_sq, 0.0)
        return -(m + margin), v
    raise ValueError(f"unknown conditioning mode {mode!r}")


def _drifted(belief: Gaussian1D, steps: int, tau: float) -> Gaussian1D:
    if steps <= 0 or tau == 0.0:
        return belief
    return Gaussian1D(belief.mean, belief.variance + steps * tau * tau)


def _drifted_pi(pi: float, steps: int, tau: float) -> float:
    if steps <= 0 or tau == 0.0:
        return pi
    shift = min(steps * tau, abs(pi - 0.5))
    return pi - shift if pi > 0.5 else pi + shift


def apply_drift(state: LearnerState, elapsed_steps: int, cfg: ModelConfig) -> LearnerState:
    """Widen every belief in the state by ``elapsed_steps`` drift steps."""
    if elapsed_steps < 0:
        raise ValueError(f"elapsed_steps must be >= 0, got {elapsed_steps}")
    if elapsed_steps == 0 or cfg.tau == 0.0:
        return state
    for kc, belief in state.skills.items():
        state.skills[kc] = _drifted(belief, elapsed_steps, cfg.tau)
    for kc, pi in state.pis.items():
        state.pis[kc] = _drifted_pi(pi, elapsed_steps, cfg.tau)
    return state


def _gather_skills(state: LearnerState, kcs: Sequence[int], cfg: ModelConfig,
                   order: int) -> tuple[np.ndarray, np.ndarray]:
    """Member means/variances for the event's KCs with lazy drift applied.

    Does not mutate the state: drift becomes persistent only when the update
    writes the conditioned beliefs back.
    """
    means = np.empty(len(kcs))
    variances = np.empty(len(kcs))
    for i, kc in enumerate(kcs):
        belief = state.skills.get(kc)
        if belief is None:
            means[i], variances[i] = cfg.init_mean, cfg.init_var
        else:
            belief = _drifted(belief, order - state.last_order[kc], cfg.tau)
            means[i], variances[i] = belief.mean, belief.variance
    return means, variances


def _write_back(state: LearnerState, kcs: Sequence[int], means: np.ndarray,
                variances: np.ndarray, order: int) -> None:
    for i, kc in enumerate(kcs):
        state.skills[kc] = Gaussian1D(float(means[i]), float(variances[i]))
        state.last_order[kc] = order


def update_greater(state: LearnerState, event: EngagementEvent,
                   cfg: ModelConfig) -> LearnerState:
    """Density-filtering step for the greater-than models with observed depths.

    Label +1 conditions the team difference on > 0; label -1 conditions on
    < 0 when negative evidence is used, and is skipped entirely otherwise.
    """
    if event.label == -1 and not cfg.use_negative:
        return state
    kcs = [kc for kc, _ in event.topics]
    depth_sum = sum(cos for _, cos in event.topics)
    means, variances = _gather_skills(state, kcs, cfg, event.order)
    n = len(kcs)
    c_sq = float(variances.sum()) + 2.0 * n * cfg.beta_sq
    d_mean = float(means.sum()) - depth_sum
    try:
        post_mean, post_var = _condition_difference(
            d_mean, c_sq, "pos" if event.label == 1 else "neg")
    except DegenerateEvidenceError as exc:
        raise DegenerateEvidenceError(
            f"{exc} (learner {event.learner_id!r}, order {event.order})") from exc
    _k.team_apply(means, variances, 1.0, c_sq, d_mean, post_mean, post_var, VAR_FLOOR)
    _write_back(state, kcs, means, variances, event.order)
    return state


def update_novelty(state: LearnerState, event: EngagementEvent, cfg: ModelConfig,
                   tracker: MarginTracker) -> tuple[LearnerState, MarginTracker]:
    """Density-filtering step for the novelty model.

    Label +1 conditions the difference on |d| <= margin; label -1 conditions
    on the difference lying beyond the margin on the side of the current mean.
    The margin tracker is updated afterwards.
    """
    if event.label == -1 and not cfg.use_negative:
        return state, tracker
    kcs = [kc for kc, _ in event.topics]
    depth_sum = sum(cos for _, cos in event.topics)
    n = len(kcs)
    margin = derive_margin(tracker, n, cfg.beta)
    means, variances = _gather_skills(state, kcs, cfg, event.order)
    c_sq = float(variances.sum()) + 2.0 * n * cfg.beta_sq
    d_mean = float(means.sum()) - depth_sum
    try:
        post_mean, post_var = _condition_difference(
            d_mean, c_sq, "within" if event.label == 1 else "outside", margin)
    except DegenerateEvidenceError as exc:
        raise DegenerateEvidenceError(
            f"{exc} (learner {event.learner_id!r}, order {event.order})") from exc
    _k.team_apply(means, variances, 1.0, c_sq, d_mean, post_mean, post_var, VAR_FLOOR)
    _write_back(state, kcs, means, variances, event.order)
    tracker.observe(event.label)
    return state, tracker


# ---------------------------------------------------------------------------
# Knowledge tracing


def _gather_pis(state: LearnerState, kcs: Sequence[int], cfg: ModelConfig,
                order: int) -> np.ndarray:
    pis = np.empty(len(kcs))
    for i, kc in enumerate(kcs):
        pi = state.pis.get(kc)
        if pi is None:
            pis[i] = 0.5  # Bernoulli(0.5) prior
        else:
            pis[i] = _drifted_pi(pi, order - state.last_order[kc], cfg.tau)
    return pis


_KT_NO_DRIFT = None  # populated lazily; plain-op calls drift separately


def _kt_default_cfg() -> "ModelConfig":
    global _KT_NO_DRIFT
    if _KT_NO_DRIFT is None:
        _KT_NO_DRIFT = ModelConfig(kind="multiskill-kt", tau=0.0)
    return _KT_NO_DRIFT


def predict_kt(state: LearnerState, event: EngagementEvent, noise: float,
               cfg: ModelConfig | None = None) -> float:
    """Noisy-AND: engagement needs mastery of every event KC, flipped by noise."""
    kcs = [kc for kc, _ in event.topics]
    pis = _gather_pis(state, kcs, cfg if cfg is not None else _kt_default_cfg(),
                      event.order)
    return float(_k.noisy_and_prob(pis, noise))


def update_kt(state: LearnerState, event: EngagementEvent, noise: float,
              use_negative: bool, cfg: ModelConfig | None = None) -> LearnerState:
    """Exact Bayesian update of the event KCs' masteries under noisy-AND.

    Enumerates the 2^|K| joint mastery states and marginalizes per skill, so
    the event may carry at most ``KT_MAX_SKILLS`` topics.
    """
    if event.label == -1 and not use_negative:
        return state
    kcs = [kc for kc, _ in event.topics]
    if len(kcs) > KT_MAX_SKILLS:
        raise EnumerationBoundError(
            f"noisy-AND enumeration bounded at {KT_MAX_SKILLS} skills, "
            f"event has {len(kcs)}")
    pis = _gather_pis(state, kcs, cfg if cfg is not None else _kt_default_cfg(),
                      event.order)
    post = _k.noisy_and_posterior(pis, event.label == 1, noise)
    for i, kc in enumerate(kcs):
        state.pis[kc] = float(min(max(post[i], PI_FLOOR), 1.0 - PI_FLOOR))
        state.last_order[kc] = event.order
    return state


# ---------------------------------------------------------------------------
# Model classes behind the uniform interface


class _Model:
    """Base of the uniform online interface.

    ``predict_and_update`` must compute the prediction strictly before the
    label touches any state.
    """

    is_global = False

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg.validate()

    def predict_and_update(self, state: LearnerState,
                           event: EngagementEvent) -> tuple[float, int]:
        raise NotImplementedError

    def _observe_history(self, state: LearnerState, label: int) -> None:
        if label == -1 and not self.cfg.use_negative:
            return
        state.last_label = label
        state.n_labels += 1
        if label == 1:
            state.pos_labels += 1


class PersistenceModel(_Model):
    kind = "persistence"

    def predict_and_update(self, state, event):
        if state.n_labels == 0:
            p = self.cfg.default_rate
        else:
            p = 1.0 if state.last_label == 1 else 0.0
        yhat = 1 if p >= 0.5 else -1
        self._observe_history(state, event.label)
        return p, yhat


class MajorityModel(_Model):
    kind = "majority"

    def predict_and_update(self, state, event):
        if state.n_labels == 0:
            p = self.cfg.default_rate
        else:
            p = state.pos_labels / state.n_labels
        yhat = 1 if p >= 0.5 else -1
        self._observe_history(state, event.label)
        return p, yhat


class FixedDepthModel(_Model):
    """Learner team of per-KC skills against observed zero-variance depths."""

    kind = "truelearn-fixed-depth"

    def predict_and_update(self, state, event):
        kcs = [kc for kc, _ in event.topics]
        depth_sum = sum(cos for _, cos in event.topics)
        means, variances = _gather_skills(state, kcs, self.cfg, event.order)
        learner = Gaussian1D(float(means.sum()), float(variances.sum()))
        resource = Gaussian1D(depth_sum, 0.0)
        p = predict_greater(learner, resource, len(kcs), self.cfg.beta_sq)
        yhat = 1 if p >= 0.5 else -1
        update_greater(state, event, self.cfg)
        return p, yhat


class NoveltyModel(_Model):
    """Fixed observed depths plus the learner-dependent engagement margin."""

    kind = "truelearn-novelty"

    def predict_and_update(self, state, event):
        kcs = [kc for kc, _ in event.topics]
        depth_sum = sum(cos for _, cos in event.topics)
        margin = derive_margin(state.tracker, len(kcs), self.cfg.beta)
        means, variances = _gather_skills(state, kcs, self.cfg, event.order)
        learner = Gaussian1D(float(means.sum()), float(variances.sum()))
        resource = Gaussian1D(depth_sum, 0.0)
        p = predict_novelty(learner, resource, len(kcs), self.cfg.beta_sq, margin)
        yhat = 1 if p >= 0.5 else -1
        update_novelty(state, event, self.cfg, state.tracker)
        return p, yhat


class MultiSkillKtModel(_Model):
    kind = "multiskill-kt"

    def predict_and_update(self, state, event):
        p = predict_kt(state, event, self.cfg.kt_noise, self.cfg)
        yhat = 1 if p >= 0.5 else -1
        update_kt(state, event, self.cfg.kt_noise, self.cfg.use_negative, self.cfg)
        return p, yhat


class VanillaTrueSkillModel(_Model):
    """Two players: one whole-learner skill against one latent resource depth.

    The fragment flavour keys resources by (lecture, fragment); the video
    flavour learns a single depth per lecture and ignores topics entirely.
    Resource depths are shared across learners, so the model processes the
    whole event stream as one globally ordered sequence.
    """

    is_global = True

    def __init__(self, cfg: ModelConfig, video: bool = False):
        super().__init__(cfg)
        self.video = video
        self.kind = "vanilla-trueskill-video" if video else "vanilla-trueskill"
        self.resources: dict = {}

    def _resource_key(self, event):
        return event.lecture_id if self.video else (event.lecture_id, event.fragment_index)

    def predict_and_update(self, state, event):
        cfg = self.cfg
        key = self._resource_key(event)
        learner = state.skills.get(SELF_SKILL)
        if learner is None:
            learner = Gaussian1D(cfg.init_mean, cfg.init_var)
        else:
            learner = _drifted(learner, event.order - state.last_order[SELF_SKILL], cfg.tau)
        resource = self.resources.get(key)
        if resource is None:
            resource = Gaussian1D(cfg.init_mean, cfg.init_var)
        else:
            resource = _drifted(resource, 1, cfg.tau)  # one step per appearance

        p = predict_greater(learner, resource, 1, cfg.beta_sq)
        yhat = 1 if p >= 0.5 else -1

        if event.label == 1 or cfg.use_negative:
            c_sq = learner.variance + resource.variance + 2.0 * cfg.beta_sq
            d_mean = learner.mean - resource.mean
            post_mean, post_var = _condition_difference(
                d_mean, c_sq, "pos" if event.label == 1 else "neg")
            l_mean = np.array([learner.mean])
            l_var = np.array([learner.variance])
            r_mean = np.array([resource.mean])
            r_var = np.array([resource.variance])
            _k.team_apply(l_mean, l_var, 1.0, c_sq, d_mean, post_mean, post_var, VAR_FLOOR)
            _k.team_apply(r_mean, r_var, -1.0, c_sq, d_mean, post_mean, post_var, VAR_FLOOR)
            state.skills[SELF_SKILL] = Gaussian1D(float(l_mean[0]), float(l_var[0]))
            state.last_order[SELF_SKILL] = event.order
            self.resources[key] = Gaussian1D(float(r_mean[0]), float(r_var[0]))
        return p, yhat


class DynamicDepthModel(_Model):
    """Learner team against latent per-(lecture, fragment, kc) depth beliefs.

    Depth priors start at the observed cosine of their first appearance; the
    global depth table is shared across learners and updated together with
    the learner team.
    """

    kind = "truelearn-dynamic-depth"
    is_global = True

    def __init__(self, cfg: ModelConfig):
        super().__init__(cfg)
        self.resources: dict = {}

    def predict_and_update(self, state, event):
        cfg = self.cfg
        kcs = [kc for kc, _ in event.topics]
        n = len(kcs)
        keys = [(event.lecture_id, event.fragment_index, kc) for kc in kcs]

        l_means, l_vars = _gather_skills(state, kcs, cfg, event.order)
        r_means = np.empty(n)
        r_vars = np.empty(n)
        for i, (key, (_, cosine)) in enumerate(zip(keys, event.topics)):
            belief = self.resources.get(key)
            if belief is None:
                r_means[i], r_vars[i] = cosine, cfg.init_var
            else:
                belief = _drifted(belief, 1, cfg.tau)
                r_means[i], r_vars[i] = belief.mean, belief.variance

        learner = Gaussian1D(float(l_means.sum()), float(l_vars.sum()))
        resource = Gaussian1D(float(r_means.sum()), float(r_vars.sum()))
        p = predict_greater(learner, resource, n, cfg.beta_sq)
        yhat = 1 if p >= 0.5 else -1

        if event.label == 1 or cfg.use_negative:
            c_sq = learner.variance + resource.variance + 2.0 * n * cfg.beta_sq
            d_mean = learner.mean - resource.mean
            post_mean, post_var = _condition_difference(
                d_mean, c_sq, "pos" if event.label == 1 else "neg")
            _k.team_apply(l_means, l_vars, 1.0, c_sq, d_mean, post_mean, post_var, VAR_FLOOR)
            _k.team_apply(r_means, r_vars, -1.0, c_sq, d_mean, post_mean, post_var, VAR_FLOOR)
            _write_back(state, kcs, l_means, l_vars, event.order)
            for i, key in enumerate(keys):
                self.resources[key] = Gaussian1D(float(r_means[i]), float(r_vars[i]))
        return p, yhat


def build_model(cfg: ModelConfig) -> _Model:
    cfg = cfg.validate()
    if cfg.kind == "persistence":
        return PersistenceModel(cfg)
    if cfg.kind == "majority":
        return MajorityModel(cfg)
    if cfg.kind == "truelearn-fixed-depth":
        return FixedDepthModel(cfg)
    if cfg.kind == "truelearn-novelty":
        return NoveltyModel(cfg)
    if cfg.kind == "multiskill-kt":
        return MultiSkillKtModel(cfg)
    if cfg.kind == "vanilla-trueskill":
        return VanillaTrueSkillModel(cfg, video=False)
    if cfg.kind == "vanilla-trueskill-video":
        return VanillaTrueSkillModel(cfg, video=True)
    if cfg.kind == "truelearn-dynamic-depth":
        return DynamicDepthModel(cfg)
    raise ValueError(f"unknown model kind {cfg.kind!r}")


def predict_and_update(model: _Model, state: LearnerState,
                       event: EngagementEvent) -> tuple[float, int, LearnerState]:
    """Uniform dispatch: P(engaged), thresholded label, and the moved state."""
    p, yhat = model.predict_and_update(state, event)
    return p, yhat, state


# ---------------------------------------------------------------------------
# State snapshots


def _state_to_record(learner_id: str, state: LearnerState) -> dict:
    skills: list[dict] = []
    for kc in sorted(state.skills):
        belief = state.skills[kc]
        skills.append({"kc_id": kc, "mean": belief.mean, "variance": belief.variance})
    for kc in sorted(state.pis):
        skills.append({"kc_id": kc, "pi": state.pis[kc]})
    return {
        "learner_id": learner_id,
        "skills": skills,
        "tracker": {"engaged_count": state.tracker.engaged_count,
                    "total_count": state.tracker.total_count},
        "last_order": {str(kc): order for kc, order in sorted(state.last_order.items())},
        "history": {"last_label": state.last_label,
                    "pos_labels": state.pos_labels,
                    "n_labels": state.n_labels},
    }


def save_states(path: str | Path, states: dict[str, LearnerState]) -> None:
    """Write per-learner model states as versioned line-delimited JSON."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"schema_version": STATE_SCHEMA_VERSION}) + "\n")
        for learner_id in sorted(states):
            fh.write(json.dumps(_state_to_record(learner_id, states[learner_id]),
                                sort_keys=True) + "\n")


def load_states(path: str | Path) -> dict[str, LearnerState]:
    states: dict[str, LearnerState] = {}
    with open(path, encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("schema_version") != STATE_SCHEMA_VERSION:
            raise SchemaVersionError(
                f"unsupported state schema {header.get('schema_version')!r}")
        for line in fh:
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
                state = LearnerState()
                for entry in raw["skills"]:
                    if "pi" in entry:
                        state.pis[int(entry["kc_id"])] = float(entry["pi"])
                    else:
                        state.skills[int(entry["kc_id"])] = Gaussian1D(
                            float(entry["mean"]), float(entry["variance"]))
                state.tracker = MarginTracker(
                    engaged_count=int(raw["tracker"]["engaged_count"]),
                    total_count=int(raw["tracker"]["total_count"]))
                state.last_order = {int(k): int(v)
                                    for k, v in raw.get("last_order", {}).items()}
                history = raw.get("history", {})
                state.last_label = int(history.get("last_label", 0))
                state.pos_labels = int(history.get("pos_labels", 0))
                state.n_labels = int(history.get("n_labels", 0))
                states[raw["learner_id"]] = state
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"bad state line: {line[:120]!r} ({exc})") from exc
    return states
