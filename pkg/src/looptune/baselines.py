"""Classical proposal strategies: uniform random search and a
tree-structured Parzen estimator, plus the score-pairs-only variant of the
proposal agent. All strategies emit configs valid for their space."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .creator import BackgroundInfo, Creator, Proposal
from .explog import ExperimentLog
from .llm import CompletionParams
from .space import Config, HyperparameterSpec, SearchSpace, sample_uniform

TPE_GAMMA = 0.25
TPE_CANDIDATES = 24
TPE_COLD_START = 5


def random_propose(space: SearchSpace, rng: np.random.Generator) -> Config:
    """Strategy-interface adapter over uniform sampling."""
    return sample_uniform(space, rng)


@dataclass
class TpeState:
    """Observations and knobs for one TPE proposal step."""

    observations: list[tuple[Config, float]]
    rng: np.random.Generator
    gamma: float = TPE_GAMMA
    n_candidates: int = TPE_CANDIDATES
    cold_start: int = TPE_COLD_START

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must be in (0, 1)")
        if self.n_candidates < 1:
            raise ValueError("n_candidates must be >= 1")


def _transform(spec: HyperparameterSpec, value) -> float:
    return math.log10(float(value)) if spec.log_scale else float(value)


def _back_transform(spec: HyperparameterSpec, x: float):
    value = 10.0 ** x if spec.log_scale else x
    value = min(max(value, spec.lower), spec.upper)
    if spec.kind == "integer":
        return int(min(max(round(value), spec.lower), spec.upper))
    return float(value)


def _bandwidth(values: np.ndarray, span: float) -> float:
    # Scott's rule for a 1-d Gaussian KDE, clipped to [span/(n+1), span].
    # The floor keeps early groups exploratory; without it the proposal
    # loop collapses onto the first decent cluster it finds.
    sigma = float(np.std(values))
    h = sigma * len(values) ** -0.2
    return float(min(max(h, span / (len(values) + 1), 1e-12), max(span, 1e-12)))


def _normal_cdf(z: float) -> float:
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


def _kde_logpdf(x: float, points: np.ndarray, h: float, lo: float, hi: float) -> float:
    """Mixture of in-bounds-renormalized Gaussian kernels plus one uniform
    prior component over [lo, hi].

    The renormalization stops the density ratio from rewarding candidates
    piled against the search bounds; the prior component keeps a floor of
    exploration mass everywhere, so the proposal loop cannot collapse onto
    a tight cluster it can never leave.
    """
    z = (x - points) / h
    kernels = np.exp(-0.5 * z * z) / (h * math.sqrt(2 * math.pi))
    masses = np.array([
        max(_normal_cdf((hi - p) / h) - _normal_cdf((lo - p) / h), 1e-12)
        for p in points
    ])
    total = float(np.sum(kernels / masses)) + 1.0 / (hi - lo)
    return math.log(max(total / (len(points) + 1), 1e-300))


def _categorical_logp(value, choices, group_values) -> float:
    count = sum(1 for v in group_values if v == value)
    return math.log((count + 1.0) / (len(group_values) + len(choices)))


def tpe_propose(space: SearchSpace, state: TpeState, direction: str) -> Config:
    """Propose by density ratio: split observations into good/bad at the
    gamma quantile (direction-aware), fit per-hyperparameter densities
    (Gaussian kernels in transformed space for numerics, Laplace-smoothed
    counts for choices), draw candidates from the good densities and return
    the one maximizing good over bad."""
    obs = state.observations
    if len(obs) < state.cold_start:
        return random_propose(space, state.rng)
    scores = [s for _, s in obs]
    if max(scores) == min(scores):
        return random_propose(space, state.rng)

    reverse = direction == "maximize"
    ranked = sorted(obs, key=lambda p: p[1], reverse=reverse)
    n_good = max(1, math.ceil(state.gamma * len(obs)))
    good = [c for c, _ in ranked[:n_good]]
    bad = [c for c, _ in ranked[n_good:]] or good

    numeric: dict[str, tuple[np.ndarray, float, np.ndarray, float, float, float]] = {}
    choice_groups: dict[str, tuple[list, list]] = {}
    for spec in space:
        if spec.is_numeric:
            lo_t, hi_t = _transform(spec, spec.lower), _transform(spec, spec.upper)
            span = hi_t - lo_t
            g = np.array([_transform(spec, c[spec.name]) for c in good])
            b = np.array([_transform(spec, c[spec.name]) for c in bad])
            numeric[spec.name] = (g, _bandwidth(g, span), b, _bandwidth(b, span), lo_t, hi_t)
        else:
            choice_groups[spec.name] = (
                [c[spec.name] for c in good],
                [c[spec.name] for c in bad],
            )

    best_config: Config | None = None
    best_ratio = -math.inf
    for _ in range(state.n_candidates):
        candidate: Config = {}
        ratio = 0.0
        for spec in space:
            if spec.is_numeric:
                g, hg, b, hb, lo_t, hi_t = numeric[spec.name]
                # Draw from the good mixture: one of its kernels, or the
                # uniform prior component with probability 1/(n_good + 1).
                pick = int(state.rng.integers(len(g) + 1))
                if pick == len(g):
                    x = float(state.rng.uniform(lo_t, hi_t))
                else:
                    x = float(min(max(g[pick] + state.rng.normal(0.0, hg), lo_t), hi_t))
                candidate[spec.name] = _back_transform(spec, x)
                x_eff = _transform(spec, candidate[spec.name])
                ratio += _kde_logpdf(x_eff, g, hg, lo_t, hi_t) \
                    - _kde_logpdf(x_eff, b, hb, lo_t, hi_t)
            else:
                g_vals, b_vals = choice_groups[spec.name]
                weights = np.array([
                    math.exp(_categorical_logp(c, spec.choices, g_vals)) for c in spec.choices
                ])
                weights /= weights.sum()
                pick = spec.choices[int(state.rng.choice(len(spec.choices), p=weights))]
                candidate[spec.name] = pick
                ratio += _categorical_logp(pick, spec.choices, g_vals) \
                    - _categorical_logp(pick, spec.choices, b_vals)
        if ratio > best_ratio:
            best_ratio = ratio
            best_config = candidate
    assert best_config is not None
    return best_config


def observations_from_log(log: ExperimentLog) -> list[tuple[Config, float]]:
    """Scored (config, score) pairs; failed trials contribute nothing."""
    return [
        (dict(e.config), e.result.final_score)
        for e in log.entries
        if e.result.final_score is not None
    ]


def opro_create(log: ExperimentLog, space: SearchSpace, background: BackgroundInfo,
                backend, params: CompletionParams, rng: np.random.Generator,
                max_steps: int = 15) -> Proposal:
    """Ablated proposal agent: identical to the full agent except its log
    tool returns only score-sorted (config, score) pairs."""
    creator = Creator(
        backend=backend, params=params, background=background,
        log_mode="opro", max_steps=max_steps,
    )
    return creator.create(log, space, rng)
