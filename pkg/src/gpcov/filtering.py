"""Sample admission and stale-sample eviction for a robot's training set."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .gp import GpModel, GpPosterior, Sample, as_arrays, sample_order, sort_samples


@dataclass(frozen=True)
class FilterConfig:
    e_add: float = 0.04
    e_remove: float = 0.05
    z_score: float = 1.96
    mu_max_floor: float = 0.1
    enabled: bool = True

    def __post_init__(self) -> None:
        if not (0 < self.e_add <= self.e_remove < 1):
            raise ValueError(
                f"filter margins must satisfy 0 < e_add <= e_remove < 1 (no-flap constraint), "
                f"got e_add={self.e_add}, e_remove={self.e_remove}"
            )
        if not self.z_score > 0:
            raise ValueError(f"z_score must be positive, got {self.z_score}")
        if not self.mu_max_floor > 0:
            raise ValueError(f"mu_max_floor must be positive, got {self.mu_max_floor}")


@dataclass
class NormalizationState:
    """Running extremes of every raw value a robot has taken in."""

    running_min: float = math.inf
    running_max: float = -math.inf

    @property
    def seeded(self) -> bool:
        return self.running_min <= self.running_max

    def observe(self, values) -> None:
        v = np.atleast_1d(np.asarray(values, dtype=float))
        if v.size:
            self.running_min = min(self.running_min, float(v.min()))
            self.running_max = max(self.running_max, float(v.max()))

    def normalize(self, raw):
        if not self.seeded:
            raise ValueError("normalization state has no observations yet")
        span = self.running_max - self.running_min
        raw = np.asarray(raw, dtype=float)
        if span < 1e-12:
            out = np.full_like(raw, 0.5)
        else:
            out = np.clip((raw - self.running_min) / span, 0.0, 1.0)
        return float(out) if out.ndim == 0 else out

    def denormalize(self, z):
        z = np.asarray(z, dtype=float)
        span = max(self.running_max - self.running_min, 0.0)
        return self.running_min + z * span

    def copy(self) -> "NormalizationState":
        return NormalizationState(self.running_min, self.running_max)


def threshold(e: float, z_score: float, mu_max: float) -> float:
    return e / z_score * mu_max


def _std_at(post: GpPosterior, samples: Sequence[Sample]) -> np.ndarray:
    X, _, _ = as_arrays(samples)
    return post.std(X)


def filter_samples(
    candidates: Sequence[Sample],
    e: float,
    z_score: float,
    mu_max: float,
    base: Sequence[Sample],
    model: GpModel,
    now: float,
    e_keep: float | None = None,
) -> list[Sample]:
    """Candidates whose predictive std reaches ``(e / z_score) * mu_max``.

    Each accepted candidate joins the working dataset before the remaining
    candidates are tested, so redundant copies of the same information are
    admitted once. With ``e_keep`` set, a candidate is also refused when,
    once added, the std at its own location would still reach
    ``(e_keep / z_score) * mu_max``: eviction would drop it right away.
    The predictive std ignores sample values, so none are needed here.
    """
    thr = threshold(e, z_score, mu_max)
    thr_keep = None if e_keep is None else threshold(e_keep, z_score, mu_max)
    working = list(sort_samples(base))
    accepted: list[Sample] = []
    pending = list(candidates)
    post = model.posterior(working, now, values=np.zeros(len(working)))
    i = 0
    while i < len(pending):
        std = _std_at(post, pending[i:])
        hits = np.flatnonzero(std >= thr)
        if len(hits) == 0:
            break
        k = i + int(hits[0])
        s = pending[k]
        trial = list(working)
        bisect.insort(trial, s, key=sample_order)
        trial_post = model.posterior(trial, now, values=np.zeros(len(trial)))
        i = k + 1
        if thr_keep is not None and _std_at(trial_post, [s])[0] >= thr_keep:
            continue
        accepted.append(s)
        working, post = trial, trial_post
    return accepted


def stale_samples(
    dataset: Sequence[Sample],
    e: float,
    z_score: float,
    mu_max: float,
    model: GpModel,
    now: float,
) -> list[Sample]:
    """Samples whose own location has become too uncertain under decay.

    Each sample is tested against the full dataset, itself included.
    """
    if not dataset:
        return []
    post = model.posterior(dataset, now, values=np.zeros(len(dataset)))
    std = _std_at(post, dataset)
    thr = threshold(e, z_score, mu_max)
    return [s for s, v in zip(dataset, std) if v >= thr]


def _fresh_candidates(dataset: Sequence[Sample], pools: Iterable[Iterable[Sample]]) -> list[Sample]:
    seen = {s.key for s in dataset}
    out = []
    for pool in pools:
        for s in pool:
            if s.key not in seen:
                seen.add(s.key)
                out.append(s)
    return out


def robot_filter_tick(
    dataset: Sequence[Sample],
    local_sample: Sample | None,
    neighbor_datasets: Sequence[Sequence[Sample]],
    cfg: FilterConfig,
    model: GpModel,
    now: float,
    mu_max: float,
    normalizer: NormalizationState,
    retrain: bool = False,
    refresh_mu_max: Callable[[Sequence[Sample], GpModel], float] | None = None,
) -> tuple[tuple[Sample, ...], GpModel]:
    """One round of dataset maintenance for a single robot.

    Gathers the local sample and the neighbors' datasets, admits the
    informative ones, optionally refits hyperparameters, then drops samples
    that decay has made uninformative. Samples admitted in this call are
    exempt from eviction until the next call. ``normalizer`` is updated in place
    with every admitted value. With ``cfg.enabled`` false every new sample
    is kept and nothing is evicted. ``refresh_mu_max(dataset, model)``, if
    given, re-estimates the field maximum from the post-admission dataset
    for the eviction threshold.

    Returns the new time-ordered dataset and the (possibly refit) model.
    """
    mu_max = max(mu_max, cfg.mu_max_floor)
    pools = ([local_sample] if local_sample is not None else [], *neighbor_datasets)
    candidates = _fresh_candidates(dataset, pools)
    if cfg.enabled:
        admitted = filter_samples(candidates, cfg.e_add, cfg.z_score, mu_max, dataset, model, now, cfg.e_remove)
    else:
        admitted = candidates
    normalizer.observe([s.value for s in admitted])
    merged = sort_samples([*dataset, *admitted])

    if retrain and len(merged) >= 2:
        values = normalizer.normalize([s.value for s in merged])
        model = model.retrain(merged, now, values)

    if cfg.enabled:
        if refresh_mu_max is not None and merged:
            mu_max = max(refresh_mu_max(merged, model), cfg.mu_max_floor)
        fresh = {s.key for s in admitted}
        stale = {s.key for s in stale_samples(merged, cfg.e_remove, cfg.z_score, mu_max, model, now)} - fresh
        if stale:
            merged = tuple(s for s in merged if s.key not in stale)
    return merged, model
