"""Evaluation metrics on synthetic domains.

Conditional: paired similarity/novelty against references, pairwise
diversity among valid samples, decoder validity. Unconditional:
uniqueness, training-set novelty, and a histogram-KL score. Every report
names its similarity function so these numbers are never mistaken for
chemistry-metric values measured elsewhere.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class MetricError(ValueError):
    pass


@dataclass
class MetricReport:
    metrics: dict            # name -> percentage in [0, 100]
    overall: float           # exact arithmetic mean of metrics.values()
    n_samples: int
    sim_fn: str = ""
    thresholds: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, v in self.metrics.items():
            if not (0.0 <= v <= 100.0):
                raise MetricError(f"{name} = {v} outside [0, 100]")

    def to_dict(self) -> dict:
        return {"metrics": dict(self.metrics), "overall": self.overall,
                "n_samples": self.n_samples, "sim_fn": self.sim_fn,
                "thresholds": dict(self.thresholds)}


def _finish(metrics: dict, n: int, sim_fn: str = "",
            thresholds: dict | None = None) -> MetricReport:
    overall = float(np.mean([float(v) for v in metrics.values()]))
    return MetricReport(metrics=metrics, overall=overall, n_samples=n,
                        sim_fn=sim_fn, thresholds=thresholds or {})


def cosine_sim(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine over nonnegative feature vectors; zero vectors score 0."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(a @ b / (na * nb), 0.0, 1.0))


def conditional_metrics(gen_feats, ref_feats, sim_fn=cosine_sim, *,
                        valid=None, sim_thresh: float = 0.5,
                        novel_thresh: float = 0.8,
                        sim_name: str = "cosine") -> MetricReport:
    """Paired scoring: sample i is compared to reference i.

    Similarity: fraction with f >= sim_thresh. Novelty: fraction with
    f < novel_thresh. Diversity: mean pairwise (1 - f) among valid
    samples, 0 when fewer than two are valid. Validity: fraction valid.
    """
    gen = [np.asarray(g) for g in gen_feats]
    ref = [np.asarray(r) for r in ref_feats]
    n = len(gen)
    if n == 0:
        raise MetricError("empty generation set")
    if len(ref) != n:
        raise MetricError(f"paired metrics need equal counts, {n} vs {len(ref)}")
    valid = np.ones(n, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    if valid.shape != (n,):
        raise MetricError("valid mask length mismatch")

    f = np.array([sim_fn(g, r) for g, r in zip(gen, ref)])
    similarity = float((f >= sim_thresh).mean() * 100.0)
    novelty = float((f < novel_thresh).mean() * 100.0)
    vidx = np.flatnonzero(valid)
    if len(vidx) < 2:
        diversity = 0.0
    else:
        dists = [1.0 - sim_fn(gen[i], gen[j])
                 for a, i in enumerate(vidx) for j in vidx[a + 1:]]
        diversity = float(np.mean(dists) * 100.0)
    validity = float(valid.mean() * 100.0)
    return _finish({"similarity": similarity, "novelty": novelty,
                    "diversity": diversity, "validity": validity},
                   n, sim_name,
                   {"sim": sim_thresh, "novel": novel_thresh})


# ---------------------------------------------------------------------------
# unconditional

def histogram_kl(gen_hist, train_hist, smoothing: float = 1e-6) -> float:
    """KL(gen || train) in nats over smoothed, renormalized bin masses."""
    p = np.asarray(gen_hist, dtype=np.float64) + smoothing
    q = np.asarray(train_hist, dtype=np.float64) + smoothing
    if p.shape != q.shape or p.ndim != 1:
        raise MetricError("histograms must be equal-length vectors")
    if np.any(np.asarray(gen_hist) < 0) or np.any(np.asarray(train_hist) < 0):
        raise MetricError("negative bin mass")
    p /= p.sum()
    q /= q.sum()
    return float(np.sum(p * np.log(p / q)))


def kl_score(gen_feats: np.ndarray, train_feats: np.ndarray, *,
             n_bins: int = 10, smoothing: float = 1e-6) -> float:
    """exp(-KL) * 100, KL averaged over feature columns with shared bins."""
    gen = np.atleast_2d(np.asarray(gen_feats, dtype=np.float64))
    train = np.atleast_2d(np.asarray(train_feats, dtype=np.float64))
    if gen.shape[1] != train.shape[1]:
        raise MetricError("feature width mismatch")
    kls = []
    for j in range(gen.shape[1]):
        lo = min(gen[:, j].min(), train[:, j].min())
        hi = max(gen[:, j].max(), train[:, j].max())
        if hi == lo:
            hi = lo + 1.0  # all mass in one bin on both sides: KL 0
        edges = np.linspace(lo, hi, n_bins + 1)
        hg, _ = np.histogram(gen[:, j], bins=edges)
        ht, _ = np.histogram(train[:, j], bins=edges)
        kls.append(histogram_kl(hg, ht, smoothing))
    return float(np.exp(-np.mean(kls)) * 100.0)


def unconditional_metrics(gen_keys, train_keys, gen_feats, train_feats, *,
                          n_bins: int = 10) -> MetricReport:
    """Keys are hashable decoded outputs; feats are scalar summary columns."""
    gen_keys = list(gen_keys)
    if not gen_keys or not list(train_keys):
        raise MetricError("empty sample or training set")
    n = len(gen_keys)
    uniqueness = len(set(gen_keys)) / n * 100.0
    train_set = set(train_keys)
    novelty = sum(k not in train_set for k in gen_keys) / n * 100.0
    score = kl_score(gen_feats, train_feats, n_bins=n_bins)
    return _finish({"uniqueness": uniqueness, "novelty": novelty,
                    "kl_score": score}, n)


# ---------------------------------------------------------------------------
# mixture coverage

def mode_coverage(samples: np.ndarray, mode_means: np.ndarray, radius: float,
                  min_count: int = 1) -> float:
    samples = np.asarray(samples, dtype=np.float64)
    means = np.asarray(mode_means, dtype=np.float64)
    if means.ndim != 2 or means.shape[0] == 0:
        raise MetricError("no modes")
    if radius <= 0:
        raise MetricError("radius must be positive")
    if samples.ndim != 2 or samples.shape[1] != means.shape[1]:
        raise MetricError(f"samples {samples.shape} vs modes {means.shape}")
    d = np.linalg.norm(samples[:, None, :] - means[None, :, :], axis=2)
    hits = (d <= radius).sum(axis=0)
    return float((hits >= min_count).mean())
