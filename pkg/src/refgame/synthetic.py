"""Deterministic synthetic corpus: latent binary attributes mapped to both modes.

Each class is a latent attribute vector. Sender views are a fixed random
linear map of the latents plus per-view Gaussian noise; the receiver view is a
different fixed linear map of the same latents. Hard pairs share all but one
attribute, which makes them confusable through the noisy sender channel. The
per-class difficulty column follows the classifier-score convention used by
the analysis: higher means easier (1 - attribute overlap with the nearest
other class), so hard-pair members score low.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, SplitDef
from .errors import ConfigError

_MAX_TRIES = 10_000


@dataclass
class SyntheticSpec:
    n_classes: int = 8
    n_attributes: int = 6
    sender_dim: int = 24
    receiver_dim: int = 12
    views_per_class: int = 64
    noise: float = 0.25
    hard_pairs: int = 2
    seed: int = 0
    holdout_classes: int = 0   # trailing singleton classes become the held-out split
    val_views: int = 8
    test_views: int = 8
    min_separation: int = 2    # smallest latent Hamming distance between non-paired classes

    def __post_init__(self):
        if self.n_classes > 2 ** self.n_attributes:
            raise ConfigError(
                f"{self.n_classes} classes do not fit in {self.n_attributes} binary attributes")
        if self.n_classes < 2 or self.hard_pairs < 0:
            raise ConfigError("need >= 2 classes and a nonnegative hard-pair count")
        if 2 * self.hard_pairs > self.n_classes:
            raise ConfigError("more hard-pair members than classes")
        if self.views_per_class <= self.val_views + self.test_views:
            raise ConfigError("views_per_class leaves no training views")
        if self.holdout_classes >= self.n_classes - 2 * self.hard_pairs:
            raise ConfigError("holdout must leave at least the paired classes in domain")
        if not 1 <= self.min_separation <= self.n_attributes:
            raise ConfigError("min_separation must be in [1, n_attributes]")


def _sample_latents(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    """Latents with hard pairs at Hamming distance 1 and everyone else >= 2 apart.

    Bases that receive a twin keep one extra bit of distance from every other
    base so the flipped twin still clears min_separation; plain singletons only
    need min_separation from each other. Rejection sampling, deterministic
    given the rng.
    """
    n_base = spec.n_classes - spec.hard_pairs
    sep = spec.min_separation

    def min_dist(i: int, j: int) -> int:
        # both are pair bases, or one is: the twin costs one bit of slack
        return sep + 1 if (i < spec.hard_pairs or j < spec.hard_pairs) else sep

    for _ in range(200):
        bases: list[np.ndarray] = []
        ok = True
        for i in range(n_base):
            placed = False
            for _ in range(2000):
                cand = rng.integers(0, 2, size=spec.n_attributes)
                if all(int(np.sum(cand != b)) >= min_dist(i, j)
                       for j, b in enumerate(bases)):
                    bases.append(cand)
                    placed = True
                    break
            if not placed:
                ok = False
                break
        if not ok:
            continue
        # class order: pair members adjacent first, singletons last
        latents: list[np.ndarray] = []
        for i in range(spec.hard_pairs):
            latents.append(bases[i])
            twin = None
            for bit in rng.permutation(spec.n_attributes):
                cand = bases[i].copy()
                cand[bit] ^= 1
                others = [b for j, b in enumerate(bases) if j != i] + latents[:-1]
                if all(int(np.sum(cand != o)) >= sep for o in others):
                    twin = cand
                    break
            if twin is None:
                ok = False
                break
            latents.append(twin)
        if not ok:
            continue
        latents.extend(bases[spec.hard_pairs:])
        return np.stack(latents)
    raise ConfigError(
        f"could not place {spec.n_classes} classes in {spec.n_attributes} attributes "
        f"with the required separation")


def difficulty_scores(latents: np.ndarray) -> dict[int, float]:
    """1 - max attribute-overlap fraction with any other class (higher = easier)."""
    n, n_attr = latents.shape
    scores = {}
    for c in range(n):
        overlaps = [np.sum(latents[c] == latents[o]) / n_attr for o in range(n) if o != c]
        scores[c] = float(1.0 - max(overlaps))
    return scores


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Pure function from spec to dataset (seed included in the spec)."""
    rng = np.random.default_rng(spec.seed)
    latents = _sample_latents(spec, rng).astype(np.float64)
    sender_map = rng.normal(size=(spec.sender_dim, spec.n_attributes)) / np.sqrt(spec.n_attributes)
    receiver_map = rng.normal(size=(spec.receiver_dim, spec.n_attributes)) / np.sqrt(spec.n_attributes)

    classes = []
    sender_views: dict[int, np.ndarray] = {}
    receiver_views: dict[int, np.ndarray] = {}
    n_pair_members = 2 * spec.hard_pairs
    for cid in range(spec.n_classes):
        kind = "pair" if cid < n_pair_members else "solo"
        classes.append((cid, f"{kind}_{cid:02d}"))
        clean = sender_map @ latents[cid]
        noise = spec.noise * rng.normal(size=(spec.views_per_class, spec.sender_dim))
        sender_views[cid] = (clean[None, :] + noise).astype(np.float32)
        receiver_views[cid] = (receiver_map @ latents[cid]).astype(np.float32)

    in_domain = list(range(spec.n_classes - spec.holdout_classes))
    holdout = list(range(spec.n_classes - spec.holdout_classes, spec.n_classes))
    n_train = spec.views_per_class - spec.val_views - spec.test_views
    splits = {
        "train": SplitDef({c: (0, n_train) for c in in_domain}, in_domain),
        "val": SplitDef({c: (n_train, n_train + spec.val_views) for c in in_domain}, in_domain),
        "test_in": SplitDef(
            {c: (n_train + spec.val_views, spec.views_per_class) for c in in_domain}, in_domain),
    }
    if holdout:
        splits["test_out"] = SplitDef(
            {c: (0, spec.views_per_class) for c in holdout}, in_domain + holdout)

    ds = Dataset(classes, sender_views, receiver_views, splits,
                 difficulty_scores(latents))
    ds.validate()
    return ds
