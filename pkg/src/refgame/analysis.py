"""Measurement suite over episode logs: accuracy@K, length statistics,
difficulty correlation, entropy evolution, and multi-seed stability.

All functions are pure over the JSON-lines episode records; report writers
emit byte-stable CSVs (same inputs give identical bytes).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, RefgameError, UndefinedCorrelationError

PROB_FLOOR = 1e-12

# Full-scale reference values from the source corpus; not reproducible at desk
# scale, carried in report headers for context only.
PAPER_REFERENCE = {
    "difficulty_length_pearson_r": -0.81,
    "difficulty_length_pearson_p": 4e-15,
    "in_domain_acc_at_6_mean": 0.966,
    "in_domain_acc_at_6_variance": 1.98e-1,
    "in_domain_acc_at_1_mean": 0.860,
    "in_domain_acc_at_1_variance": 7.59e-1,
    "in_domain_loss_mean": 0.611,
    "in_domain_loss_variance": 2.72e-3,
    "out_of_domain_acc_at_7_best_d32": 0.45,
}


@dataclass
class EpisodeLog:
    class_id: int
    split: str | None
    length: int
    forced_stop: bool
    correct1: bool
    rank: int
    n_candidates: int
    pred_entropy: list[float]            # one per step
    stop_prob: list[float]               # one per step
    sender_msg_entropy: list[float]      # per step, summed over bits
    receiver_msg_entropy: list[float]    # one per non-terminal step


def _bernoulli_entropy(p: np.ndarray) -> np.ndarray:
    p = np.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR)
    return -p * np.log(p) - (1.0 - p) * np.log(1.0 - p)


def categorical_entropy(p) -> float:
    p = np.clip(np.asarray(p, dtype=np.float64), PROB_FLOOR, None)
    return float(-(p * np.log(p)).sum())


def rank_of_true(belief, true_index: int) -> int:
    """Rank of the true candidate under the belief; ties go to lower index."""
    belief = np.asarray(belief)
    above = int(np.sum(belief > belief[true_index]))
    ties_before = int(np.sum(belief[:true_index] == belief[true_index]))
    return above + ties_before + 1


def episode_log(record: dict) -> EpisodeLog:
    """Derive the per-episode analysis row from a raw trace record."""
    steps = record["steps"]
    final_belief = steps[record["length"] - 1]["belief"]
    rank = rank_of_true(final_belief, record["true_index"])
    return EpisodeLog(
        class_id=record["class_id"],
        split=record.get("split"),
        length=record["length"],
        forced_stop=record["forced_stop"],
        correct1=rank == 1,
        rank=rank,
        n_candidates=len(record["candidate_ids"]),
        pred_entropy=[categorical_entropy(s["belief"]) for s in steps],
        stop_prob=[s["stop_prob"] for s in steps],
        sender_msg_entropy=[float(_bernoulli_entropy(np.asarray(s["sender_probs"])).sum())
                            for s in steps],
        receiver_msg_entropy=[float(_bernoulli_entropy(np.asarray(s["receiver_probs"])).sum())
                              for s in steps if "receiver_probs" in s],
    )


def build_logs(records) -> list[EpisodeLog]:
    return [episode_log(r) for r in records]


def accuracy_at_k(logs: list[EpisodeLog], k: int) -> float:
    """Fraction of episodes whose true class ranks in the top k."""
    if k < 1:
        raise RefgameError(f"k must be >= 1, got {k}")
    if not logs:
        raise RefgameError("no episodes")
    n_max = min(l.n_candidates for l in logs)
    if k > n_max:
        raise RefgameError(f"k={k} exceeds the candidate count {n_max}")
    return sum(l.rank <= k for l in logs) / len(logs)


# ---------------------------------------------------------------------------
# Pearson correlation with a two-sided p-value via the regularized
# incomplete beta function (continued fraction, accurate to ~1e-8).

_CF_EPS = 1e-12
_CF_FPMIN = 1e-300
_CF_MAXIT = 300


def _betacf(a: float, b: float, x: float) -> float:
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_FPMIN:
        d = _CF_FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAXIT + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_FPMIN:
            d = _CF_FPMIN
        c = 1.0 + aa / c
        if abs(c) < _CF_FPMIN:
            c = _CF_FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_FPMIN:
            d = _CF_FPMIN
        c = 1.0 + aa / c
        if abs(c) < _CF_FPMIN:
            c = _CF_FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise RefgameError("incomplete beta continued fraction did not converge")


def incomplete_beta(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log(1.0 - x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def pearson(x, y) -> tuple[float, float]:
    """Product-moment r and the two-sided p-value from the t distribution."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.shape[0]
    if n < 3 or y.shape[0] != n:
        raise RefgameError(f"pearson needs >= 3 paired points, got {n} and {y.shape[0]}")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(np.dot(dx, dx)), float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("zero variance in one of the sequences")
    r = float(np.dot(dx, dy) / math.sqrt(sxx * syy))
    r = max(-1.0, min(1.0, r))
    df = n - 2
    if abs(r) == 1.0:
        return r, 0.0
    t2 = df * r * r / (1.0 - r * r)
    p = incomplete_beta(df / 2.0, 0.5, df / (df + t2))
    return r, p


# ---------------------------------------------------------------------------
# curves and reports


@dataclass
class EntropyCurves:
    # prediction entropy per step, one series per realized conversation length
    pred_by_length: dict[int, list[float]]
    pred_counts: dict[int, int]
    # message entropies per step averaged over episodes still running at that step
    sender_msg: list[float]
    sender_counts: list[int]
    receiver_msg: list[float]
    receiver_counts: list[int]


def _masked_means(series: list[list[float]]) -> tuple[list[float], list[int]]:
    if not series:
        return [], []
    t_max = max(len(s) for s in series)
    means, counts = [], []
    for t in range(t_max):
        vals = [s[t] for s in series if len(s) > t]
        means.append(float(np.mean(vals)))
        counts.append(len(vals))
    return means, counts


def entropy_curves(logs: list[EpisodeLog]) -> EntropyCurves:
    """Per-step mean entropy curves; step t averages only episodes with T >= t."""
    by_length: dict[int, list[list[float]]] = {}
    for l in logs:
        by_length.setdefault(l.length, []).append(l.pred_entropy)
    pred = {T: [float(np.mean([s[t] for s in group])) for t in range(T)]
            for T, group in by_length.items()}
    counts = {T: len(group) for T, group in by_length.items()}
    sender_means, sender_counts = _masked_means([l.sender_msg_entropy for l in logs])
    recv_means, recv_counts = _masked_means([l.receiver_msg_entropy for l in logs])
    return EntropyCurves(pred, counts, sender_means, sender_counts,
                         recv_means, recv_counts)


@dataclass
class LengthDifficultyReport:
    class_ids: list[int]
    mean_lengths: list[float]
    difficulty: list[float]
    r: float
    p: float


def length_difficulty_report(logs: list[EpisodeLog],
                             difficulty: dict[int, float]) -> LengthDifficultyReport:
    """Per-class mean conversation length against the external difficulty score."""
    by_class: dict[int, list[int]] = {}
    for l in logs:
        by_class.setdefault(l.class_id, []).append(l.length)
    missing = [c for c in by_class if c not in difficulty]
    if missing:
        raise DataError(f"difficulty scores missing for classes {sorted(missing)}")
    class_ids = sorted(by_class)
    mean_lengths = [float(np.mean(by_class[c])) for c in class_ids]
    scores = [float(difficulty[c]) for c in class_ids]
    r, p = pearson(scores, mean_lengths)
    return LengthDifficultyReport(class_ids, mean_lengths, scores, r, p)


def stability_report(runs: list[dict[str, float]]) -> dict[str, tuple[float, float]]:
    """Sample mean and variance (ddof=1) of every metric across seeds."""
    if len(runs) < 2:
        raise RefgameError("stability report needs at least 2 runs")
    keys = sorted(runs[0])
    out = {}
    for key in keys:
        vals = np.asarray([run[key] for run in runs], dtype=np.float64)
        out[key] = (float(vals.mean()), float(vals.var(ddof=1)))
    return out


# ---------------------------------------------------------------------------
# report files


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _write_csv(path: Path, columns: list[str], rows: list[list]) -> None:
    lines = [",".join(columns)]
    lines.extend(",".join(_fmt(v) if not isinstance(v, str) else v for v in row)
                 for row in rows)
    path.write_text("\n".join(lines) + "\n")


def default_k(n_candidates: int) -> int:
    return max(1, int(n_candidates * 0.1 + 0.5))


def write_report(records: list[dict], out_dir, difficulty: dict[int, float] | None = None,
                 class_names: dict[int, str] | None = None, k: int | None = None,
                 max_steps: int | None = None) -> dict:
    """Emit all analysis CSVs plus summary.json; returns the summary dict."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    logs = build_logs(records)
    if not logs:
        raise RefgameError("no episode records to analyze")

    splits = sorted({l.split or "all" for l in logs})
    summary: dict = {"paper_reference": PAPER_REFERENCE, "splits": {}}
    for split in splits:
        group = [l for l in logs if (l.split or "all") == split]
        kk = k if k is not None else default_k(min(l.n_candidates for l in group))
        summary["splits"][split] = {
            "episodes": len(group),
            "k": kk,
            "acc_at_1": accuracy_at_k(group, 1),
            "acc_at_k": accuracy_at_k(group, kk),
            "mean_length": float(np.mean([l.length for l in group])),
            "forced_stop_rate": float(np.mean([l.forced_stop for l in group])),
        }

    kk_all = k if k is not None else default_k(min(l.n_candidates for l in logs))

    # per-class accuracy / length (and difficulty when available)
    by_class: dict[int, list[EpisodeLog]] = {}
    for l in logs:
        by_class.setdefault(l.class_id, []).append(l)
    rows = []
    for cid in sorted(by_class):
        group = by_class[cid]
        rows.append([
            cid,
            class_names.get(cid, f"class_{cid}") if class_names else f"class_{cid}",
            len(group),
            float(np.mean([l.length for l in group])),
            float(difficulty[cid]) if difficulty and cid in difficulty else "",
            accuracy_at_k(group, 1),
            accuracy_at_k(group, kk_all),
        ])
    _write_csv(out / "per_class.csv",
               ["class_id", "name", "n_episodes", "mean_length", "difficulty",
                "acc_at_1", "acc_at_k"], rows)

    # accuracy per realized length, one bin per length value (empty bins kept)
    t_cap = max_steps if max_steps is not None else max(l.length for l in logs)
    rows = []
    for length in range(1, t_cap + 1):
        group = [l for l in logs if l.length == length]
        rows.append([
            length, len(group),
            accuracy_at_k(group, 1) if group else 0.0,
            accuracy_at_k(group, kk_all) if group else 0.0,
        ])
    _write_csv(out / "length_bins.csv", ["length", "count", "acc_at_1", "acc_at_k"], rows)

    curves = entropy_curves(logs)
    rows = []
    for T in sorted(curves.pred_by_length):
        for t, v in enumerate(curves.pred_by_length[T], start=1):
            rows.append([f"len={T}", t, v, curves.pred_counts[T]])
    _write_csv(out / "pred_entropy_curves.csv", ["series", "step", "value", "count"], rows)

    rows = []
    for t, (v, c) in enumerate(zip(curves.sender_msg, curves.sender_counts), start=1):
        rows.append(["sender", t, v, c])
    for t, (v, c) in enumerate(zip(curves.receiver_msg, curves.receiver_counts), start=1):
        rows.append(["receiver", t, v, c])
    _write_csv(out / "msg_entropy_curves.csv", ["series", "step", "value", "count"], rows)

    # raw per-step mean belief per candidate, grouped by the true class
    rows = []
    grouped: dict[int, list[dict]] = {}
    for rec in records:
        grouped.setdefault(rec["class_id"], []).append(rec)
    for cid in sorted(grouped):
        recs = grouped[cid]
        t_max_c = max(r["length"] for r in recs)
        candidates = recs[0]["candidate_ids"]
        for t in range(1, t_max_c + 1):
            active = [r for r in recs if r["length"] >= t]
            beliefs = np.asarray([r["steps"][t - 1]["belief"] for r in active])
            for j, cand in enumerate(candidates):
                rows.append([cid, t, cand, float(beliefs[:, j].mean()), len(active)])
    _write_csv(out / "belief_evolution.csv",
               ["true_class", "step", "candidate", "mean_prob", "count"], rows)

    if difficulty:
        try:
            ld = length_difficulty_report(logs, difficulty)
            summary["length_difficulty"] = {
                "pearson_r": ld.r, "pearson_p": ld.p,
                "note": "exact-length buckets; difficulty column is external",
            }
        except (UndefinedCorrelationError, RefgameError) as e:
            summary["length_difficulty"] = {"error": str(e)}

    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    return summary
