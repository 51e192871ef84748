"""Joint training of sender, receiver, and baselines with RMSProp.

Each update plays a minibatch of episodes in train-sample mode, averages the
per-instance objective (classification + policy surrogate - entropy bonus,
plus baseline regression), runs one backward pass, and applies RMSProp.
Validation runs greedily after every epoch; the best-scoring parameters are
kept and training stops on the epoch cap, the update cap, or patience.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .agents import ReceiverAgent, ReceiverConfig, SenderAgent, SenderConfig
from .dataset import Dataset
from .errors import ConfigError, TrainingDivergedError
from .game import (GameConfig, TEST_GREEDY, TRAIN_SAMPLE, EpisodeTrace,
                   make_instance, play_episode, trace_to_record, write_records)
from .losses import BaselinePair, episode_losses, make_baselines
from .optim import rmsprop_update
from .tape import Tape
from . import tape as T

log = logging.getLogger(__name__)

BOTH_AGENTS = "both-agents-update"
RECEIVER_ONLY = "only-receiver-update"

LOG_COLUMNS = ["epoch", "train_loss", "L_c", "L_r", "L_B", "H_stop", "H_msg",
               "val_acc@K", "val_acc@1", "mean_length"]


@dataclass
class ModelConfig:
    sender_embed_dim: int = 256
    sender_hidden_dim: int = 256
    sender_attention: bool = False
    memory_dim: int = 64
    msg_hidden_dim: int = 64
    receiver_attention: bool = False
    baseline_hidden_dim: int = 500


@dataclass
class TrainConfig:
    msg_dim: int
    max_steps: int = 10
    lr: float = 1e-4
    batch_size: int = 64
    lambda_stop: float = 0.08
    lambda_msg: float = 0.01
    max_epochs: int = 500
    max_updates: int | None = None
    patience: int = 50
    seed: int = 0
    ablation: str = BOTH_AGENTS
    eval_k: int | None = None     # None: 10% of the candidate count, at least 1
    rho: float = 0.9
    eps: float = 1e-8

    def __post_init__(self):
        if self.lambda_stop < 0 or self.lambda_msg < 0:
            raise ConfigError("entropy coefficients must be nonnegative")
        if self.ablation not in (BOTH_AGENTS, RECEIVER_ONLY):
            raise ConfigError(f"unknown ablation {self.ablation!r}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


def accuracy_k_for(n_candidates: int, k: int | None) -> int:
    """10% of the candidate count unless pinned, never below 1."""
    if k is not None:
        return k
    return max(1, int(n_candidates * 0.1 + 0.5))


def build_model(cfg: TrainConfig, model_cfg: ModelConfig, dataset: Dataset,
                rng: np.random.Generator) -> tuple[SenderAgent, ReceiverAgent, BaselinePair]:
    sender = SenderAgent(SenderConfig(
        input_dim=dataset.sender_dim,
        msg_dim=cfg.msg_dim,
        embed_dim=model_cfg.sender_embed_dim,
        hidden_dim=model_cfg.sender_hidden_dim,
        attention=model_cfg.sender_attention,
        att_hidden_dim=model_cfg.sender_hidden_dim,
    ), rng)
    receiver = ReceiverAgent(ReceiverConfig(
        view_dim=dataset.receiver_dim,
        msg_dim=cfg.msg_dim,
        memory_dim=model_cfg.memory_dim,
        msg_hidden_dim=model_cfg.msg_hidden_dim,
        attention=model_cfg.receiver_attention,
        att_hidden_dim=model_cfg.msg_hidden_dim,
    ), rng)
    baselines = make_baselines(dataset.sender_dim, cfg.msg_dim, model_cfg.memory_dim,
                               rng, model_cfg.baseline_hidden_dim)
    return sender, receiver, baselines


def model_stores(sender, receiver, baselines) -> dict:
    return {
        "sender": sender.params,
        "receiver": receiver.params,
        "baseline_sender": baselines.sender.params,
        "baseline_receiver": baselines.receiver.params,
    }


def split_pairs(dataset: Dataset, split: str) -> list[tuple[int, int]]:
    """All (class_id, view_index) pairs of a split, in deterministic order."""
    split_def = dataset.splits[split]
    return [(cid, v) for cid in sorted(split_def.image_ranges)
            for v in range(*split_def.image_ranges[cid])]


@dataclass
class EvalResult:
    acc_at_1: float
    acc_at_k: float
    mean_length: float
    k: int
    n_candidates: int
    traces: list[EpisodeTrace] = field(default_factory=list)


def _rank_of_true(belief: np.ndarray, true_index: int) -> int:
    above = np.sum(belief > belief[true_index])
    ties_before = np.sum(belief[:true_index] == belief[true_index])
    return int(above + ties_before + 1)


def evaluate_split(sender, receiver, dataset: Dataset, split: str, cfg: TrainConfig,
                   keep_traces: bool = False, threads: int = 1) -> EvalResult:
    """Greedy episodes over every instance of the split."""
    pairs = split_pairs(dataset, split)
    n_candidates = len(dataset.splits[split].candidates)
    k = accuracy_k_for(n_candidates, cfg.eval_k)
    game_cfg = GameConfig(cfg.msg_dim, cfg.max_steps, TEST_GREEDY, k)

    def run(pair):
        cid, vidx = pair
        inst = make_instance(dataset, split, cid, vidx)
        return play_episode(sender, receiver, inst, game_cfg)

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            traces = list(pool.map(run, pairs))
    else:
        traces = [run(p) for p in pairs]

    hits1 = hitsk = 0
    lengths = []
    for t in traces:
        rank = _rank_of_true(t.steps[t.length - 1].belief, t.instance.true_index)
        hits1 += rank == 1
        hitsk += rank <= k
        lengths.append(t.length)
    n = len(traces)
    return EvalResult(
        acc_at_1=hits1 / n,
        acc_at_k=hitsk / n,
        mean_length=float(np.mean(lengths)),
        k=k,
        n_candidates=n_candidates,
        traces=traces if keep_traces else [],
    )


@dataclass
class TrainResult:
    log_rows: list[dict]
    best_val_acc: float
    best_val_acc1: float
    best_epoch: int
    updates: int
    best_state: dict                      # store name -> {tensor name -> values}
    sender: SenderAgent = None
    receiver: ReceiverAgent = None
    baselines: BaselinePair = None


def _episode_rng(seed: int, epoch: int, update: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, 2, epoch, update, index])


def train(cfg: TrainConfig, model_cfg: ModelConfig, dataset: Dataset,
          out_dir=None, threads: int = 1, model=None) -> TrainResult:
    """Run the full loop; optionally write log.csv/checkpoint/episode logs to out_dir.

    threads only parallelizes the greedy validation episodes; results are
    identical at any thread count. Passing model=(sender, receiver, baselines)
    skips the seeded construction (resumed or hand-built agents).
    """
    if model is not None:
        sender, receiver, baselines = model
    else:
        init_rng = np.random.default_rng([cfg.seed, 0])
        sender, receiver, baselines = build_model(cfg, model_cfg, dataset, init_rng)
    stores = model_stores(sender, receiver, baselines)
    trainable = [t for name, store in stores.items() for t in store
                 if not (cfg.ablation == RECEIVER_ONLY and name == "sender")]

    game_cfg = GameConfig(cfg.msg_dim, cfg.max_steps, TRAIN_SAMPLE)
    train_pairs = split_pairs(dataset, "train")
    if not train_pairs:
        raise ConfigError("train split is empty")

    rows: list[dict] = []
    best = TrainResult(rows, -1.0, -1.0, -1, 0, {})
    updates = 0
    epochs_since_best = 0
    stop = False
    for epoch in range(1, cfg.max_epochs + 1):
        shuffle_rng = np.random.default_rng([cfg.seed, 1, epoch])
        order = shuffle_rng.permutation(len(train_pairs))
        epoch_losses: list[dict[str, float]] = []
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_pairs[i] for i in order[start:start + cfg.batch_size]]
            breakdowns = _train_batch(
                sender, receiver, baselines, dataset, batch, game_cfg, cfg,
                epoch, updates, trainable, out_dir)
            epoch_losses.extend(breakdowns)
            updates += 1
            if cfg.max_updates is not None and updates >= cfg.max_updates:
                stop = True
                break

        val = evaluate_split(sender, receiver, dataset, "val", cfg, threads=threads)
        means = {key: float(np.mean([b[key] for b in epoch_losses]))
                 for key in ("total", "L_c", "L_r", "L_B", "H_stop", "H_msg")}
        rows.append({
            "epoch": epoch, "train_loss": means["total"], "L_c": means["L_c"],
            "L_r": means["L_r"], "L_B": means["L_B"], "H_stop": means["H_stop"],
            "H_msg": means["H_msg"], "val_acc@K": val.acc_at_k,
            "val_acc@1": val.acc_at_1, "mean_length": val.mean_length,
        })
        if val.acc_at_k > best.best_val_acc:
            best.best_val_acc = val.acc_at_k
            best.best_val_acc1 = val.acc_at_1
            best.best_epoch = epoch
            best.best_state = {name: store.snapshot() for name, store in stores.items()}
            epochs_since_best = 0
        else:
            epochs_since_best += 1
        if stop or epochs_since_best >= cfg.patience:
            break

    best.updates = updates
    best.sender, best.receiver, best.baselines = sender, receiver, baselines
    if not best.best_state:
        best.best_state = {name: store.snapshot() for name, store in stores.items()}

    if out_dir is not None:
        _write_outputs(out_dir, cfg, model_cfg, dataset, best, stores)
    return best


def _train_batch(sender, receiver, baselines, dataset, batch, game_cfg, cfg,
                 epoch, update, trainable, out_dir):
    breakdowns = []
    with Tape() as tape:
        per_episode = []
        for i, (cid, vidx) in enumerate(batch):
            inst = make_instance(dataset, "train", cid, vidx)
            rng = _episode_rng(cfg.seed, epoch, update, i)
            trace = play_episode(sender, receiver, inst, game_cfg, rng, keep_vars=True)
            losses = episode_losses(trace, baselines, cfg.lambda_stop, cfg.lambda_msg)
            per_episode.append(T.add(losses.total, losses.baseline))
            breakdowns.append(losses.numeric())
        objective = T.scale(T.add_n(per_episode), 1.0 / len(per_episode))
        if not np.isfinite(float(objective.value)):
            dump = _dump_diagnostics(out_dir, epoch, update, breakdowns)
            raise TrainingDivergedError(
                f"non-finite loss {float(objective.value)} at epoch {epoch}, "
                f"update {update}", dump)
        tape.backward(objective)
    rmsprop_update(trainable, cfg.lr, cfg.rho, cfg.eps)
    # in only-receiver-update mode the frozen sender still accumulated gradients
    sender.params.zero_grads()
    receiver.params.zero_grads()
    baselines.sender.params.zero_grads()
    baselines.receiver.params.zero_grads()
    return breakdowns


def _dump_diagnostics(out_dir, epoch, updates, breakdowns) -> str | None:
    if out_dir is None:
        return None
    path = Path(out_dir)
    path.mkdir(parents=True, exist_ok=True)
    dump = path / "diverged_batch.json"
    dump.write_text(json.dumps(
        {"epoch": epoch, "update": updates, "episodes": breakdowns}, indent=1))
    return str(dump)


def format_log_rows(rows: list[dict]) -> str:
    lines = [",".join(LOG_COLUMNS)]
    for row in rows:
        lines.append(",".join(repr(row[c]) if not isinstance(row[c], int) else str(row[c])
                              for c in LOG_COLUMNS))
    return "\n".join(lines) + "\n"


def _write_outputs(out_dir, cfg, model_cfg, dataset, result: TrainResult, stores) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "log.csv").write_text(format_log_rows(result.log_rows))

    # checkpoint carries the best-validation parameters
    live = {name: store.snapshot() for name, store in stores.items()}
    for name, store in stores.items():
        store.restore(result.best_state[name])
    ckpt.save_checkpoint(
        out / "checkpoint",
        stores,
        metadata={
            "train_config": asdict(cfg),
            "model_config": asdict(model_cfg),
            "sender_dim": dataset.sender_dim,
            "receiver_dim": dataset.receiver_dim,
            "best_epoch": result.best_epoch,
            "best_val_acc_k": result.best_val_acc,
            "best_val_acc_1": result.best_val_acc1,
            "updates": result.updates,
        },
        rng=np.random.default_rng([cfg.seed, 4, result.updates]),
    )
    val = evaluate_split(result.sender, result.receiver, dataset, "val", cfg,
                         keep_traces=True)
    write_records((trace_to_record(t) for t in val.traces), out / "val_episodes.jsonl")
    for name, store in stores.items():
        store.restore(live[name])


def load_model_from_checkpoint(path, dataset: Dataset):
    """Rebuild agents and baselines from a checkpoint directory."""
    tensors, metadata, rng = ckpt.load_checkpoint(path)
    cfg = TrainConfig(**metadata["train_config"])
    model_cfg = ModelConfig(**metadata["model_config"])
    if metadata["sender_dim"] != dataset.sender_dim or metadata["receiver_dim"] != dataset.receiver_dim:
        raise ConfigError(
            f"checkpoint dims (sender {metadata['sender_dim']}, receiver {metadata['receiver_dim']}) "
            f"!= dataset dims (sender {dataset.sender_dim}, receiver {dataset.receiver_dim})")
    sender, receiver, baselines = build_model(cfg, model_cfg, dataset,
                                              np.random.default_rng(0))
    stores = model_stores(sender, receiver, baselines)
    ckpt.restore_stores(stores, tensors)
    return sender, receiver, baselines, cfg, model_cfg, metadata
