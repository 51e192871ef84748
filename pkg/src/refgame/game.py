"""Game state machine: instance sampling, the exchange loop, scoring, trace IO.

One episode alternates sender message -> receiver update until the receiver's
sampled stop bit is 1 or the step cap is hit (forced stop: the prediction is
taken anyway and the flag is recorded). Message bits on the wire are always
the sampled/rounded binary vectors, never probabilities.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, DimensionError, RefgameError
from .tape import Var

TRAIN_SAMPLE = "train-sample"
TEST_GREEDY = "test-greedy"


@dataclass
class GameConfig:
    msg_dim: int
    max_steps: int = 10
    mode: str = TRAIN_SAMPLE
    k: int = 1

    def __post_init__(self):
        if self.msg_dim < 1:
            raise ConfigError(f"msg_dim must be >= 1, got {self.msg_dim}")
        if self.max_steps < 1:
            raise ConfigError(f"max_steps must be >= 1, got {self.max_steps}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.mode not in (TRAIN_SAMPLE, TEST_GREEDY):
            raise ConfigError(f"unknown mode {self.mode!r}")


@dataclass
class GameInstance:
    class_id: int
    sender_view: np.ndarray           # (dim,) or (set, dim)
    candidate_ids: list[int]          # ordered receiver candidate classes
    receiver_views: list              # one entry per candidate: (dim,) or (words, dim)
    true_index: int                   # position of class_id in candidate_ids
    split: str | None = None
    view_index: int | None = None


@dataclass
class StepRecord:
    sender_probs: np.ndarray
    sender_bits: np.ndarray
    stop_prob: float
    stop_bit: int
    belief: np.ndarray
    memory: np.ndarray
    receiver_probs: np.ndarray | None = None
    receiver_bits: np.ndarray | None = None


@dataclass
class StepVars:
    sender_probs: Var
    stop_prob: Var
    belief: Var
    receiver_probs: Var | None


@dataclass
class TraceVars:
    steps: list[StepVars] = field(default_factory=list)


@dataclass
class EpisodeTrace:
    instance: GameInstance
    mode: str
    initial_probs: np.ndarray
    initial_bits: np.ndarray
    initial_memory: np.ndarray
    steps: list[StepRecord]
    length: int
    forced_stop: bool
    prediction: int
    reward: int
    vars: TraceVars | None = None

    def received_bits_before(self, t: int) -> np.ndarray:
        """Message the sender saw at step t (1-based): the opener for t=1."""
        return self.initial_bits if t == 1 else self.steps[t - 2].receiver_bits

    def memory_before(self, t: int) -> np.ndarray:
        """Receiver memory entering step t (1-based)."""
        return self.initial_memory if t == 1 else self.steps[t - 2].memory


def sample_instance(dataset, split: str, rng: np.random.Generator) -> GameInstance:
    """Uniform object, uniform sender view from the split's index range."""
    split_def = dataset.splits.get(split)
    if split_def is None:
        raise DataError(f"dataset has no split {split!r}")
    class_ids = sorted(split_def.image_ranges)
    if not class_ids:
        raise DataError(f"split {split!r} is empty")
    class_id = class_ids[int(rng.integers(len(class_ids)))]
    lo, hi = split_def.image_ranges[class_id]
    view_index = int(rng.integers(lo, hi))
    return make_instance(dataset, split, class_id, view_index)


def make_instance(dataset, split: str, class_id: int, view_index: int) -> GameInstance:
    split_def = dataset.splits[split]
    candidates = list(split_def.candidates)
    views = [dataset.receiver_views[c] for c in candidates]
    return GameInstance(
        class_id=class_id,
        sender_view=dataset.sender_views[class_id][view_index],
        candidate_ids=candidates,
        receiver_views=views,
        true_index=candidates.index(class_id),
        split=split,
        view_index=view_index,
    )


def score(inst: GameInstance, prediction: int) -> int:
    """Ground-truth check: 1 iff the predicted candidate is the sender's object."""
    if not 0 <= prediction < len(inst.candidate_ids):
        raise RefgameError(
            f"prediction {prediction} out of range for {len(inst.candidate_ids)} candidates")
    return int(prediction == inst.true_index)


def _decide_bits(probs: np.ndarray, mode: str, rng, scripted) -> np.ndarray:
    if scripted is not None:
        return np.asarray(scripted, dtype=np.float64)
    if mode == TEST_GREEDY:
        return (probs >= 0.5).astype(np.float64)  # p = 0.5 decodes to 1
    return (rng.random(probs.shape) < probs).astype(np.float64)


def play_episode(sender, receiver, inst: GameInstance, cfg: GameConfig,
                 rng: np.random.Generator | None = None,
                 script: EpisodeTrace | None = None,
                 keep_vars: bool = False) -> EpisodeTrace:
    """Run one conversation and return its full trace.

    In train-sample mode all stochastic choices are drawn from rng; in
    test-greedy mode they are argmax. Passing a script replays that trace's
    recorded actions through the agents (used to rebuild losses and to verify
    forward determinism).
    """
    if sender.cfg.msg_dim != cfg.msg_dim or receiver.cfg.msg_dim != cfg.msg_dim:
        raise DimensionError(
            f"message dims disagree: sender {sender.cfg.msg_dim}, "
            f"receiver {receiver.cfg.msg_dim}, game {cfg.msg_dim}")
    if cfg.mode == TRAIN_SAMPLE and rng is None and script is None:
        raise ConfigError("train-sample mode needs an rng")

    vars_out = TraceVars() if keep_vars else None
    init_probs = receiver.initial_message_probs()
    initial_bits = _decide_bits(init_probs.value, cfg.mode, rng,
                                script.initial_bits if script else None)
    received = initial_bits
    memory = receiver.initial_memory
    initial_memory = receiver.initial_memory.values.copy()
    embeddings = None
    if not receiver.cfg.attention:
        embeddings = receiver.embed_candidates(inst.receiver_views)

    steps: list[StepRecord] = []
    length = 0
    forced = False
    final_belief = None
    for t in range(1, cfg.max_steps + 1):
        scripted_step = script.steps[t - 1] if script else None
        sender_probs = sender.forward(inst.sender_view, received)
        sender_bits = _decide_bits(sender_probs.value, cfg.mode, rng,
                                   scripted_step.sender_bits if scripted_step else None)

        stop_prob, belief, msg_probs, memory = receiver.step(
            sender_bits, memory, inst.receiver_views, embeddings)
        stop_bits = _decide_bits(stop_prob.value, cfg.mode, rng,
                                 np.asarray([scripted_step.stop_bit]) if scripted_step else None)
        stop_bit = int(stop_bits[0])

        record = StepRecord(
            sender_probs=sender_probs.value.copy(),
            sender_bits=sender_bits.copy(),
            stop_prob=float(stop_prob.value[0]),
            stop_bit=stop_bit,
            belief=belief.value.copy(),
            memory=memory.value.copy(),
        )
        step_vars = StepVars(sender_probs, stop_prob, belief, None) if keep_vars else None

        terminal = stop_bit == 1 or t == cfg.max_steps
        if not terminal:
            receiver_bits = _decide_bits(msg_probs.value, cfg.mode, rng,
                                         scripted_step.receiver_bits if scripted_step else None)
            record.receiver_probs = msg_probs.value.copy()
            record.receiver_bits = receiver_bits.copy()
            if step_vars is not None:
                step_vars.receiver_probs = msg_probs
            received = receiver_bits
        steps.append(record)
        if vars_out is not None:
            vars_out.steps.append(step_vars)
        if terminal:
            length = t
            forced = stop_bit == 0
            final_belief = belief.value
            break

    prediction = int(np.argmax(final_belief))  # argmax ties break toward the lowest index
    return EpisodeTrace(
        instance=inst,
        mode=cfg.mode,
        initial_probs=init_probs.value.copy(),
        initial_bits=initial_bits.copy(),
        initial_memory=initial_memory,
        steps=steps,
        length=length,
        forced_stop=forced,
        prediction=prediction,
        reward=score(inst, prediction),
        vars=vars_out,
    )


# ---------------------------------------------------------------------------
# JSON-lines episode records (the analysis module's input; see docs/formats.md)


def trace_to_record(trace: EpisodeTrace) -> dict:
    """Flatten a trace into a JSON-serializable dict, one line per episode."""
    steps = []
    for s in trace.steps:
        entry = {
            "sender_probs": s.sender_probs.tolist(),
            "sender_bits": [int(b) for b in s.sender_bits],
            "stop_prob": s.stop_prob,
            "stop_bit": s.stop_bit,
            "belief": s.belief.tolist(),
            "memory": s.memory.tolist(),
        }
        if s.receiver_probs is not None:
            entry["receiver_probs"] = s.receiver_probs.tolist()
            entry["receiver_bits"] = [int(b) for b in s.receiver_bits]
        steps.append(entry)
    return {
        "class_id": trace.instance.class_id,
        "split": trace.instance.split,
        "mode": trace.mode,
        "candidate_ids": list(trace.instance.candidate_ids),
        "true_index": trace.instance.true_index,
        "length": trace.length,
        "forced_stop": trace.forced_stop,
        "prediction": trace.prediction,
        "reward": trace.reward,
        "initial_probs": trace.initial_probs.tolist(),
        "initial_bits": [int(b) for b in trace.initial_bits],
        "steps": steps,
    }


def write_records(records, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def read_records(path) -> list[dict]:
    records = []
    with Path(path).open() as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
