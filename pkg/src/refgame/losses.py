"""Per-instance losses: cross-entropy, the policy-gradient surrogate with
learned baselines, baseline regression, and entropy bonuses.

All functions take a trace played with keep_vars=True and return tape scalars,
so one backward over `total + baseline` distributes gradients to every
parameter. Baseline values enter the advantage as plain floats (constants) and
baseline inputs are detached arrays, so policy gradients never flow into the
baseline nets and baseline regression never reaches the agents.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tape as T
from .errors import RefgameError
from .game import EpisodeTrace
from .params import ParamStore
from .tape import Var


class BaselineNet:
    """Feedforward reward predictor: one hidden rectified-linear layer, scalar out."""

    def __init__(self, input_dim: int, rng: np.random.Generator, hidden_dim: int = 500):
        store = ParamStore(rng)
        self.hidden_w = store.matrix("hidden.W", hidden_dim, input_dim)
        self.hidden_b = store.zeros("hidden.b", hidden_dim)
        self.out_w = store.matrix("out.w", 1, hidden_dim)
        self.out_b = store.zeros("out.b", 1)
        self.params = store
        self.input_dim = input_dim

    def forward(self, x: np.ndarray) -> Var:
        x = np.asarray(x, dtype=np.float64)
        hidden = T.relu(T.affine(x, self.hidden_w, self.hidden_b))
        return T.pick(T.affine(hidden, self.out_w, self.out_b), 0)


@dataclass
class BaselinePair:
    sender: BaselineNet    # input: (pooled sender view, message the sender saw)
    receiver: BaselineNet  # input: (sender message, detached previous memory)


def make_baselines(sender_view_dim: int, msg_dim: int, memory_dim: int,
                   rng: np.random.Generator, hidden_dim: int = 500) -> BaselinePair:
    return BaselinePair(
        sender=BaselineNet(sender_view_dim + msg_dim, rng, hidden_dim),
        receiver=BaselineNet(msg_dim + memory_dim, rng, hidden_dim),
    )


@dataclass
class LossBreakdown:
    classification: Var
    reinforce: Var
    baseline: Var
    stop_entropy: Var
    msg_entropy: Var
    total: Var  # classification + reinforce - (lambda_s*stop_entropy + lambda_m*msg_entropy)

    def numeric(self) -> dict[str, float]:
        return {
            "L_c": float(self.classification.value),
            "L_r": float(self.reinforce.value),
            "L_B": float(self.baseline.value),
            "H_stop": float(self.stop_entropy.value),
            "H_msg": float(self.msg_entropy.value),
            "total": float(self.total.value),
        }


def _require_vars(trace: EpisodeTrace) -> None:
    if trace.vars is None:
        raise RefgameError("trace was played without keep_vars; losses need tape vars")


def _pooled_view(view: np.ndarray) -> np.ndarray:
    view = np.asarray(view, dtype=np.float64)
    return view.mean(axis=0) if view.ndim == 2 else view


def classification_loss(trace: EpisodeTrace) -> Var:
    """Negative log-likelihood of the true candidate under the final belief."""
    _require_vars(trace)
    final_belief = trace.vars.steps[trace.length - 1].belief
    return T.scale(T.log_clamped(T.pick(final_belief, trace.instance.true_index)), -1.0)


def _baseline_inputs(states: EpisodeTrace, t: int) -> tuple[np.ndarray, np.ndarray]:
    """Constant input vectors for both baselines at 1-based step t."""
    sender_in = np.concatenate([_pooled_view(states.instance.sender_view),
                                states.received_bits_before(t)])
    receiver_in = np.concatenate([states.steps[t - 1].sender_bits,
                                  states.memory_before(t)])
    return sender_in, receiver_in


def reinforce_loss(trace: EpisodeTrace, baselines: BaselinePair,
                   state_trace: EpisodeTrace | None = None) -> Var:
    """Surrogate whose gradient is the score-function estimator.

    Per step: advantage-weighted log-probabilities of the taken actions,
    negated for minimization. Baseline outputs are constants here. The
    receiver message term is absent at the terminal step, and the stop term
    is dropped on a forced stop (that action was never chosen).

    Rewards, actions, and baseline inputs are episode data; when the trace is
    a replay, state_trace supplies the recorded values so they stay constant
    under parameter perturbation.
    """
    _require_vars(trace)
    states = state_trace if state_trace is not None else trace
    reward = float(states.reward)
    terms = []
    for t in range(1, states.length + 1):
        step = states.steps[t - 1]
        svars = trace.vars.steps[t - 1]
        sender_in, receiver_in = _baseline_inputs(states, t)
        adv_sender = reward - float(baselines.sender.forward(sender_in).value)
        adv_receiver = reward - float(baselines.receiver.forward(receiver_in).value)

        terms.append(T.scale(T.bernoulli_logprob(svars.sender_probs, step.sender_bits),
                             adv_sender))
        receiver_logprobs = []
        forced_final = states.forced_stop and t == states.length
        if not forced_final:
            receiver_logprobs.append(
                T.bernoulli_logprob(svars.stop_prob, np.asarray([step.stop_bit])))
        if step.receiver_bits is not None:
            receiver_logprobs.append(
                T.bernoulli_logprob(svars.receiver_probs, step.receiver_bits))
        if receiver_logprobs:
            terms.append(T.scale(T.add_n(receiver_logprobs), adv_receiver))
    if not terms:
        return Var(np.asarray(0.0))
    return T.scale(T.add_n(terms), -1.0)


def baseline_loss(trace: EpisodeTrace, baselines: BaselinePair,
                  state_trace: EpisodeTrace | None = None) -> Var:
    """Sum of squared reward-prediction errors of both baselines over all steps."""
    states = state_trace if state_trace is not None else trace
    reward = np.asarray(float(states.reward))
    terms = []
    for t in range(1, states.length + 1):
        sender_in, receiver_in = _baseline_inputs(states, t)
        for net, x in ((baselines.sender, sender_in), (baselines.receiver, receiver_in)):
            diff = T.sub(reward, net.forward(x))
            terms.append(T.mul(diff, diff))
    return T.add_n(terms)


def entropy_terms(trace: EpisodeTrace) -> tuple[Var, Var]:
    """(stop entropy summed over steps, message entropy summed over steps and bits)."""
    _require_vars(trace)
    stop_terms = []
    msg_terms = []
    for t in range(1, trace.length + 1):
        svars = trace.vars.steps[t - 1]
        stop_terms.append(T.bernoulli_entropy_sum(svars.stop_prob))
        msg_terms.append(T.bernoulli_entropy_sum(svars.sender_probs))
        if svars.receiver_probs is not None:
            msg_terms.append(T.bernoulli_entropy_sum(svars.receiver_probs))
    return T.add_n(stop_terms), T.add_n(msg_terms)


def episode_losses(trace: EpisodeTrace, baselines: BaselinePair,
                   lambda_stop: float, lambda_msg: float,
                   state_trace: EpisodeTrace | None = None) -> LossBreakdown:
    """Assemble the full per-instance objective."""
    l_c = classification_loss(trace)
    l_r = reinforce_loss(trace, baselines, state_trace)
    l_b = baseline_loss(trace, baselines, state_trace)
    h_stop, h_msg = entropy_terms(trace)
    bonus = T.add(T.scale(h_stop, lambda_stop), T.scale(h_msg, lambda_msg))
    total = T.sub(T.add(l_c, l_r), bonus)
    return LossBreakdown(l_c, l_r, l_b, h_stop, h_msg, total)
