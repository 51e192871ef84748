"""The two agents: a memory-less sender and a recurrent receiver.

The sender maps (its view of the object, the last received message) to a
factorized Bernoulli distribution over message bits. The receiver keeps a
gated-recurrent memory and exposes three heads per step: stop probability,
belief over candidate objects, and its own message distribution. Both agents
have an optional additive-attention variant for set-valued views.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tape as T
from .errors import DimensionError
from .params import ParamStore
from .tape import GruParams, Var


@dataclass
class SenderConfig:
    input_dim: int
    msg_dim: int
    embed_dim: int = 256
    hidden_dim: int = 256
    attention: bool = False
    att_hidden_dim: int = 256


@dataclass
class ReceiverConfig:
    view_dim: int
    msg_dim: int
    memory_dim: int = 64
    msg_hidden_dim: int = 64
    attention: bool = False
    att_hidden_dim: int = 64


class SenderAgent:
    """Feedforward policy over message bits; stateless across steps."""

    def __init__(self, cfg: SenderConfig, rng: np.random.Generator):
        self.cfg = cfg
        store = ParamStore(rng)
        self.img_embed_w = store.matrix("img_embed.W", cfg.embed_dim, cfg.input_dim)
        self.img_embed_b = store.zeros("img_embed.b", cfg.embed_dim)
        self.msg_embed_w = store.matrix("msg_embed.W", cfg.embed_dim, cfg.msg_dim)
        self.msg_embed_b = store.zeros("msg_embed.b", cfg.embed_dim)
        self.trunk_w = store.matrix("trunk.W", cfg.hidden_dim, 4 * cfg.embed_dim)
        self.trunk_b = store.zeros("trunk.b", cfg.hidden_dim)
        self.heads_w = store.matrix("heads.W", cfg.msg_dim, cfg.hidden_dim)
        self.heads_b = store.zeros("heads.b", cfg.msg_dim)
        if cfg.attention:
            self.att_hidden_w = store.matrix(
                "att_hidden.W", cfg.att_hidden_dim, cfg.input_dim + cfg.msg_dim)
            self.att_hidden_b = store.zeros("att_hidden.b", cfg.att_hidden_dim)
            self.att_score_w = store.matrix("att_score.w", 1, cfg.att_hidden_dim)
            self.att_score_b = store.zeros("att_score.b", 1)
        self.params = store

    def attend(self, view_set: np.ndarray, received_bits: np.ndarray) -> Var:
        """Softmax-weighted sum of the view vectors, scored against the message."""
        if len(view_set) == 0:
            raise DimensionError("sender attention over an empty view set")
        scores = []
        for row in view_set:
            hidden = T.tanh(T.affine(np.concatenate([row, received_bits]),
                                     self.att_hidden_w, self.att_hidden_b))
            scores.append(T.affine(hidden, self.att_score_w, self.att_score_b))
        weights = T.softmax(T.concat(scores))
        return T.matvec_t(np.asarray(view_set, dtype=np.float64), weights)

    def forward(self, view, received_bits: np.ndarray) -> Var:
        """Per-bit probabilities p(bit_j = 1) for the outgoing message."""
        view = np.asarray(view, dtype=np.float64)
        received_bits = np.asarray(received_bits, dtype=np.float64)
        if received_bits.shape != (self.cfg.msg_dim,):
            raise DimensionError(
                f"sender got message of shape {received_bits.shape}, expected ({self.cfg.msg_dim},)")
        if self.cfg.attention and view.ndim == 2:
            pooled = self.attend(view, received_bits)
        elif view.ndim == 1:
            pooled = view
        else:
            raise DimensionError(
                f"sender view has shape {view.shape}; sets require the attention variant")
        e_img = T.affine(pooled, self.img_embed_w, self.img_embed_b)
        e_msg = T.affine(received_bits, self.msg_embed_w, self.msg_embed_b)
        feats = T.concat([e_img, e_msg, T.sub(e_img, e_msg), T.mul(e_img, e_msg)])
        hidden = T.tanh(T.affine(feats, self.trunk_w, self.trunk_b))
        return T.sigmoid(T.affine(hidden, self.heads_w, self.heads_b))


class ReceiverAgent:
    """Recurrent policy with stop, prediction, and message heads."""

    def __init__(self, cfg: ReceiverConfig, rng: np.random.Generator):
        self.cfg = cfg
        store = ParamStore(rng)
        q, d = cfg.memory_dim, cfg.msg_dim
        self.gru = GruParams(
            store.matrix("gru.update.W", q, d), store.matrix("gru.update.U", q, q),
            store.zeros("gru.update.b", q),
            store.matrix("gru.reset.W", q, d), store.matrix("gru.reset.U", q, q),
            store.zeros("gru.reset.b", q),
            store.matrix("gru.cand.W", q, d), store.matrix("gru.cand.U", q, q),
            store.zeros("gru.cand.b", q),
        )
        self.stop_w = store.matrix("stop.w", 1, q)
        self.stop_b = store.zeros("stop.b", 1)
        self.embed_w = store.matrix("embed.W", q, cfg.view_dim)
        self.embed_b = store.zeros("embed.b", q)
        self.msg_from_memory = store.matrix("msg.from_memory", cfg.msg_hidden_dim, q)
        self.msg_from_context = store.matrix("msg.from_context", cfg.msg_hidden_dim, q)
        self.msg_bias = store.zeros("msg.bias", cfg.msg_hidden_dim)
        self.msg_out_w = store.matrix("msg.out.W", d, cfg.msg_hidden_dim)
        self.msg_out_b = store.zeros("msg.out.b", d)
        self.initial_memory = store.zeros("initial_memory", q)
        self.initial_message_logits = store.zeros("initial_message_logits", d)
        if cfg.attention:
            self.att_hidden_w = store.matrix(
                "att_hidden.W", cfg.att_hidden_dim, cfg.view_dim + q)
            self.att_hidden_b = store.zeros("att_hidden.b", cfg.att_hidden_dim)
            self.att_score_w = store.matrix("att_score.w", 1, cfg.att_hidden_dim)
            self.att_score_b = store.zeros("att_score.b", 1)
        self.params = store

    def initial_message_probs(self) -> Var:
        """Bit probabilities of the learned opening message."""
        return T.sigmoid(self.initial_message_logits)

    def attend(self, word_vectors: np.ndarray, memory) -> Var:
        """Memory-scored softmax pooling of one candidate's word vectors."""
        if len(word_vectors) == 0:
            raise DimensionError("receiver attention over an empty word set")
        scores = []
        for row in word_vectors:
            row = np.asarray(row, dtype=np.float64)
            hidden = T.relu(T.affine(T.concat([row, memory]),
                                     self.att_hidden_w, self.att_hidden_b))
            scores.append(T.affine(hidden, self.att_score_w, self.att_score_b))
        weights = T.softmax(T.concat(scores))
        return T.matvec_t(np.asarray(word_vectors, dtype=np.float64), weights)

    def embed_candidates(self, views, memory=None) -> Var:
        """Stack of candidate embeddings in memory space, one row per candidate.

        Pooled variant averages set-valued views; the attention variant pools
        them against the current memory (and therefore needs `memory`).
        """
        rows = []
        for view in views:
            view = np.asarray(view, dtype=np.float64)
            if self.cfg.attention and view.ndim == 2:
                if memory is None:
                    raise DimensionError("attention receiver needs the memory to embed views")
                pooled = self.attend(view, memory)
            elif view.ndim == 2:
                pooled = view.mean(axis=0)
            else:
                pooled = view
            rows.append(T.affine(pooled, self.embed_w, self.embed_b))
        return T.stack(rows)

    def predict(self, memory, embeddings: Var) -> Var:
        """Belief over candidates: softmax of embedding/memory dot products."""
        return T.softmax(T.matvec(embeddings, memory))

    def step(self, msg_bits: np.ndarray, memory, views, embeddings: Var | None = None):
        """One exchange step.

        Returns (stop_prob (1,), belief (n,), msg_probs (d,), new_memory (q,)).
        For the pooled variant, pass precomputed candidate `embeddings` to reuse
        them across steps; the attention variant recomputes them per step.
        """
        msg_bits = np.asarray(msg_bits, dtype=np.float64)
        if msg_bits.shape != (self.cfg.msg_dim,):
            raise DimensionError(
                f"receiver got message of shape {msg_bits.shape}, expected ({self.cfg.msg_dim},)")
        new_memory = T.gru_step(msg_bits, memory, self.gru)
        stop_prob = T.sigmoid(T.affine(new_memory, self.stop_w, self.stop_b))
        if self.cfg.attention or embeddings is None:
            embeddings = self.embed_candidates(views, new_memory)
        belief = self.predict(new_memory, embeddings)
        context = T.matvec_t(embeddings, belief)  # belief-weighted candidate embedding
        pre = T.tanh(T.add_n([T.matvec(self.msg_from_memory, new_memory),
                              T.matvec(self.msg_from_context, context),
                              self.msg_bias]))
        msg_probs = T.sigmoid(T.affine(pre, self.msg_out_w, self.msg_out_b))
        return stop_prob, belief, msg_probs, new_memory
