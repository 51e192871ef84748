import numpy as np
import pytest

from refgame.agents import ReceiverAgent, ReceiverConfig, SenderAgent, SenderConfig
from refgame.losses import make_baselines
from refgame.synthetic import SyntheticSpec, generate_synthetic


def fd_gradient(loss_fn, arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function w.r.t. an array, in place."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.shape[0]):
        orig = flat[i]
        flat[i] = orig + h
        up = loss_fn()
        flat[i] = orig - h
        down = loss_fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float((np.abs(a - b) / denom).max())


def small_agents(msg_dim=3, memory_dim=4, sender_dim=6, receiver_dim=5, seed=0,
                 sender_attention=False, receiver_attention=False):
    rng = np.random.default_rng(seed)
    sender = SenderAgent(SenderConfig(
        input_dim=sender_dim, msg_dim=msg_dim, embed_dim=7, hidden_dim=8,
        attention=sender_attention, att_hidden_dim=6), rng)
    receiver = ReceiverAgent(ReceiverConfig(
        view_dim=receiver_dim, msg_dim=msg_dim, memory_dim=memory_dim,
        msg_hidden_dim=memory_dim, attention=receiver_attention,
        att_hidden_dim=5), rng)
    baselines = make_baselines(sender_dim, msg_dim, memory_dim, rng, hidden_dim=9)
    return sender, receiver, baselines


@pytest.fixture(scope="session")
def tiny_dataset():
    spec = SyntheticSpec(n_classes=4, n_attributes=4, sender_dim=6, receiver_dim=5,
                         views_per_class=8, noise=0.1, hard_pairs=1, seed=11,
                         val_views=2, test_views=2)
    return generate_synthetic(spec)
