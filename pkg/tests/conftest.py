import numpy as np
import pytest

from onelatent import autograd as ag
from onelatent.model import ModelConfig, MicroTransformer
from onelatent.tokenizer import Tokenizer


def central_diff(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar f over every element of x."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def assert_grad_close(analytic: np.ndarray, numeric: np.ndarray, rtol: float = 1e-4):
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    rel = np.abs(analytic - numeric) / denom
    assert rel.max() < rtol, f"max rel grad error {rel.max():.3e}"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_tokenizer(words: str = "a b c d e f g h i j") -> Tokenizer:
    return Tokenizer.from_texts([words]).extend_with_latent_tokens()


def tiny_model(tok: Tokenizer, seed: int = 0, d: int = 16, layers: int = 2,
               heads: int = 2, max_seq_len: int = 48) -> MicroTransformer:
    cfg = ModelConfig(
        vocab_size=tok.vocab_size, hidden_dim=d, layers=layers, heads=heads,
        max_seq_len=max_seq_len, rng_seed=seed,
    )
    return MicroTransformer(cfg)
