"""Uncertainty adaptation layer.

A pair representation built from the squared LEV difference feeds a 2x2
input-dependent confusion matrix C with C[j][i] = p(true hypothesis j |
predicted hypothesis i, pair): each column is a softmax over the true index,
so mixing the scoring posterior through C yields a proper adapted posterior.

The training loss is the negative log of the adapted ground-truth
probability plus beta * sum(C * log C): the second term is minus beta times
the total column entropy, so minimizing pushes C toward uniform and damps
over-confident adaptation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

PROB_FLOOR = 1e-12

# identity-biased confusion logits: the layer starts as a pass-through
INIT_DIAGONAL_BIAS = 2.0


@dataclass
class UalParams:
    w: np.ndarray       # (D_u, D_lev) pair-representation weights
    b: np.ndarray       # (D_u,)
    w_conf: np.ndarray  # (2, 2, D_u) confusion logit weights, indexed [j, i]
    b_conf: np.ndarray  # (2, 2) confusion logit biases, indexed [j, i]
    beta: float = 0.1   # entropy-regularization weight, >= 0


def init_ual_params(rng: np.random.Generator, d_lev: int, d_u: int,
                    beta: float = 0.1) -> UalParams:
    if beta < 0:
        raise ValueError("beta must be >= 0")
    limit = np.sqrt(6.0 / (d_lev + d_u))
    b_conf = np.zeros((2, 2))
    b_conf[0, 0] = b_conf[1, 1] = INIT_DIAGONAL_BIAS
    return UalParams(w=rng.uniform(-limit, limit, size=(d_u, d_lev)),
                     b=np.zeros(d_u),
                     w_conf=np.zeros((2, 2, d_u)),
                     b_conf=b_conf,
                     beta=float(beta))


# graph builders ---------------------------------------------------------------

def representation_graph(y1: ad.Tensor, y2: ad.Tensor, w: ad.Tensor,
                         b: ad.Tensor) -> ad.Tensor:
    diff = y1 - y2
    return ad.tanh(ad.dot(diff * diff, ad.transpose(w)) + b)


def confusion_graph(y_ual: ad.Tensor, w_conf: ad.Tensor,
                    b_conf: ad.Tensor) -> ad.Tensor:
    """Column-stochastic confusion matrices (B, 2, 2) for a batch (B, D_u)."""
    n = y_ual.shape[0]
    d_u = y_ual.shape[1]
    flat_w = ad.reshape(w_conf, (4, d_u))
    flat_b = ad.reshape(b_conf, (4,))
    logits = ad.reshape(ad.dot(y_ual, ad.transpose(flat_w)) + flat_b, (n, 2, 2))
    shift = np.max(logits.data, axis=1, keepdims=True)
    e = ad.exp(logits - ad.constant(shift))
    return e / ad.sum_(e, axis=1, keepdims=True)  # softmax over the true index j


def adapt_graph(confusion: ad.Tensor, p_bfs: np.ndarray) -> ad.Tensor:
    """Mix the (constant) scoring posterior through the confusion matrix:
    p_ual[j] = sum_i C[j, i] * p_bfs[i]. Returns (B, 2)."""
    p = np.stack([1.0 - p_bfs, p_bfs], axis=-1)  # (B, 2) over predicted i
    return ad.sum_(confusion * ad.constant(p[:, None, :]), axis=2)


def loss_graph(p_ual: ad.Tensor, confusion: ad.Tensor, labels: np.ndarray,
               beta: float) -> ad.Tensor:
    """Mean adapted negative log-likelihood plus the entropy penalty."""
    onehot = np.stack([1.0 - labels, labels], axis=-1)
    p_true = ad.sum_(p_ual * ad.constant(onehot), axis=1)
    nll = -ad.log(ad.clip_min(p_true, PROB_FLOOR))
    c_safe = ad.clip_min(confusion, PROB_FLOOR)
    reg = ad.sum_(confusion * ad.log(c_safe), axis=1)
    reg = ad.sum_(reg, axis=1)
    return ad.mean(nll + beta * reg)


def _params_as_tensors(params: UalParams, trainable: bool = False
                       ) -> dict[str, ad.Tensor]:
    make = ad.leaf if trainable else ad.constant
    return {name: make(getattr(params, name))
            for name in ("w", "b", "w_conf", "b_conf")}


def _rows(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    return y[None, :] if y.ndim == 1 else y


# public operations ------------------------------------------------------------

def pair_representation(y1: np.ndarray, y2: np.ndarray,
                        params: UalParams) -> np.ndarray:
    """tanh affine map of the elementwise-squared LEV difference."""
    out = representation_graph(ad.constant(_rows(y1)), ad.constant(_rows(y2)),
                               ad.constant(params.w), ad.constant(params.b))
    return out.data[0] if np.asarray(y1).ndim == 1 else out.data


def confusion_matrix(y_ual: np.ndarray, params: UalParams) -> np.ndarray:
    """2x2 column-stochastic confusion matrix for one pair representation."""
    out = confusion_graph(ad.constant(_rows(y_ual)), ad.constant(params.w_conf),
                          ad.constant(params.b_conf))
    return out.data[0]


def adapt_posterior(confusion: np.ndarray, p_bfs: float) -> np.ndarray:
    """Adapted posterior distribution (p_ual(H0), p_ual(H1))."""
    out = adapt_graph(ad.constant(confusion[None]), np.asarray([p_bfs]))
    return out.data[0]


def ual_loss(p_ual: np.ndarray, confusion: np.ndarray, a: int,
             beta: float) -> float:
    """-log p_ual(H_a) + beta * sum(C * log C) for a single pair."""
    p_true = max(float(p_ual[a]), PROB_FLOOR)
    c = np.maximum(confusion, PROB_FLOOR)
    return -np.log(p_true) + beta * float(np.sum(confusion * np.log(c)))


def ual_pipeline(y1: np.ndarray, y2: np.ndarray, p_bfs: float,
                 params: UalParams) -> tuple[np.ndarray, np.ndarray]:
    """Representation -> confusion -> adapted posterior for one pair."""
    rep = pair_representation(y1, y2, params)
    confusion = confusion_matrix(rep, params)
    return confusion, adapt_posterior(confusion, p_bfs)


def ual_backward(lev1: np.ndarray, lev2: np.ndarray, p_bfs: np.ndarray,
                 labels: np.ndarray, params: UalParams
                 ) -> dict[str, np.ndarray]:
    """Gradients of the mean adaptation loss w.r.t. the layer parameters.
    LEVs and scoring posteriors enter as constants: nothing flows upstream."""
    t = _params_as_tensors(params, trainable=True)
    rep = representation_graph(ad.constant(_rows(lev1)), ad.constant(_rows(lev2)),
                               t["w"], t["b"])
    confusion = confusion_graph(rep, t["w_conf"], t["b_conf"])
    p_ual = adapt_graph(confusion, np.asarray(p_bfs, dtype=np.float64))
    loss = loss_graph(p_ual, confusion, np.asarray(labels, dtype=np.float64),
                      params.beta)
    loss.backward()
    return {name: (tensor.grad if tensor.grad is not None
                   else np.zeros_like(tensor.data))
            for name, tensor in t.items()}
