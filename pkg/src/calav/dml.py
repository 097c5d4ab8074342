"""Siamese metric-learning head.

Document embeddings are projected to linguistic embedding vectors (LEVs)
through a tanh affine map; the squared Euclidean distance between a pair of
LEVs passes through the kernel exp(-gamma * d ** alpha) to yield a
same-author probability, trained with a squared-hinge contrastive loss on
that probability.

gamma and alpha live in log space so they stay positive under gradient
updates. Their initial values approximate a cosine-shaped reference curve on
the distance interval [0, 4].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from . import autodiff as ad

TAU_S = 0.91
TAU_D = 0.09

# original hinge thresholds for the legacy distance-space loss
LEGACY_TAU_S = 1.0
LEGACY_TAU_D = 3.0

DISTANCE_FLOOR = 1e-12


@dataclass
class DmlParams:
    w: np.ndarray          # (D_lev, D_x)
    b: np.ndarray          # (D_lev,)
    log_gamma: np.ndarray  # scalar
    log_alpha: np.ndarray  # scalar


def init_dml_params(rng: np.random.Generator, d_x: int, d_lev: int) -> DmlParams:
    limit = np.sqrt(6.0 / (d_x + d_lev))
    log_gamma, log_alpha = init_kernel_params()
    return DmlParams(w=rng.uniform(-limit, limit, size=(d_lev, d_x)),
                     b=np.zeros(d_lev),
                     log_gamma=np.array(log_gamma),
                     log_alpha=np.array(log_alpha))


# graph builders (shared by the public ops and the trainer) -------------------

def lev_graph(x: ad.Tensor, w: ad.Tensor, b: ad.Tensor) -> ad.Tensor:
    return ad.tanh(ad.dot(x, ad.transpose(w)) + b)


def kernel_graph(y1: ad.Tensor, y2: ad.Tensor, log_gamma: ad.Tensor,
                 log_alpha: ad.Tensor) -> tuple[ad.Tensor, ad.Tensor]:
    diff = y1 - y2
    d = ad.sum_(diff * diff, axis=-1)
    gamma = ad.exp(log_gamma)
    alpha = ad.exp(log_alpha)
    p = ad.exp(-(gamma * ad.pow_floored(d, alpha, grad_floor=DISTANCE_FLOOR)))
    return d, p


def loss_graph(d: ad.Tensor, p: ad.Tensor, labels: np.ndarray,
               tau_s: float = TAU_S, tau_d: float = TAU_D,
               variant: str = "probabilistic") -> ad.Tensor:
    """Mean contrastive loss over a batch. The probabilistic variant hinges
    on the kernel probability; the legacy variant hinges on the raw distance
    with its original thresholds."""
    a = ad.constant(labels)
    one_minus_a = ad.constant(1.0 - labels)
    if variant == "probabilistic":
        pos = ad.square(ad.relu(tau_s - p))
        neg = ad.square(ad.relu(p - tau_d))
    elif variant == "legacy":
        pos = ad.square(ad.relu(d - LEGACY_TAU_S))
        neg = ad.square(ad.relu(LEGACY_TAU_D - d))
    else:
        raise ValueError(f"unknown loss variant: {variant!r}")
    return ad.mean(a * pos + one_minus_a * neg)


# public operations ------------------------------------------------------------

def project_lev(x: np.ndarray, params: DmlParams) -> np.ndarray:
    """Map a document embedding (or a batch of them) to its LEV."""
    return lev_graph(ad.constant(x), ad.constant(params.w),
                     ad.constant(params.b)).data


def kernel_posterior(y1: np.ndarray, y2: np.ndarray, params: DmlParams
                     ) -> tuple[float, float]:
    """Squared Euclidean distance and its kernelized same-author probability."""
    d, p = kernel_graph(ad.constant(y1), ad.constant(y2),
                        ad.constant(params.log_gamma),
                        ad.constant(params.log_alpha))
    return float(d.data), float(p.data)


def contrastive_loss(p: float, a: int, tau_s: float = TAU_S,
                     tau_d: float = TAU_D) -> float:
    """a * max(tau_s - p, 0)^2 + (1 - a) * max(p - tau_d, 0)^2."""
    return (a * max(tau_s - p, 0.0) ** 2
            + (1 - a) * max(p - tau_d, 0.0) ** 2)


def legacy_contrastive_loss(d: float, a: int, tau_s: float = LEGACY_TAU_S,
                            tau_d: float = LEGACY_TAU_D) -> float:
    """Distance-space hinge loss kept selectable for ablation parity."""
    return (a * max(d - tau_s, 0.0) ** 2
            + (1 - a) * max(tau_d - d, 0.0) ** 2)


def cosine_target_curve(d: np.ndarray) -> np.ndarray:
    """Probability-valued cosine reference on [0, 4]: rescales cos to [0, 1]
    so it can serve as a target for the kernel probability."""
    return 0.5 * (1.0 + np.cos(np.pi * np.asarray(d) / 4.0))


def init_kernel_params(target=None, grid: np.ndarray | None = None,
                       tol: float = 1e-10, max_rounds: int = 500
                       ) -> tuple[float, float]:
    """Least-squares fit of (gamma, alpha) so exp(-gamma * d**alpha) tracks
    the target curve on the grid, via coordinate descent: alternate exact 1-D
    minimizations in gamma and alpha until the objective stops moving."""
    if target is None:
        target = cosine_target_curve
    if grid is None:
        grid = np.linspace(0.0, 4.0, 41)
    want = target(grid)

    def objective(gamma: float, alpha: float) -> float:
        have = np.exp(-gamma * np.power(grid, alpha))
        return float(np.sum((have - want) ** 2))

    gamma, alpha = 1.0, 1.0
    prev = objective(gamma, alpha)
    for _ in range(max_rounds):
        gamma = minimize_scalar(lambda g: objective(g, alpha),
                                bounds=(1e-6, 50.0), method="bounded",
                                options={"xatol": 1e-12}).x
        alpha = minimize_scalar(lambda al: objective(gamma, al),
                                bounds=(0.05, 10.0), method="bounded",
                                options={"xatol": 1e-12}).x
        now = objective(gamma, alpha)
        if prev - now < tol:
            break
        prev = now
    return float(np.log(gamma)), float(np.log(alpha))


def dml_backward(x1: np.ndarray, x2: np.ndarray, labels: np.ndarray,
                 params: DmlParams, tau_s: float = TAU_S, tau_d: float = TAU_D,
                 variant: str = "probabilistic"):
    """Gradients of the mean batch loss w.r.t. the projection weights, the
    log kernel parameters, and the input embeddings.

    Returns (grads, (gx1, gx2)) where grads has keys w, b, log_gamma,
    log_alpha.
    """
    x1_t, x2_t = ad.leaf(x1), ad.leaf(x2)
    leaves = {"w": ad.leaf(params.w), "b": ad.leaf(params.b),
              "log_gamma": ad.leaf(params.log_gamma),
              "log_alpha": ad.leaf(params.log_alpha)}
    y1 = lev_graph(x1_t, leaves["w"], leaves["b"])
    y2 = lev_graph(x2_t, leaves["w"], leaves["b"])
    d, p = kernel_graph(y1, y2, leaves["log_gamma"], leaves["log_alpha"])
    loss = loss_graph(d, p, np.asarray(labels, dtype=np.float64),
                      tau_s=tau_s, tau_d=tau_d, variant=variant)
    loss.backward()

    def grad_of(t: ad.Tensor) -> np.ndarray:
        return t.grad if t.grad is not None else np.zeros_like(t.data)

    grads = {name: grad_of(t) for name, t in leaves.items()}
    return grads, (grad_of(x1_t), grad_of(x2_t))
