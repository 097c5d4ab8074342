"""Bayes factor scoring under a two-covariance Gaussian model.

LEVs are reduced to a scoring space by an affine map with a Swish (or tanh)
activation. In that space an observed vector decomposes as y = s + n with a
latent author style s ~ N(mu, B^-1) and noise n ~ N(0, W^-1); B and W are
between-author and within-author precision matrices.

Marginalizing s gives closed-form likelihoods for both hypotheses. For the
same-author hypothesis the pair covariance has the block form
[[P, Q], [Q, P]] with P = B^-1 + W^-1 and Q = B^-1; rotating into the scaled
sum u = (y1+y2)/sqrt(2) and difference v = (y1-y2)/sqrt(2) decouples it:

    log p(y1, y2 | same)      = log N(u; sqrt(2) mu, 2 B^-1 + W^-1)
                              + log N(v; 0, W^-1)
    log p(y1, y2 | different) = log N(y1; mu, B^-1 + W^-1)
                              + log N(y2; mu, B^-1 + W^-1)

The verification score is the log-likelihood ratio and the posterior its
sigmoid (equal priors by default). Precisions are parameterized by Cholesky
factors with log-stored diagonals, so they stay symmetric positive definite
under arbitrary gradient updates and log-determinants come straight from the
factor diagonals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import NumericalError  # noqa: F401  (re-exported: scoring raises it)

LOG_2PI = float(np.log(2.0 * np.pi))
PROB_FLOOR = 1e-12

ACTIVATIONS = ("swish", "tanh")


@dataclass
class BfsParams:
    w: np.ndarray          # (D_b, D_lev)
    b: np.ndarray          # (D_b,)
    activation: str        # "swish" or "tanh"
    mu: np.ndarray         # (D_b,)
    m_within: np.ndarray   # (D_b, D_b) raw factor; diag stored in log space
    m_between: np.ndarray  # (D_b, D_b)

    @property
    def dim(self) -> int:
        return self.mu.shape[0]


def init_bfs_params(rng: np.random.Generator, d_lev: int, d_b: int,
                    activation: str = "swish") -> BfsParams:
    if activation not in ACTIVATIONS:
        raise ValueError(f"activation must be one of {ACTIVATIONS}")
    limit = np.sqrt(6.0 / (d_lev + d_b))
    # zero raw factors give identity Cholesky factors, so W = B = I
    return BfsParams(w=rng.uniform(-limit, limit, size=(d_b, d_lev)),
                     b=np.zeros(d_b), activation=activation,
                     mu=np.zeros(d_b),
                     m_within=np.zeros((d_b, d_b)),
                     m_between=np.zeros((d_b, d_b)))


# graph builders ---------------------------------------------------------------

def cholesky_factor_graph(m: ad.Tensor) -> ad.Tensor:
    """Strictly lower triangle of `m` plus exp of its diagonal: a Cholesky
    factor whose diagonal is positive by construction."""
    d = m.shape[0]
    strict = np.tril(np.ones((d, d)), -1)
    eye = np.eye(d)
    return m * ad.constant(strict) + ad.exp(m) * ad.constant(eye)


def precision_graph(m: ad.Tensor) -> ad.Tensor:
    chol = cholesky_factor_graph(m)
    return ad.matmul2(chol, ad.transpose(chol))


def project_graph(y: ad.Tensor, w: ad.Tensor, b: ad.Tensor,
                  activation: str) -> ad.Tensor:
    z = ad.dot(y, ad.transpose(w)) + b
    if activation == "swish":
        return z * ad.sigmoid(z)
    if activation == "tanh":
        return ad.tanh(z)
    raise ValueError(f"activation must be one of {ACTIVATIONS}")


def _log_gauss_terms(delta: ad.Tensor, cov_inv: ad.Tensor,
                     logdet_cov: ad.Tensor, dim: int) -> ad.Tensor:
    """log N(delta; 0, cov) per row of `delta`, given the inverse and
    log-determinant of the covariance."""
    qf = ad.sum_(ad.dot(delta, cov_inv) * delta, axis=-1)
    return -0.5 * (dim * LOG_2PI + logdet_cov + qf)


def score_graph(y1: ad.Tensor, y2: ad.Tensor, mu: ad.Tensor,
                m_within: ad.Tensor, m_between: ad.Tensor,
                prior_h1: float = 0.5):
    """Log-likelihoods under both hypotheses and the posterior, for a batch
    of projected pairs with shape (B, D_b).

    Returns (ll_same, ll_diff, score, p_bfs).
    """
    dim = mu.shape[0]
    prec_w = precision_graph(m_within)
    prec_b = precision_graph(m_between)
    cov_w = ad.spd_inverse(prec_w)
    cov_b = ad.spd_inverse(prec_b)
    cov_marginal = cov_w + cov_b               # B^-1 + W^-1
    cov_sum = cov_w + 2.0 * cov_b              # 2 B^-1 + W^-1

    logdet_cov_w = -ad.logdet_spd(prec_w)      # logdet W^-1
    logdet_marginal = ad.logdet_spd(cov_marginal)
    logdet_sum = ad.logdet_spd(cov_sum)
    inv_marginal = ad.spd_inverse(cov_marginal)
    inv_sum = ad.spd_inverse(cov_sum)

    root2 = np.sqrt(2.0)
    u = (y1 + y2) * (1.0 / root2)
    v = (y1 - y2) * (1.0 / root2)

    ll_same = (_log_gauss_terms(u - root2 * mu, inv_sum, logdet_sum, dim)
               + _log_gauss_terms(v, prec_w, logdet_cov_w, dim))
    ll_diff = (_log_gauss_terms(y1 - mu, inv_marginal, logdet_marginal, dim)
               + _log_gauss_terms(y2 - mu, inv_marginal, logdet_marginal, dim))
    score = ll_same - ll_diff
    if prior_h1 != 0.5:
        if not 0.0 < prior_h1 < 1.0:
            raise ValueError("prior_h1 must lie in (0, 1)")
        score = score + float(np.log(prior_h1 / (1.0 - prior_h1)))
    return ll_same, ll_diff, score, ad.sigmoid(score)


def loss_graph(p_bfs: ad.Tensor, labels: np.ndarray) -> ad.Tensor:
    """Mean binary cross entropy, negated for minimization; probabilities are
    clamped at PROB_FLOOR inside the logs."""
    a = ad.constant(labels)
    pos = ad.log(ad.clip_min(p_bfs, PROB_FLOOR))
    neg = ad.log(ad.clip_min(1.0 - p_bfs, PROB_FLOOR))
    return -ad.mean(a * pos + (1.0 - a) * neg)


def _params_as_tensors(params: BfsParams, trainable: bool = False
                       ) -> dict[str, ad.Tensor]:
    make = ad.leaf if trainable else ad.constant
    return {name: make(getattr(params, name))
            for name in ("w", "b", "mu", "m_within", "m_between")}


def _rows(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    return y[None, :] if y.ndim == 1 else y


# public operations ------------------------------------------------------------

def project_bfs(y: np.ndarray, params: BfsParams) -> np.ndarray:
    """Reduce a LEV (or batch) to the scoring space."""
    return project_graph(ad.constant(y), ad.constant(params.w),
                         ad.constant(params.b), params.activation).data


def within_precision(params: BfsParams) -> np.ndarray:
    return precision_graph(ad.constant(params.m_within)).data


def between_precision(params: BfsParams) -> np.ndarray:
    return precision_graph(ad.constant(params.m_between)).data


def log_likelihood_pair(y1: np.ndarray, y2: np.ndarray, params: BfsParams,
                        hypothesis: str) -> float:
    """Closed-form log p(y1, y2 | hypothesis) for projected vectors;
    hypothesis is "same" or "different"."""
    t = _params_as_tensors(params)
    ll_same, ll_diff, _, _ = score_graph(ad.constant(_rows(y1)),
                                         ad.constant(_rows(y2)),
                                         t["mu"], t["m_within"], t["m_between"])
    if hypothesis == "same":
        return float(ll_same.data[0])
    if hypothesis == "different":
        return float(ll_diff.data[0])
    raise ValueError("hypothesis must be 'same' or 'different'")


def bfs_posterior(y1: np.ndarray, y2: np.ndarray, params: BfsParams,
                  prior_h1: float = 0.5) -> tuple[float, float]:
    """Log-likelihood-ratio score and sigmoid posterior for a projected pair."""
    t = _params_as_tensors(params)
    _, _, score, p = score_graph(ad.constant(_rows(y1)), ad.constant(_rows(y2)),
                                 t["mu"], t["m_within"], t["m_between"],
                                 prior_h1=prior_h1)
    return float(score.data[0]), float(p.data[0])


def score_pair(lev1: np.ndarray, lev2: np.ndarray, params: BfsParams,
               prior_h1: float = 0.5) -> tuple[float, float]:
    """Full stage: project both LEVs, then score. The projection is always
    applied before the Gaussian model."""
    return bfs_posterior(project_bfs(lev1, params), project_bfs(lev2, params),
                         params, prior_h1=prior_h1)


def bfs_loss(p_bfs: float, a: int) -> float:
    """Binary cross entropy on the same-author posterior."""
    p = min(max(p_bfs, PROB_FLOOR), 1.0 - PROB_FLOOR)
    return -(a * np.log(p) + (1 - a) * np.log(1.0 - p))


def gaussian_entropies(params: BfsParams) -> tuple[float, float]:
    """Differential entropies of the within- and between-author Gaussians,
    0.5 * log((2 pi e)^D det(cov)), via the Cholesky log-determinants."""
    dim = params.dim
    base = 0.5 * dim * (LOG_2PI + 1.0)
    h = []
    for m in (params.m_within, params.m_between):
        # logdet of the precision straight from the factor's log-diagonal
        logdet_prec = 2.0 * float(np.sum(np.diag(m)))
        h.append(base - 0.5 * logdet_prec)
    return h[0], h[1]


def bfs_backward(lev1: np.ndarray, lev2: np.ndarray, labels: np.ndarray,
                 params: BfsParams, prior_h1: float = 0.5
                 ) -> dict[str, np.ndarray]:
    """Gradients of the mean BCE loss w.r.t. all scoring parameters. The LEV
    inputs are constants: no gradient flows to upstream stages."""
    t = _params_as_tensors(params, trainable=True)
    y1 = project_graph(ad.constant(_rows(lev1)), t["w"], t["b"], params.activation)
    y2 = project_graph(ad.constant(_rows(lev2)), t["w"], t["b"], params.activation)
    _, _, _, p = score_graph(y1, y2, t["mu"], t["m_within"], t["m_between"],
                             prior_h1=prior_h1)
    loss = loss_graph(p, np.asarray(labels, dtype=np.float64))
    loss.backward()
    return {name: (tensor.grad if tensor.grad is not None
                   else np.zeros_like(tensor.data))
            for name, tensor in t.items()}
