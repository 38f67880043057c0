"""
Gaussian Process Linear Algebra

Squared-exponential kernel, jittered Cholesky factorisation, posterior,
negative log marginal likelihood and episodic predictive likelihood. All
functions work on float64 torch tensors and are differentiable with respect to
the inputs and kernel hyperparameters.

The support set never exceeds a handful of points online, so everything is
dense and exact.
"""

import logging
import math
from typing import Tuple

import torch

from app.exceptions import FactorizationError, NonFiniteInputError

logger = logging.getLogger(__name__)

JITTER_START = 1e-10
JITTER_MAX = 1e-4
JITTER_GROWTH = 10.0
LOG_2PI = math.log(2.0 * math.pi)


def se_kernel(z1: torch.Tensor, z2: torch.Tensor, log_signal_variance: torch.Tensor,
              log_lengthscales: torch.Tensor) -> torch.Tensor:
    """
    Squared-exponential kernel matrix k(z1_i, z2_j).

    Pairwise differences are formed explicitly so k(a, b) and k(b, a) are
    evaluated with identical operations; the Gram matrix of a set is exactly
    symmetric with diagonal exactly equal to the signal variance.

    Args:
        z1 (torch.Tensor): (n, F) inputs
        z2 (torch.Tensor): (m, F) inputs
        log_signal_variance (torch.Tensor): Scalar log sigma_f^2
        log_lengthscales (torch.Tensor): (1,) shared or (F,) per-dimension log lengthscales

    Returns:
        torch.Tensor: (n, m) kernel matrix
    """
    diff = (z1[:, None, :] - z2[None, :, :]) / torch.exp(log_lengthscales)
    return torch.exp(log_signal_variance) * torch.exp(-0.5 * (diff * diff).sum(-1))


def jittered_cholesky(matrix: torch.Tensor, scale: float) -> torch.Tensor:
    """
    Lower Cholesky factor of a symmetric matrix, adding diagonal jitter if needed.

    Jitter starts at JITTER_START * scale and grows by JITTER_GROWTH up to
    JITTER_MAX * scale.

    Raises:
        NonFiniteInputError: If the matrix contains NaN or inf
        FactorizationError: If the matrix stays indefinite at the maximum jitter
    """
    if not torch.isfinite(matrix).all():
        raise NonFiniteInputError("Gram matrix contains non-finite values")
    factor, info = torch.linalg.cholesky_ex(matrix)
    if int(info) == 0:
        return factor
    eye = torch.eye(matrix.shape[0], dtype=matrix.dtype)
    jitter = JITTER_START * scale
    while jitter <= JITTER_MAX * scale * (1.0 + 1e-12):
        factor, info = torch.linalg.cholesky_ex(matrix + jitter * eye)
        if int(info) == 0:
            logger.warning(f"Cholesky needed jitter {jitter:.1e}")
            return factor
        jitter *= JITTER_GROWTH
    raise FactorizationError(f"Gram matrix of size {matrix.shape[0]} is not positive definite "
                             f"after jitter {JITTER_MAX * scale:.1e}")


def posterior(z_support: torch.Tensor, residuals: torch.Tensor, z_query: torch.Tensor,
              log_signal_variance: torch.Tensor, log_lengthscales: torch.Tensor,
              log_noise_variance: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Posterior mean and variance of the residual process at query inputs.

        mu  = k(z, Z) [K(Z, Z) + s^2 I]^-1 rho
        s2  = k(z, z) - k(z, Z) [K(Z, Z) + s^2 I]^-1 k(Z, z)

    Args:
        z_support (torch.Tensor): (n, F) support features, n may be 0
        residuals (torch.Tensor): (n,) support residuals
        z_query (torch.Tensor): (q, F) query features
        log_signal_variance, log_lengthscales, log_noise_variance (torch.Tensor): Hyperparameters

    Returns:
        Tuple[torch.Tensor, torch.Tensor]: (q,) means and (q,) latent variances
    """
    signal_variance = torch.exp(log_signal_variance)
    prior_variance = signal_variance * torch.ones(z_query.shape[0], dtype=z_query.dtype)
    if z_support.shape[0] == 0:
        return torch.zeros(z_query.shape[0], dtype=z_query.dtype), prior_variance

    gram = se_kernel(z_support, z_support, log_signal_variance, log_lengthscales)
    gram = gram + torch.exp(log_noise_variance) * torch.eye(gram.shape[0], dtype=gram.dtype)
    factor = jittered_cholesky(gram, float(signal_variance.detach()))
    cross = se_kernel(z_query, z_support, log_signal_variance, log_lengthscales)
    alpha = torch.cholesky_solve(residuals[:, None], factor)
    mean = (cross @ alpha).squeeze(-1)
    v = torch.linalg.solve_triangular(factor, cross.T, upper=False)
    variance = prior_variance - (v * v).sum(0)
    return mean, torch.clamp(variance, min=0.0)


def negative_log_marginal_likelihood(z: torch.Tensor, residuals: torch.Tensor,
                                     log_signal_variance: torch.Tensor, log_lengthscales: torch.Tensor,
                                     log_noise_variance: torch.Tensor) -> torch.Tensor:
    """
    Standard GP negative log marginal likelihood of residuals.

        0.5 rho^T (K + s^2 I)^-1 rho + 0.5 log|K + s^2 I| + 0.5 n log 2pi
    """
    n = z.shape[0]
    gram = se_kernel(z, z, log_signal_variance, log_lengthscales)
    gram = gram + torch.exp(log_noise_variance) * torch.eye(n, dtype=gram.dtype)
    factor = jittered_cholesky(gram, float(torch.exp(log_signal_variance).detach()))
    alpha = torch.cholesky_solve(residuals[:, None], factor).squeeze(-1)
    return (0.5 * (residuals * alpha).sum()
            + torch.log(torch.diagonal(factor)).sum()
            + 0.5 * n * LOG_2PI)


def predictive_negative_log_likelihood(z_support: torch.Tensor, rho_support: torch.Tensor,
                                       z_query: torch.Tensor, rho_query: torch.Tensor,
                                       log_signal_variance: torch.Tensor, log_lengthscales: torch.Tensor,
                                       log_noise_variance: torch.Tensor) -> torch.Tensor:
    """
    Mean negative log likelihood of noisy query residuals given the support residuals.

    With an empty support this is the likelihood under the prior; it mirrors
    deployment, where the support holds at most k - 1 observations.
    """
    mean, variance = posterior(z_support, rho_support, z_query,
                               log_signal_variance, log_lengthscales, log_noise_variance)
    predictive = variance + torch.exp(log_noise_variance)
    terms = (rho_query - mean) ** 2 / predictive + torch.log(predictive) + LOG_2PI
    return 0.5 * terms.mean()
