"""Closed-form linear-Gaussian model used to verify the SNIS estimators.

Model: b ~ N(0, I_latent), B | b ~ N(Phi b, I_obs) with Phi the only
parameter. The marginal is N(0, I + Phi Phi^T), the posterior over b is
Gaussian, and the gradient of the log marginal with respect to Phi is
available in closed form, so the importance-sampling machinery can be
checked against exact answers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .model import LatentBatch, generative_grad, inference_grad, snis_normalize
from .tensor import ParameterStore, Tensor

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class LinearGaussianOracle:
    phi: np.ndarray  # obs_dim x latent_dim

    @property
    def obs_dim(self):
        return self.phi.shape[0]

    @property
    def latent_dim(self):
        return self.phi.shape[1]

    def marginal_cov(self) -> np.ndarray:
        return np.eye(self.obs_dim) + self.phi @ self.phi.T

    def log_marginal(self, obs: np.ndarray) -> float:
        cov = self.marginal_cov()
        sign, logdet = np.linalg.slogdet(cov)
        quad = obs @ np.linalg.solve(cov, obs)
        return float(-0.5 * (quad + logdet + self.obs_dim * _LOG_2PI))

    def grad_log_marginal(self, obs: np.ndarray) -> np.ndarray:
        """d log N(obs; 0, I + Phi Phi^T) / d Phi."""
        cov = self.marginal_cov()
        inv = np.linalg.inv(cov)
        v = inv @ obs
        return (np.outer(v, v) - inv) @ self.phi

    def posterior(self, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Exact Gaussian posterior over b given obs: (mean, covariance)."""
        prec = np.eye(self.latent_dim) + self.phi.T @ self.phi
        cov = np.linalg.inv(prec)
        mean = cov @ self.phi.T @ obs
        return mean, cov

    def log_joint(self, obs: np.ndarray, b: np.ndarray) -> np.ndarray:
        """log p(obs, b) per row of b."""
        b = np.atleast_2d(b)
        resid = obs[None, :] - b @ self.phi.T
        return (-0.5 * (resid ** 2).sum(axis=1)
                - 0.5 * (b ** 2).sum(axis=1)
                - 0.5 * (self.obs_dim + self.latent_dim) * _LOG_2PI)

    def log_joint_taped(self, phi_param: Tensor, obs: np.ndarray,
                        b: np.ndarray) -> Tensor:
        """Same quantity built from taped primitives with Phi as parameter;
        returns shape (K, 1) for the estimator machinery."""
        b = np.atleast_2d(b)
        mean = T.matmul(Tensor(b), T.transpose(phi_param))
        resid = Tensor(obs[None, :]) - mean
        quad = T.tsum(T.square(resid), axis=1, keepdims=True)
        const = (-0.5 * (b ** 2).sum(axis=1, keepdims=True)
                 - 0.5 * (self.obs_dim + self.latent_dim) * _LOG_2PI)
        return Tensor(const) - quad * Tensor(0.5)


def diag_gaussian_log_density(x: np.ndarray, mean: np.ndarray,
                              sigma: np.ndarray) -> np.ndarray:
    z = (x - mean) / sigma
    return (-0.5 * (z ** 2).sum(axis=1) - np.log(sigma).sum()
            - 0.5 * x.shape[1] * _LOG_2PI)


def snis_generative_estimate(oracle: LinearGaussianOracle, obs: np.ndarray,
                             proposal_mean: np.ndarray, proposal_sigma: np.ndarray,
                             K_sp: int, rng: np.random.Generator) -> np.ndarray:
    """SNIS estimate of grad_Phi log p(obs) through the real generative_grad
    path (taped log-joint, normalized constant weights)."""
    store = ParameterStore()
    phi_param = store.add("phi", oracle.phi)
    b = proposal_mean[None, :] + proposal_sigma[None, :] * \
        rng.standard_normal((K_sp, oracle.latent_dim))
    log_q = diag_gaussian_log_density(b, proposal_mean, proposal_sigma)
    log_joint = oracle.log_joint_taped(phi_param, obs, b)
    weights = snis_normalize(log_joint.data.ravel() - log_q)
    batch = LatentBatch(samples=b, log_q=Tensor(log_q.reshape(-1, 1)),
                        log_joint=log_joint, norm_weights=weights)
    store.zero_grad()
    generative_grad(batch, store)
    return phi_param.grad.copy()


def generative_consistency(oracle: LinearGaussianOracle, obs: np.ndarray,
                           K_values: list[int], n_seeds: int,
                           sigma_inflation: float = 1.25, seed0: int = 0
                           ) -> dict[int, float]:
    """Median (over seeds) relative error of the SNIS gradient estimate
    against the closed-form gradient, per sample count."""
    mean, cov = oracle.posterior(obs)
    sigma = np.sqrt(np.diag(cov)) * sigma_inflation
    exact = oracle.grad_log_marginal(obs)
    exact_norm = np.linalg.norm(exact)
    out = {}
    for K in K_values:
        errs = []
        for s in range(n_seeds):
            rng = np.random.default_rng(seed0 + 1000 * s + K)
            est = snis_generative_estimate(oracle, obs, mean, sigma, K, rng)
            errs.append(np.linalg.norm(est - exact) / exact_norm)
        out[K] = float(np.median(errs))
    return out


def inference_stationarity(oracle: LinearGaussianOracle, obs: np.ndarray,
                           n_batches: int, K_sp: int,
                           rng: np.random.Generator) -> tuple[float, float]:
    """Mean inference-gradient estimate with q fixed at the exact posterior.

    The posterior must be diagonal (use a Phi with orthogonal columns).
    Returns (norm of the mean estimate, norm of the standard-error vector);
    at the KL minimizer the mean is statistically zero.
    """
    mean, cov = oracle.posterior(obs)
    off = cov - np.diag(np.diag(cov))
    if np.abs(off).max() > 1e-12:
        raise ValueError("posterior is not diagonal; use orthogonal Phi columns")
    sigma = np.sqrt(np.diag(cov))
    dim = oracle.latent_dim
    store = ParameterStore()
    mu_p = store.add("mu", mean)
    # parameterize sigma via softplus-style raw to mirror the real head
    raw = np.log(np.expm1(sigma))
    raw_p = store.add("sigma_raw", raw)

    estimates = np.zeros((n_batches, 2 * dim))
    for i in range(n_batches):
        b = mean[None, :] + sigma[None, :] * rng.standard_normal((K_sp, dim))
        mu_t = T.reshape(mu_p, (1, dim))
        sigma_t = T.reshape(T.softplus(raw_p), (1, dim))
        log_q = T.gaussian_log_density(Tensor(b), mu_t, sigma_t)
        log_joint = oracle.log_joint(obs, b)
        weights = snis_normalize(log_joint - log_q.data.ravel())
        batch = LatentBatch(samples=b, log_q=log_q, norm_weights=weights)
        store.zero_grad()
        inference_grad(batch, store)
        # store gradients descend the loss; the estimator itself is -grad
        estimates[i] = -np.concatenate([mu_p.grad, raw_p.grad])
    mean_est = estimates.mean(axis=0)
    se = estimates.std(axis=0, ddof=1) / math.sqrt(n_batches)
    return float(np.linalg.norm(mean_est)), float(np.linalg.norm(se))


def default_oracle() -> tuple[LinearGaussianOracle, np.ndarray]:
    """Latent dim 2, observation dim 4, orthogonal Phi columns so the
    posterior is diagonal."""
    phi = np.array([
        [0.9, 0.0],
        [0.0, 0.8],
        [0.7, 0.0],
        [0.0, -0.6],
    ])
    obs = np.array([1.2, -0.8, 0.5, 1.5])
    return LinearGaussianOracle(phi), obs
