"""Process-noise models and their weighted moments.

A noise model produces, per rollout, ``xi_t = d + mean + e_t`` where ``e_t`` is
an i.i.d. zero-mean innovation (Gaussian or resampled from an empirical bank)
and ``d`` is an optional step-load offset drawn once per rollout and held for
its whole length.  The moments used by the risk measure describe the
per-step innovation; the offset only enters through its second moment.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

MIN_BANK_SAMPLES = 10_000


@dataclass(frozen=True)
class NoiseMoments:
    mean: np.ndarray
    W: np.ndarray
    M3: np.ndarray
    m4: float


class NoiseModel:
    """Seedable disturbance distribution over state increments."""

    def __init__(self, dim: int, mean=None, cov=None, bank=None, step_map=None, step_level: float = 0.0):
        self.dim = int(dim)
        self.mean = np.zeros(dim) if mean is None else np.asarray(mean, dtype=float).reshape(dim)
        if (cov is None) == (bank is None):
            raise ValueError("give exactly one of a covariance (Gaussian) or a sample bank (empirical)")
        if cov is not None:
            cov = np.asarray(cov, dtype=float)
            if cov.shape != (dim, dim):
                raise ValueError(f"covariance must be {dim}x{dim}")
            if not np.allclose(cov, cov.T, atol=1e-12):
                raise ValueError("covariance must be symmetric")
            w, v = np.linalg.eigh(cov)
            if w.min() < -1e-10 * max(1.0, w.max()):
                raise ValueError("covariance must be positive semidefinite")
            keep = w > 1e-14 * max(1.0, w.max())
            self._factor = v[:, keep] * np.sqrt(w[keep])
            self.kind = "gaussian"
        else:
            bank = np.asarray(bank, dtype=float)
            if bank.ndim != 2 or bank.shape[1] != dim:
                raise ValueError(f"sample bank must have {dim} columns")
            if bank.shape[0] < MIN_BANK_SAMPLES:
                raise ValueError(f"sample bank needs at least {MIN_BANK_SAMPLES} rows, got {bank.shape[0]}")
            self.mean = bank.mean(axis=0)
            self.kind = "empirical"
        self.cov = cov
        self.bank = bank
        if step_map is None or step_level == 0.0:
            self.step_map = np.zeros((dim, 0))
            self.step_level = 0.0
        else:
            self.step_map = np.asarray(step_map, dtype=float).reshape(dim, -1)
            self.step_level = float(step_level)

    @classmethod
    def gaussian(cls, mean, cov, **kw) -> "NoiseModel":
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        return cls(cov.shape[0], mean=mean, cov=cov, **kw)

    @classmethod
    def zero(cls, dim: int) -> "NoiseModel":
        return cls(dim, cov=np.zeros((dim, dim)))

    @classmethod
    def from_bank_file(cls, path, **kw) -> "NoiseModel":
        bank = np.loadtxt(path, ndmin=2, delimiter=None)
        return cls(bank.shape[1], bank=bank, **kw)

    @property
    def step_second_moment(self) -> np.ndarray:
        """``E[d d^T]`` of the per-rollout offset (uniform draws on ``[-level, level]``)."""
        return (self.step_level ** 2 / 3.0) * self.step_map @ self.step_map.T

    def sample_offset(self, rng: np.random.Generator) -> np.ndarray:
        k = self.step_map.shape[1]
        if k == 0:
            return np.zeros(self.dim)
        return self.step_map @ rng.uniform(-self.step_level, self.step_level, size=k)

    def sample_innovations(self, rng: np.random.Generator, T: int) -> np.ndarray:
        """``T`` draws of ``mean + e_t`` (no offset)."""
        if self.kind == "gaussian":
            z = rng.standard_normal((T, self._factor.shape[1]))
            return self.mean + z @ self._factor.T
        idx = rng.integers(0, self.bank.shape[0], size=T)
        return self.bank[idx]

    def sample(self, rng: np.random.Generator, T: int) -> np.ndarray:
        d = self.sample_offset(rng)
        return d + self.sample_innovations(rng, T)

    def scaled(self, alpha: float) -> "NoiseModel":
        """Same model with the innovation covariance multiplied by ``alpha`` (Gaussian only)."""
        if self.kind != "gaussian":
            raise ValueError("covariance scaling is defined for Gaussian noise only")
        return NoiseModel(self.dim, mean=self.mean, cov=alpha * self.cov,
                          step_map=self.step_map, step_level=self.step_level)


def _project_psd(W: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (W + W.T))
    if w.min() < 0:
        log.warning("estimated covariance not PSD (min eigenvalue %.3e); projecting", w.min())
        w = np.clip(w, 0.0, None)
    return (v * w) @ v.T


def noise_moments(noise: NoiseModel, Q) -> NoiseMoments:
    """Mean, covariance, and the Q-weighted third and fourth central moments.

    ``M3 = E[e e^T Q e]`` and ``m4 = E[(e^T Q e - tr(W Q))^2]``.
    """
    Q = np.asarray(Q, dtype=float)
    if noise.kind == "gaussian":
        W = noise.cov
        WQ = W @ Q
        return NoiseMoments(noise.mean.copy(), W.copy(), np.zeros(noise.dim), float(2.0 * np.trace(WQ @ WQ)))
    e = noise.bank - noise.mean
    W = _project_psd(e.T @ e / e.shape[0])
    quad = np.einsum("ti,ij,tj->t", e, Q, e)
    M3 = (e * quad[:, None]).mean(axis=0)
    m4 = float(np.mean((quad - np.trace(W @ Q)) ** 2))
    return NoiseMoments(noise.mean.copy(), W, M3, m4)
