"""Gibbs point model over the network, Langevin sampling, replay buffer.

The model density is exp(-beta |f(x)|) / Z up to the never-computed
normalizer Z; |f| is the energy and the zero level set of f is the mode.
Negative samples are drawn with Langevin dynamics

    x_{k+1} = x_k - alpha_k * beta * sign(f) * grad_x f(x_k)
              + sqrt(2 alpha_k) * eps_k,

i.e. the drift uses the potential of the beta-scaled density (the step-size
convention alpha_0 = 0.03 / beta makes the drift magnitude beta-independent).
Chains start from a 95:5 mixture of replay-buffer states and fresh states
near the data, and finished chains are pushed back into the buffer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import PointCloud
from .network import CoordinateNetwork


class SamplerDivergedError(RuntimeError):
    def __init__(self, step: int | None = None):
        self.step = step
        where = f" at step {step}" if step is not None else ""
        super().__init__(f"sampler diverged{where}: non-finite state")


@dataclass
class GibbsModel:
    """Energy |f(x)| with inverse temperature beta; density known up to Z."""

    network: CoordinateNetwork
    beta: float

    def __post_init__(self):
        if not (self.beta > 0.0):
            raise ValueError("beta must be positive")

    def energy(self, x) -> np.ndarray | float:
        out = self.network.forward(x)
        return abs(out) if np.isscalar(out) else np.abs(out)

    def energy_and_grad(self, X) -> tuple[np.ndarray, np.ndarray]:
        """|f| and its gradient sign(f) * grad f (zero exactly at f = 0)."""
        f, g = self.network.value_and_input_grad(X)
        return np.abs(f), np.sign(f)[:, None] * g


@dataclass
class LangevinConfig:
    """Step schedule and state bounds. alpha0=None means "derive 0.03/beta"
    at use time (the trainer re-derives it whenever beta changes)."""

    alpha0: float | None = None
    s: float = 1.0
    K: int = 30
    clamp_lo: float = -1.1
    clamp_hi: float = 1.1

    def __post_init__(self):
        if self.alpha0 is not None and not (self.alpha0 > 0.0):
            raise ValueError("alpha0 must be positive")
        if self.s < 0.0 or self.K < 1:
            raise ValueError("need s >= 0 and K >= 1")
        if not self.clamp_lo < self.clamp_hi:
            raise ValueError("empty clamp box")

    def resolve(self, beta: float) -> "LangevinConfig":
        if self.alpha0 is not None:
            return self
        return LangevinConfig(0.03 / beta, self.s, self.K, self.clamp_lo, self.clamp_hi)

    @staticmethod
    def for_beta(beta: float, s: float = 1.0, K: int = 30) -> "LangevinConfig":
        """The step-size convention alpha_0 = 0.03 / beta."""
        return LangevinConfig(alpha0=0.03 / beta, s=s, K=K)


def step_schedule(cfg: LangevinConfig, k: int) -> float:
    """alpha_k = alpha_0 / (1 + s (k - 1)) for k = 1..K (non-increasing)."""
    if cfg.alpha0 is None:
        raise ValueError("alpha0 unresolved; call cfg.resolve(beta) first")
    if not 1 <= k <= cfg.K:
        raise ValueError(f"step index {k} outside 1..{cfg.K}")
    return cfg.alpha0 / (1.0 + cfg.s * (k - 1))


def langevin_step(model: GibbsModel, x: np.ndarray, alpha: float, noise: np.ndarray,
                  clamp_lo: float = -1.1, clamp_hi: float = 1.1) -> np.ndarray:
    """One update of every chain; result clamped to the box componentwise."""
    if not alpha > 0.0:
        raise ValueError("alpha must be positive")
    x = np.atleast_2d(np.asarray(x))
    _, grad_e = model.energy_and_grad(x)
    out = x - (alpha * model.beta) * grad_e + np.sqrt(2.0 * alpha) * np.atleast_2d(noise)
    if not np.isfinite(out).all():
        raise SamplerDivergedError()
    return np.clip(out, clamp_lo, clamp_hi)


class ReplayBuffer:
    """FIFO store of previous chain states reused as Langevin starts."""

    def __init__(self, capacity: int = 8192, seed=0):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._store = np.zeros((capacity, 3), dtype=np.float64)
        self._size = 0
        self._head = 0  # next write slot once full
        self._rng = np.random.default_rng(seed)

    def __len__(self) -> int:
        return self._size

    @property
    def entries(self) -> np.ndarray:
        if self._size < self.capacity:
            return self._store[: self._size]
        # oldest-first view of the ring
        return np.concatenate([self._store[self._head :], self._store[: self._head]])

    def push(self, points: np.ndarray) -> None:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        for row in pts[max(0, len(pts) - self.capacity) :]:
            if self._size < self.capacity:
                self._store[self._size] = row
                self._size += 1
            else:
                self._store[self._head] = row
                self._head = (self._head + 1) % self.capacity

    def sample(self, n: int, rng=None) -> np.ndarray:
        if self._size == 0:
            raise ValueError("buffer is empty")
        rng = self._rng if rng is None else rng
        idx = rng.integers(0, self._size, size=n)
        return self._store[idx].copy()


def run_chain(model: GibbsModel, cfg: LangevinConfig, x0: np.ndarray, rng) -> np.ndarray:
    """K Langevin steps from x0 (n, 3); returns the final states."""
    x = np.asarray(x0, dtype=np.float64).copy()
    for k in range(1, cfg.K + 1):
        alpha = step_schedule(cfg, k)
        noise = rng.standard_normal(x.shape)
        try:
            x = langevin_step(model, x, alpha, noise, cfg.clamp_lo, cfg.clamp_hi)
        except SamplerDivergedError:
            raise SamplerDivergedError(step=k) from None
    return x


def sample_negatives(
    model: GibbsModel,
    cfg: LangevinConfig,
    buffer: ReplayBuffer,
    cloud: PointCloud,
    n: int,
    seed,
    fresh_std: float = 0.1,
    buffer_fraction: float = 0.95,
    trace=None,
) -> np.ndarray:
    """Draw n model samples via replay-buffer-initialized Langevin chains.

    Initial states: with probability `buffer_fraction` a uniform draw from
    the buffer (fresh while the buffer is still empty), otherwise a cloud
    point plus isotropic N(0, fresh_std^2) noise. Final states are pushed
    back into the buffer. Deterministic given the seed. `trace`, when given,
    is called as trace(step, states, energies) after every Langevin step.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)

    use_buffer = rng.random(n) < buffer_fraction
    if len(buffer) == 0:
        use_buffer[:] = False
    x0 = np.empty((n, 3), dtype=np.float64)
    n_buf = int(use_buffer.sum())
    if n_buf:
        x0[use_buffer] = buffer.sample(n_buf, rng)
    n_fresh = n - n_buf
    if n_fresh:
        pick = rng.integers(0, len(cloud), size=n_fresh)
        x0[~use_buffer] = cloud.points[pick] + fresh_std * rng.standard_normal((n_fresh, 3))

    if trace is None:
        x = run_chain(model, cfg, x0, rng)
    else:
        x = x0
        for k in range(1, cfg.K + 1):
            alpha = step_schedule(cfg, k)
            noise = rng.standard_normal(x.shape)
            try:
                x = langevin_step(model, x, alpha, noise, cfg.clamp_lo, cfg.clamp_hi)
            except SamplerDivergedError:
                raise SamplerDivergedError(step=k) from None
            trace(k, x, model.energy(x))
    buffer.push(x)
    return x
