"""Optimization: contrastive objective, Eikonal penalty, schedules, Adam.

Per update, 256 points are drawn from the data (positives) and 2048 model
samples are produced by the Langevin sampler (negatives, treated as constants
in the gradient). The objective is

    loss = beta * (mean |f| over positives - mean |f| over negatives)
           + gamma * mean (|grad_x f| - 1)^2  over all 2304 points,

minimized with Adam at a constant learning rate. beta is raised from
beta_init to beta_target in four log-spaced stages over the first half of
training; every stage transition (and the very first update) runs the
sampler once with the slow stable schedule (s=0.1, K=1000) before reverting
to the fast one. Encoding progress ramps linearly to full over the first
half of training. An epoch is ceil(N / batch_positive) updates.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ebm import GibbsModel, LangevinConfig, ReplayBuffer, sample_negatives
from .geometry import NormalizationTransform, PointCloud
from .network import CoordinateNetwork, NetworkConfig, geometric_init, save_checkpoint


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 150
    batch_positive: int = 256
    batch_negative: int = 2048
    lr: float = 3e-4
    gamma: float = 5.0
    beta_init: float = 10.0
    beta_target: float = 50.0
    beta_stage_fraction: float = 0.5
    stability_s: float = 0.1
    stability_K: int = 1000
    pe_ramp_fraction: float = 0.5
    checkpoint_every: int = 10
    seed: int = 0

    def __post_init__(self):
        if min(self.epochs, self.batch_positive, self.batch_negative, self.stability_K) < 1:
            raise ValueError("counts must be >= 1")
        if not (self.lr > 0.0) or self.gamma < 0.0:
            raise ValueError("need lr > 0 and gamma >= 0")
        if not (0.0 < self.beta_stage_fraction <= 1.0):
            raise ValueError("beta_stage_fraction must be in (0, 1]")
        if not (0.0 < self.beta_init <= self.beta_target):
            raise ValueError("need 0 < beta_init <= beta_target")


@dataclass
class TrainState:
    network: CoordinateNetwork
    buffer: ReplayBuffer
    adam_m: np.ndarray
    adam_v: np.ndarray
    adam_t: int
    beta: float
    epoch: int
    history: list[tuple[float, float]] = field(default_factory=list)
    stability_updates: list[int] = field(default_factory=list)


def beta_schedule(cfg: TrainConfig, epoch: int) -> float:
    """Four log-spaced stages across the first beta_stage_fraction of epochs,
    then constant at beta_target. Non-decreasing in the epoch."""
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside 0..{cfg.epochs - 1}")
    stages = np.geomspace(cfg.beta_init, cfg.beta_target, 4)
    span = cfg.beta_stage_fraction * cfg.epochs
    idx = min(3, int(4 * epoch / span)) if epoch < span else 3
    return float(stages[idx])


def _losses_and_grad(model: GibbsModel, positives: np.ndarray, negatives: np.ndarray, gamma: float):
    """(loss_ebm, loss_eikonal, flat parameter gradient) in one pipeline.

    Negatives enter the contrastive term as constants; the Eikonal term runs
    over the union of both batches. Points where |grad f| = 0 contribute the
    constant 1 to the Eikonal value and a zero subgradient.
    """
    net = model.network
    P, N = len(positives), len(negatives)
    X = np.concatenate([positives, negatives]).astype(net.dtype)
    cache = net._forward_cache(X)
    f = cache.f
    g = net._input_grad(cache)

    beta = model.beta
    loss_ebm = beta * (float(np.abs(f[:P]).mean()) - float(np.abs(f[P:]).mean()))
    cot_f = np.empty(len(f), dtype=np.float64)
    sgn = np.sign(f)
    cot_f[:P] = beta * sgn[:P] / P
    cot_f[P:] = -beta * sgn[P:] / N

    gn = np.linalg.norm(g.astype(np.float64), axis=1)
    loss_eik = float(((gn - 1.0) ** 2).mean())
    if gamma > 0.0:
        safe = np.where(gn > 0.0, gn, 1.0)
        U = g / safe[:, None].astype(net.dtype)
        U[gn == 0.0] = 0.0
        cot_g = (2.0 * gamma / len(f)) * (gn - 1.0)
        cot_g[gn == 0.0] = 0.0
        grad = net._mixed_vjp(cache, U, cot_f, cot_g)
    else:
        grad = net._param_vjp(cache, cot_f)
    return loss_ebm, loss_eik, grad


def loss_ebm(model: GibbsModel, positives, negatives) -> tuple[float, np.ndarray]:
    """Contrastive term beta (mean |f| on data - mean |f| on model samples)."""
    value, _, grad = _losses_and_grad(
        model, np.atleast_2d(positives), np.atleast_2d(negatives), gamma=0.0
    )
    return value, grad


def loss_eikonal(model: GibbsModel, points) -> tuple[float, np.ndarray]:
    """Unit-gradient-norm penalty mean (|grad_x f| - 1)^2 over the points."""
    net = model.network
    X = np.atleast_2d(points).astype(net.dtype)
    cache = net._forward_cache(X)
    g = net._input_grad(cache)
    gn = np.linalg.norm(g.astype(np.float64), axis=1)
    value = float(((gn - 1.0) ** 2).mean())
    safe = np.where(gn > 0.0, gn, 1.0)
    U = g / safe[:, None].astype(net.dtype)
    U[gn == 0.0] = 0.0
    cot_g = (2.0 / len(X)) * (gn - 1.0)
    cot_g[gn == 0.0] = 0.0
    grad = net._mixed_vjp(cache, U, np.zeros(len(X)), cot_g)
    return value, grad


def total_loss(model: GibbsModel, positives, negatives, gamma: float) -> tuple[float, np.ndarray]:
    l_ebm, l_eik, grad = _losses_and_grad(
        model, np.atleast_2d(positives), np.atleast_2d(negatives), gamma
    )
    return l_ebm + gamma * l_eik, grad


@dataclass
class _Adam:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def step(self, params: np.ndarray, grad: np.ndarray, lr: float) -> None:
        self.t += 1
        self.m += (1.0 - self.beta1) * (grad - self.m)
        self.v += (1.0 - self.beta2) * (grad * grad - self.v)
        mhat = self.m / (1.0 - self.beta1 ** self.t)
        vhat = self.v / (1.0 - self.beta2 ** self.t)
        params -= (lr * mhat / (np.sqrt(vhat) + self.eps)).astype(params.dtype)


def _write_loss_csv(path: Path, history: list[tuple[float, float]], updates_per_epoch: int) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["update", "epoch", "loss_ebm", "loss_eikonal"])
        for i, (le, lk) in enumerate(history):
            writer.writerow([i, i // updates_per_epoch, f"{le:.9g}", f"{lk:.9g}"])


def train(
    cloud: PointCloud,
    net_cfg: NetworkConfig,
    train_cfg: TrainConfig,
    langevin_cfg: LangevinConfig | None = None,
    run_dir=None,
    transform: NormalizationTransform | None = None,
    trace_sampler: bool = False,
    progress=None,
) -> TrainState:
    """Fit the network to the cloud; returns the final state.

    The cloud must be normalized (inside the sampler's clamp box). When
    run_dir is given it receives checkpoints every `checkpoint_every` epochs
    plus at the end, a loss CSV, and (with trace_sampler) a per-epoch sampler
    trace of the first 32 chains. Deterministic given train_cfg.seed.
    """
    pts = cloud.points
    base_lcfg = langevin_cfg if langevin_cfg is not None else LangevinConfig()
    if np.abs(pts).max() > base_lcfg.clamp_hi:
        raise ValueError("cloud must be normalized (points exceed the sampler clamp box)")
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)

    root = np.random.SeedSequence(train_cfg.seed)
    init_ss, pos_ss, neg_root = root.spawn(3)
    net = geometric_init(net_cfg, init_ss)
    pos_rng = np.random.default_rng(pos_ss)
    buffer = ReplayBuffer()
    adam = _Adam(
        m=np.zeros(net.n_params, dtype=np.float64),
        v=np.zeros(net.n_params, dtype=np.float64),
    )

    n_points = len(pts)
    updates_per_epoch = math.ceil(n_points / train_cfg.batch_positive)
    total_updates = updates_per_epoch * train_cfg.epochs
    pe_span = max(train_cfg.pe_ramp_fraction * train_cfg.epochs, 1e-12)
    L = net_cfg.pe_dims

    state = TrainState(
        network=net, buffer=buffer, adam_m=adam.m, adam_v=adam.v, adam_t=0,
        beta=train_cfg.beta_init, epoch=0,
    )
    pending_stability = True  # the very beginning of learning
    prev_beta = None
    update_idx = 0
    trace_rows: list[tuple] = []

    def checkpoint(tag: str, beta: float, epoch: int):
        if run_dir is None:
            return
        save_checkpoint(
            net, run_dir / f"checkpoint_{tag}.ckpt", transform=transform,
            extra={"beta": beta, "epoch": epoch, "seed": train_cfg.seed},
        )

    for epoch in range(train_cfg.epochs):
        beta = beta_schedule(train_cfg, epoch)
        if prev_beta is not None and beta != prev_beta:
            pending_stability = True
        prev_beta = beta

        for u in range(updates_per_epoch):
            net.set_pe_progress(L * min(1.0, (epoch + u / updates_per_epoch) / pe_span))
            model = GibbsModel(net, beta)

            if pending_stability:
                lcfg = LangevinConfig(
                    None, train_cfg.stability_s, train_cfg.stability_K,
                    base_lcfg.clamp_lo, base_lcfg.clamp_hi,
                ).resolve(beta)
                state.stability_updates.append(update_idx)
            else:
                lcfg = base_lcfg.resolve(beta)
            pending_stability = False

            trace = None
            if trace_sampler and u == 0:
                def trace(step, x, energy, _upd=update_idx):
                    for c in range(min(32, len(x))):
                        trace_rows.append(
                            (_upd, step, c, f"{x[c,0]:.9g}", f"{x[c,1]:.9g}", f"{x[c,2]:.9g}", f"{energy[c]:.9g}")
                        )

            neg_seed = neg_root.spawn(1)[0]
            negatives = sample_negatives(
                model, lcfg, buffer, cloud, train_cfg.batch_negative, neg_seed, trace=trace
            )
            positives = pts[pos_rng.integers(0, n_points, size=train_cfg.batch_positive)]

            l_ebm, l_eik, grad = _losses_and_grad(model, positives, negatives, train_cfg.gamma)
            if not (np.isfinite(l_ebm) and np.isfinite(l_eik) and np.isfinite(grad).all()):
                checkpoint("diverged", beta, epoch)
                raise TrainingDivergedError(
                    f"non-finite loss at update {update_idx} (epoch {epoch}); last checkpoint retained"
                )
            adam.step(net.params, grad.astype(np.float64), train_cfg.lr)
            state.history.append((l_ebm, l_eik))
            update_idx += 1

        state.beta = beta
        state.epoch = epoch
        state.adam_t = adam.t
        if (epoch + 1) % train_cfg.checkpoint_every == 0 and epoch + 1 < train_cfg.epochs:
            checkpoint(f"epoch_{epoch + 1:04d}", beta, epoch)
        if progress is not None:
            progress(epoch, state)

    checkpoint("final", state.beta, state.epoch)
    if run_dir is not None:
        _write_loss_csv(run_dir / "loss.csv", state.history, updates_per_epoch)
        if trace_sampler:
            with open(run_dir / "sampler_trace.csv", "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["update", "step", "chain", "x", "y", "z", "energy"])
                writer.writerows(trace_rows)
    return state
