"""Wrapped-noise diffusion on the unit periodic box.

All diffusion math runs in normalized coordinates on [0, 1)^3; physical
units are restored at the I/O boundary by rescaling with the box side and
re-wrapping.  The forward process perturbs clean coordinates directly with
scaled Gaussian noise and wraps:

    x_t = wrap(x_0 + sqrt(alpha_t) * c * eps),    eps ~ N(0, I)

under a variance schedule alpha_t that increases from ~0 to ~1.  The noise
amplitude c converts noise from physical to normalized coordinates: train
and sample use c = 1/L per axis, which makes the terminal perturbation one
simulation length unit (one mean interparticle spacing at unit density)
rather than one full box length.  That choice is load-bearing.  At c = 1
the intermediate states for most of the schedule are fully scrambled, the
regression target is provably unrecoverable there (the wrapped posterior
spreads over many periodic images), and the usable reverse-time drift adds
up to a small fraction of a spacing, far too little to assemble anything.
At spacing scale every step stays informative and the cumulative drift
matches the distance a particle must travel.  The bare c = 1 form remains
the default for the low-level helpers (it is what the closed-form posterior
checks in the verify module assume; the wrapped normal at unit sigma is
uniform to within ~5e-9 in total variation).

Sampling starts from uniform positions and walks t = T..1 with the learned
noise estimate eps_hat:

    mu_t    = (alpha_{t-1}/alpha_t - 1) * sqrt(alpha_t) * c * eps_hat(x_t, t) + x_t
    sigma^2 = alpha_{t-1} (alpha_t - alpha_{t-1}) / (2 alpha_t)
    x_{t-1} = wrap(mu_t + c * sigma * z),    z ~ N(0, I) for t > 1 else 0

The mean matches the exact Gaussian posterior of the forward chain.  The
variance is kept as stated above by design even though the exact posterior
variance of the chain is twice it; the verify module measures both
candidates against Monte Carlo and reports which one the data supports.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.typing import NDArray

from .box import PeriodicBox, require_wrapped, wrap_within
from .io import Conformation
from .network import (
    DenoiserConfig,
    DenoiserParams,
    DivergenceError,
    GlobalFeatures,
    init_params,
    loss_and_gradients,
    predict_noise,
)

__all__ = [
    "DiffusionSchedule",
    "TrainConfig",
    "AdamState",
    "DivergenceError",
    "forward_noise",
    "posterior_mean",
    "posterior_var",
    "train",
    "sample",
]

UNIT_BOX = PeriodicBox.cubic(1.0)


@dataclass(frozen=True)
class DiffusionSchedule:
    """Cosine variance schedule.

    alpha(t) = cos^2( (pi/2) * ( ((T - t)/(T + 1) + s) / (1 + s) ) )

    clamped to [1e-8, 1], evaluated at integer t = 0..T.  Strictly
    increasing, with alpha(0) ~ 1e-5 (early steps perturb barely at all)
    and alpha(T) > 0.99 (the fully noised state is uniform on the box).
    """

    n_steps: int = 500
    s: float = 0.008
    alphas: NDArray[np.float64] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.n_steps < 1:
            raise ValueError("schedule needs at least one step")
        if self.s <= 0.0:
            raise ValueError("schedule offset s must be positive")
        t = np.arange(self.n_steps + 1, dtype=np.float64)
        phase = ((self.n_steps - t) / (self.n_steps + 1) + self.s) / (1.0 + self.s)
        alphas = np.clip(np.cos(0.5 * np.pi * phase) ** 2, 1e-8, 1.0)
        alphas.setflags(write=False)
        object.__setattr__(self, "alphas", alphas)
        if np.any(np.diff(alphas) <= 0.0):
            raise ValueError("schedule must be strictly increasing")

    def alpha(self, t: int) -> float:
        """alpha_t for integer t in [0, n_steps]."""
        if not 0 <= t <= self.n_steps:
            raise ValueError(f"t must lie in [0, {self.n_steps}]")
        return float(self.alphas[t])


def forward_noise(
    x0: NDArray[np.float64],
    t: int,
    schedule: DiffusionSchedule,
    rng: np.random.Generator,
    noise_scale: float | NDArray[np.float64] = 1.0,
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """One-shot forward noising in normalized coordinates.

    Args:
        x0: Clean coordinates wrapped in [0, 1), shape (N, 3).
        t: Diffusion step in [1, n_steps].
        schedule: The variance schedule.
        rng: Noise source.
        noise_scale: Amplitude multiplier on the noise displacement, scalar
            or per-axis.  The default 1.0 is the bare closed-form process;
            training passes 1/L per axis so the perturbation has physical
            amplitude sqrt(alpha_t) in simulation length units.

    Returns:
        ``(x_t, eps)``: the wrapped noised coordinates and the exact noise
        draw used, so callers can form the regression target.  ``eps`` is
        the unit-variance draw; the scale only shapes the displacement.
    """
    pts = require_wrapped(x0, UNIT_BOX)
    if not 1 <= t <= schedule.n_steps:
        raise ValueError(f"t must lie in [1, {schedule.n_steps}]")
    eps = rng.standard_normal(pts.shape)
    x_t = wrap_within(pts + np.sqrt(schedule.alpha(t)) * noise_scale * eps, UNIT_BOX)
    return x_t, eps


def posterior_mean(
    x_t: NDArray[np.float64],
    eps_hat: NDArray[np.float64],
    t: int,
    schedule: DiffusionSchedule,
) -> NDArray[np.float64]:
    """Reverse-step mean given a noise estimate at step t >= 1."""
    if not 1 <= t <= schedule.n_steps:
        raise ValueError(f"t must lie in [1, {schedule.n_steps}]")
    a_t = schedule.alpha(t)
    a_prev = schedule.alpha(t - 1)
    return (a_prev / a_t - 1.0) * (np.sqrt(a_t) * np.asarray(eps_hat, dtype=np.float64)) + x_t


def posterior_var(t: int, schedule: DiffusionSchedule) -> float:
    """Reverse-step variance used by the sampler at step t >= 1.

    This is alpha_{t-1} (alpha_t - alpha_{t-1}) / (2 alpha_t).  The exact
    posterior variance of the forward chain is twice this value; see the
    verify module, which measures both against Monte Carlo.
    """
    if not 1 <= t <= schedule.n_steps:
        raise ValueError(f"t must lie in [1, {schedule.n_steps}]")
    a_t = schedule.alpha(t)
    a_prev = schedule.alpha(t - 1)
    return a_prev * (a_t - a_prev) / (2.0 * a_t)


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters.

    Each optimizer step averages gradients over ``batch_size`` conformations
    (``None``, the default, averages over the whole dataset, so an epoch is
    one clean Adam step; ``batch_size=1`` recovers one step per
    conformation).  Full averaging is what makes the default learning rate
    usable: at 0.005 the single-item gradient noise is large enough that
    per-conformation stepping destroys structure as fast as it learns it.
    The learning rate decays by ``lr_decay`` every ``lr_decay_every``
    epochs.
    """

    epochs: int = 800
    learning_rate: float = 0.005
    lr_decay: float = 0.95
    lr_decay_every: int = 100
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: Optional[int] = None

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be positive")
        if self.learning_rate <= 0.0:
            raise ValueError("learning rate must be positive")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValueError("lr_decay must lie in (0, 1]")
        if self.lr_decay_every < 1:
            raise ValueError("lr_decay_every must be positive")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive or None")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a zero-based epoch index."""
        return self.learning_rate * self.lr_decay ** (epoch // self.lr_decay_every)


class AdamState:
    """Adam moment accumulators for a flat parameter vector."""

    def __init__(self, n_params: int, dtype=np.float32) -> None:
        self.m = np.zeros(n_params, dtype=dtype)
        self.v = np.zeros(n_params, dtype=dtype)
        self.step = 0

    def update(
        self,
        flat: NDArray,
        grad: NDArray,
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        """One in-place Adam step on ``flat``."""
        self.step += 1
        self.m += (1.0 - beta1) * (grad - self.m)
        self.v += (1.0 - beta2) * (grad * grad - self.v)
        m_hat = self.m / (1.0 - beta1**self.step)
        v_hat = self.v / (1.0 - beta2**self.step)
        flat -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(flat.dtype)


def _normalized_dataset(
    dataset: Sequence[Conformation], conditional: bool
) -> list[tuple[NDArray, Optional[tuple[float, float, float]], NDArray]]:
    items = []
    for conf in dataset:
        if conditional and conf.condition is None:
            raise ValueError("conditional training needs a condition on every conformation")
        coords = wrap_within(conf.coordinates / conf.box.lengths, UNIT_BOX)
        scale = 1.0 / np.asarray(conf.box.lengths, dtype=np.float64)
        items.append((coords, conf.condition if conditional else None, scale))
    return items


def train(
    dataset: Sequence[Conformation],
    dconfig: DenoiserConfig,
    tconfig: TrainConfig,
    schedule: DiffusionSchedule,
    seed: int,
    params: Optional[DenoiserParams] = None,
    log_every: int = 0,
) -> tuple[DenoiserParams, list[float]]:
    """Train a denoiser on a set of conformations.

    Every epoch visits each conformation once in a fresh random order; each
    visit draws one (t, eps) pair and forms the wrapped noised input.  One
    Adam step is taken per ``tconfig.batch_size`` visits on the averaged
    gradient (default: one step per epoch, averaging the whole dataset).
    Coordinates are normalized to the unit box internally; noise
    displacements carry physical amplitude sqrt(alpha_t) in simulation
    length units (scale 1/L per axis in the normalized frame), so the
    terminal perturbation is about one mean interparticle spacing and every
    step of the schedule stays learnable.

    Args:
        dataset: Training conformations (condition tags required when
            ``dconfig.conditional``).
        dconfig: Architecture; ignored when ``params`` is given.
        tconfig: Optimization hyperparameters.
        schedule: Diffusion schedule.
        seed: Seeds both initialization and the noise stream.
        params: Optional warm start; training mutates a copy.
        log_every: If positive, print a progress line every that many epochs.

    Returns:
        ``(params, history)`` where history holds one mean loss per epoch.

    Raises:
        DivergenceError: If the loss or gradients become non-finite.  The
            exception names the epoch and carries the parameters at failure
            and the completed-epoch history as ``params`` and ``history``
            attributes for post-mortem checkpointing.
    """
    if len(dataset) == 0:
        raise ValueError("dataset must be non-empty")
    # Separate stream from init_params(seed) so weight draws and noise
    # draws never share bits.
    rng = np.random.default_rng(np.random.SeedSequence((seed, 1)))
    if params is None:
        params = init_params(dconfig, seed)
    else:
        params = params.copy()
        dconfig = params.config
    items = _normalized_dataset(dataset, dconfig.conditional)
    adam = AdamState(params.n_params, dtype=params.dtype)
    batch_size = tconfig.batch_size or len(items)
    history: list[float] = []
    for epoch in range(tconfig.epochs):
        lr = tconfig.lr_at(epoch)
        order = rng.permutation(len(items))
        epoch_loss = 0.0
        for start in range(0, len(order), batch_size):
            chunk = order[start : start + batch_size]
            batch = []
            for idx in chunk:
                coords, condition, scale = items[idx]
                t = int(rng.integers(1, schedule.n_steps + 1))
                x_t, eps = forward_noise(coords, t, schedule, rng, noise_scale=scale)
                gfeat = GlobalFeatures.from_raw(
                    t / schedule.n_steps,
                    *(condition if condition is not None else (None, None, None)),
                )
                batch.append((x_t, gfeat, eps))
            try:
                loss, grads = loss_and_gradients(batch, params, UNIT_BOX)
            except DivergenceError as err:
                failure = DivergenceError(f"diverged at epoch {epoch}: {err}")
                failure.params = params
                failure.history = list(history)
                raise failure from err
            adam.update(
                params.flat, grads, lr,
                tconfig.adam_beta1, tconfig.adam_beta2, tconfig.adam_eps,
            )
            epoch_loss += loss * len(chunk)
        history.append(epoch_loss / len(items))
        if log_every and (epoch + 1) % log_every == 0:
            print(f"epoch {epoch + 1}/{tconfig.epochs}  loss {history[-1]:.6f}  lr {lr:.5f}")
    return params, history


def sample(
    n_particles: int,
    params: DenoiserParams,
    schedule: DiffusionSchedule,
    box: PeriodicBox,
    rng: np.random.Generator,
    condition: Optional[tuple[float, float, float]] = None,
    trace_steps: Optional[Sequence[int]] = None,
) -> tuple[Conformation, dict[int, Conformation]]:
    """Draw one configuration by reverse diffusion.

    Args:
        n_particles: Number of particles to place.
        params: Trained denoiser parameters.
        schedule: Diffusion schedule (must match training).
        box: Physical box for the returned conformation.
        rng: Drives both the uniform start and the per-step noise.
        condition: Raw (k, phi, temperature) prompt; required iff the
            model is conditional.
        trace_steps: Optional diffusion times t whose intermediate state
            should be captured (t = n_steps is the initial uniform draw,
            t = 0 the final state).

    Returns:
        ``(conformation, trace)``; the trace maps each requested step to a
        conformation in physical units, and is empty when no steps were
        requested.
    """
    cfg = params.config
    if cfg.conditional and condition is None:
        raise ValueError("conditional model requires a condition")
    if not cfg.conditional and condition is not None:
        raise ValueError("unconditional model must not receive a condition")
    if box.ndim != cfg.n_dims:
        raise ValueError("box dimension must match the network")
    wanted = set(int(t) for t in trace_steps) if trace_steps else set()
    bad = [t for t in wanted if not 0 <= t <= schedule.n_steps]
    if bad:
        raise ValueError(f"trace steps out of range: {sorted(bad)}")

    def to_physical(coords: NDArray, step: int) -> Conformation:
        return Conformation(
            coordinates=wrap_within(coords * box.lengths, box),
            box=box,
            condition=condition,
            source="sampled",
            timestep=step,
        )

    trace: dict[int, Conformation] = {}
    # Reverse steps mirror training's noise amplitude: drift and injected
    # noise are scaled by 1/L per axis so they act in physical units.
    scale = 1.0 / np.asarray(box.lengths, dtype=np.float64)
    x = rng.random((n_particles, cfg.n_dims))
    if schedule.n_steps in wanted:
        trace[schedule.n_steps] = to_physical(x, schedule.n_steps)
    for t in range(schedule.n_steps, 0, -1):
        gfeat = GlobalFeatures.from_raw(
            t / schedule.n_steps,
            *(condition if condition is not None else (None, None, None)),
        )
        eps_hat = predict_noise(x, gfeat, params, UNIT_BOX).astype(np.float64)
        mu = posterior_mean(x, scale * eps_hat, t, schedule)
        if t > 1:
            sigma = np.sqrt(posterior_var(t, schedule))
            mu = mu + scale * sigma * rng.standard_normal(x.shape)
        x = wrap_within(mu, UNIT_BOX)
        if t - 1 in wanted:
            trace[t - 1] = to_physical(x, t - 1)
    return to_physical(x, 0), trace
