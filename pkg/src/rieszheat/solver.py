"""Exponential-Euler time stepping of the coupled stochastic heat system.

One step applies drift and noise coupling pointwise in physical space and
then the exact heat semigroup in frequency space:

    u_{n+1} = S_dt * (u_n + dt b(u_n) + sigma(u_n) dW_n),

where ``S_dt`` multiplies each Fourier mode by ``exp(-2 pi^2 dt |xi|^2)`` and
``dW_n`` is a unit-density noise slice scaled by sqrt(dt).  The scheme is
unconditionally stable and exact for constant coefficients up to the noise
discretization.  The initial condition is identically zero.

Replicas are independent by construction of the noise streams; ensembles run
in fixed-size chunks so results do not depend on worker scheduling, and an
observer callback sees every step of every chunk, which keeps memory bounded
by one time slice plus whatever the observer retains.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .kernels import NoiseParams
from .noise import NoiseSampler, TorusGrid

__all__ = [
    "SigmaCoefficient",
    "DriftCoefficient",
    "CoefficientSpec",
    "ModelSpec",
    "SolverConfig",
    "LatticeField",
    "StepEngine",
    "run",
    "run_ensemble",
    "holder_exponents",
    "HolderFit",
    "default_grid",
    "sigma_registry",
    "drift_registry",
    "sampled_ellipticity",
]

CHUNK_SIZE = 128


# ---------------------------------------------------------------------------
# coefficient registry


@dataclass(frozen=True)
class SigmaCoefficient:
    """Noise coupling sigma: R^d -> R^(d x d), applied pointwise.

    ``apply(u, w)`` evaluates sigma(u) w for fields with channel axis first.
    ``lipschitz`` is a recorded global Lipschitz constant, ``ellipticity`` the
    strong-ellipticity constant rho (None when the matrix can degenerate),
    ``bounded`` says whether sigma itself is bounded.
    """

    name: str
    apply: Callable
    lipschitz: float
    ellipticity: float | None
    bounded: bool
    diagonal_scale: float | None = None


@dataclass(frozen=True)
class DriftCoefficient:
    """Drift b: R^d -> R^d, applied pointwise; ``apply(u)`` returns b(u)."""

    name: str
    apply: Callable
    lipschitz: float
    bounded: bool
    diagonal_rate: float | None = None


def _sigma_identity(d, scale=1.0):
    scale = float(scale)

    def apply(u, w):
        return scale * w if scale != 1.0 else w

    return SigmaCoefficient(
        name="identity" if scale == 1.0 else f"scaled_identity({scale})",
        apply=apply, lipschitz=0.0, ellipticity=abs(scale), bounded=True,
        diagonal_scale=scale,
    )


def _sigma_zero(d):
    def apply(u, w):
        return np.zeros_like(w)

    return SigmaCoefficient(name="zero", apply=apply, lipschitz=0.0,
                            ellipticity=None, bounded=True, diagonal_scale=0.0)


def _sigma_tanh_mix(d, base=1.0, amp=0.2, width=1.0):
    """base*I + amp*tanh(mean(u)/width)*R with R a cyclic permutation.

    Smooth, bounded, with bounded derivatives; smallest singular value is at
    least base - |amp| since R is orthogonal.
    """
    if not abs(amp) < base:
        raise ValueError("tanh mixing needs |amp| < base for ellipticity")

    def apply(u, w):
        gate = np.tanh(u.mean(axis=0, keepdims=True) / width)
        return base * w + amp * gate * np.roll(w, 1, axis=0)

    return SigmaCoefficient(
        name=f"tanh_mix({base},{amp},{width})", apply=apply,
        lipschitz=abs(amp) / width, ellipticity=base - abs(amp), bounded=True,
    )


def _drift_zero(d):
    return DriftCoefficient(name="zero", apply=lambda u: np.zeros_like(u),
                            lipschitz=0.0, bounded=True, diagonal_rate=0.0)


def _drift_constant(d, value=1.0):
    value = np.broadcast_to(np.asarray(value, dtype=float).reshape(-1, *([1] * 0)), (d,))

    def apply(u):
        shape = (d,) + (1,) * (u.ndim - 1)
        return np.broadcast_to(value.reshape(shape), u.shape)

    return DriftCoefficient(name=f"constant({value.tolist()})", apply=apply,
                            lipschitz=0.0, bounded=True)


def _drift_linear(d, rate=-1.0):
    rate = float(rate)
    return DriftCoefficient(name=f"linear({rate})", apply=lambda u: rate * u,
                            lipschitz=abs(rate), bounded=False, diagonal_rate=rate)


def _drift_tanh(d, amp=1.0, width=1.0):
    return DriftCoefficient(
        name=f"tanh({amp},{width})",
        apply=lambda u: amp * np.tanh(u / width),
        lipschitz=abs(amp) / width, bounded=True,
    )


sigma_registry = {
    "identity": _sigma_identity,
    "scaled_identity": _sigma_identity,
    "zero": _sigma_zero,
    "tanh_mix": _sigma_tanh_mix,
}

drift_registry = {
    "zero": _drift_zero,
    "constant": _drift_constant,
    "linear": _drift_linear,
    "tanh": _drift_tanh,
}


@dataclass(frozen=True)
class CoefficientSpec:
    """Named coefficient pair resolved through the registries."""

    sigma_id: str = "identity"
    b_id: str = "zero"
    sigma_params: tuple = ()
    b_params: tuple = ()

    def build(self, d: int):
        if self.sigma_id not in sigma_registry:
            raise ValueError(f"unknown sigma coefficient {self.sigma_id!r}")
        if self.b_id not in drift_registry:
            raise ValueError(f"unknown drift coefficient {self.b_id!r}")
        sigma = sigma_registry[self.sigma_id](d, **dict(self.sigma_params))
        drift = drift_registry[self.b_id](d, **dict(self.b_params))
        return sigma, drift


def sampled_ellipticity(sigma: SigmaCoefficient, d: int, n_samples: int = 2000,
                        seed: int = 0) -> float:
    """Smallest sampled value of |sigma(x) xi| over random x and unit xi."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((d, n_samples)) * 3.0
    xi = rng.standard_normal((d, n_samples))
    xi /= np.linalg.norm(xi, axis=0, keepdims=True)
    out = sigma.apply(x, xi)
    return float(np.linalg.norm(out, axis=0).min())


# ---------------------------------------------------------------------------
# model and configuration


@dataclass(frozen=True)
class ModelSpec:
    """The full model tuple: dimensions, noise exponent, coefficients, horizon."""

    k: int
    d: int
    beta: float
    coefficients: CoefficientSpec = CoefficientSpec()
    T: float = 1.0

    def __post_init__(self):
        NoiseParams(self.k, self.beta, self.d)  # reuse its validation
        if not self.T > 0:
            raise ValueError(f"horizon T must be positive, got {self.T}")

    @property
    def noise(self) -> NoiseParams:
        return NoiseParams(self.k, self.beta, self.d)


@dataclass(frozen=True)
class SolverConfig:
    """Grid, step count, recording times and seeding for an ensemble run."""

    model: ModelSpec
    grid: TorusGrid
    n_steps: int
    record_times: tuple = ()
    master_seed: int = 0
    replicas: int = 1

    def __post_init__(self):
        if self.grid.k != self.model.k:
            raise ValueError("grid and model disagree on spatial dimension")
        if not (isinstance(self.n_steps, (int, np.integer)) and self.n_steps >= 1):
            raise ValueError("n_steps must be a positive integer")
        if not math.isclose(self.n_steps * self.grid.dt, self.model.T,
                            rel_tol=1e-9, abs_tol=0.0):
            raise ValueError(
                f"n_steps * dt = {self.n_steps * self.grid.dt} != T = {self.model.T}"
            )
        if self.replicas < 1:
            raise ValueError("replicas must be >= 1")
        object.__setattr__(self, "record_times", tuple(float(t) for t in self.record_times))
        for t in self.record_times:
            if not (0.0 < t <= self.model.T + 1e-12):
                raise ValueError(f"record time {t} outside (0, T]")
            step = t / self.grid.dt
            if abs(step - round(step)) > 1e-6:
                raise ValueError(f"record time {t} is not a multiple of dt={self.grid.dt}")

    def record_steps(self) -> list:
        return [int(round(t / self.grid.dt)) for t in self.record_times]


@dataclass
class LatticeField:
    """Recorded snapshots of one replica: data[i] is the field at times[i]."""

    grid: TorusGrid
    times: tuple
    data: np.ndarray
    replica: int = 0

    def __post_init__(self):
        if self.data.shape[0] != len(self.times):
            raise ValueError("one data block per recorded time required")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("non-finite values in recorded field")


# ---------------------------------------------------------------------------
# stepping engine


class StepEngine:
    """Precomputed tables for stepping a (d, chunk, lattice...) state block.

    When the noise coupling is a multiple of the identity and the drift is
    zero or linear, the whole recurrence is diagonal in frequency space; the
    engine then keeps the state spectral and only materializes the physical
    field at steps somebody watches, which halves the FFT work.  The fused
    recurrence is algebraically identical to the general one.
    """

    def __init__(self, cfg: SolverConfig):
        self.cfg = cfg
        grid = cfg.grid
        self.sigma, self.drift = cfg.model.coefficients.build(cfg.model.d)
        freqs = [np.fft.fftfreq(grid.points, d=grid.spacing) for _ in range(grid.k)]
        freqs[-1] = freqs[-1][: grid.points // 2 + 1]
        mesh = np.meshgrid(*freqs, indexing="ij")
        xi_sq = sum(g * g for g in mesh)
        self.semigroup = np.exp(-2.0 * math.pi**2 * grid.dt * xi_sq)
        self.sqrt_dt = math.sqrt(grid.dt)
        self.axes = tuple(range(-grid.k, 0))
        self.sampler = NoiseSampler(grid, cfg.model.noise, cfg.master_seed)
        self._fused = self._diagonal_coefficients()

    def _diagonal_coefficients(self):
        """(noise scale, drift growth rate) when both act diagonally, else None."""
        if self.sigma.diagonal_scale is None or self.drift.diagonal_rate is None:
            return None
        return self.sigma.diagonal_scale, self.drift.diagonal_rate

    def step(self, state: np.ndarray, slice_values: np.ndarray, step_index: int) -> np.ndarray:
        """Advance one time step; fails fast on non-finite state."""
        cfg = self.cfg
        forced = state + cfg.grid.dt * self.drift.apply(state)
        forced += self.sigma.apply(state, slice_values) * self.sqrt_dt
        spectrum = np.fft.rfftn(forced, axes=self.axes)
        spectrum *= self.semigroup
        out = np.fft.irfftn(spectrum, s=cfg.grid.shape, axes=self.axes)
        if not np.all(np.isfinite(out)):
            raise FloatingPointError(f"non-finite state after step {step_index}")
        return out

    def run_chunk(self, replicas: Sequence[int], observer=None,
                  record_steps: Sequence[int] = ()) -> np.ndarray | None:
        """Step a chunk of replicas from 0 to T.

        States are channel-first, shape (d, chunk, lattice...).  The observer
        ``observer(step_index, time, states, replicas)`` sees every step.
        When ``record_steps`` is nonempty the recorded snapshots come back as
        an array of shape (n_records, d, chunk, lattice...).
        """
        cfg = self.cfg
        grid = cfg.grid
        replicas = list(replicas)
        record_steps = list(record_steps)
        record_at = {s: i for i, s in enumerate(record_steps)}
        shape = (cfg.model.d, len(replicas)) + grid.shape
        recorded = np.empty((len(record_steps),) + shape) if record_steps else None

        if self._fused is not None:
            self._run_chunk_fused(replicas, observer, record_at, recorded, shape)
            return recorded

        state = np.zeros(shape)
        for n in range(cfg.n_steps):
            slices = self.sampler.sample_batch(replicas, n, channel_first=True)
            state = self.step(state, slices, n)
            step_index = n + 1
            if observer is not None:
                observer(step_index, step_index * grid.dt, state, replicas)
            if step_index in record_at:
                recorded[record_at[step_index]] = state
        return recorded

    def _run_chunk_fused(self, replicas, observer, record_at, recorded, shape):
        """Spectral-state recurrence for diagonal coefficients.

        Physical states are materialized only at recorded steps and steps
        inside the observer's declared step range.
        """
        cfg = self.cfg
        grid = cfg.grid
        scale, rate = self._fused
        growth = 1.0 + grid.dt * rate
        noise_gain = scale * self.sqrt_dt
        filt = self.sampler.spectral_filter * noise_gain
        state_hat = np.zeros(shape[:2] + self.semigroup.shape, dtype=complex)
        lo = getattr(observer, "step_lo", 1) if observer is not None else None
        hi = getattr(observer, "step_hi", cfg.n_steps) if observer is not None else None
        for n in range(cfg.n_steps):
            white = self.sampler.white_batch(replicas, n)
            w_hat = np.fft.rfftn(white, axes=self.axes)
            state_hat *= growth
            state_hat += w_hat * filt
            state_hat *= self.semigroup
            step_index = n + 1
            watch = observer is not None and lo <= step_index <= hi
            if watch or step_index in record_at:
                state = np.fft.irfftn(state_hat, s=grid.shape, axes=self.axes)
                if not np.all(np.isfinite(state)):
                    raise FloatingPointError(f"non-finite state after step {step_index}")
                if watch:
                    observer(step_index, step_index * grid.dt, state, replicas)
                if step_index in record_at:
                    recorded[record_at[step_index]] = state


def step(state: np.ndarray, slc, cfg: SolverConfig, step_index: int = 0) -> np.ndarray:
    """Single-state convenience wrapper around :class:`StepEngine`.

    ``state`` has shape (d, lattice...) like a NoiseSlice's values.
    """
    engine = StepEngine(cfg)
    values = slc.values if hasattr(slc, "values") else np.asarray(slc)
    return engine.step(state[:, None], values[:, None], step_index)[:, 0]


def _chunked(seq: Sequence[int], size: int) -> Iterator[list]:
    seq = list(seq)
    for i in range(0, len(seq), size):
        yield seq[i : i + size]


def run(cfg: SolverConfig, observer=None) -> Iterator[LatticeField]:
    """Stream one LatticeField per replica, in replica order.

    Deterministic in (master_seed, replica): the chunk layout is fixed, so
    reruns and partial runs reproduce bit-identical recordings.
    """
    record_steps = cfg.record_steps()
    engine = StepEngine(cfg)
    for chunk in _chunked(range(cfg.replicas), CHUNK_SIZE):
        recorded = engine.run_chunk(chunk, observer=observer, record_steps=record_steps)
        if recorded is None:
            recorded = np.empty((0, cfg.model.d, len(chunk)) + cfg.grid.shape)
        for lane, replica in enumerate(chunk):
            yield LatticeField(
                grid=cfg.grid,
                times=cfg.record_times,
                data=recorded[:, :, lane].copy(),
                replica=replica,
            )


def run_ensemble(cfg: SolverConfig, observer=None) -> list:
    """Materialize :func:`run` for all replicas (memory permitting)."""
    return list(run(cfg, observer=observer))


def worker_count() -> int:
    """Worker pool size: RIESZHEAT_THREADS if set, else the logical core count."""
    env = os.environ.get("RIESZHEAT_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


# ---------------------------------------------------------------------------
# Hoelder exponent estimation


@dataclass
class HolderFit:
    temporal: float
    spatial: float
    temporal_stderr: float
    spatial_stderr: float
    time_lags: np.ndarray
    time_moments: np.ndarray
    space_lags: np.ndarray
    space_moments: np.ndarray


def _fit_slope(lags, moments):
    lx = np.log(np.asarray(lags))
    ly = np.log(np.asarray(moments))
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, res, *_ = np.linalg.lstsq(A, ly, rcond=None)
    n = len(lx)
    dof = max(n - 2, 1)
    resid = ly - A @ coef
    s2 = float(resid @ resid) / dof
    cov = s2 * np.linalg.inv(A.T @ A)
    return float(coef[0]), float(np.sqrt(cov[0, 0]))


def holder_exponents(fields: Iterable[LatticeField], window=None,
                     time_lag_steps: Sequence[int] | None = None,
                     space_lag_steps: Sequence[int] | None = None,
                     min_replicas: int = 100) -> HolderFit:
    """Regression estimate of the temporal and spatial regularity exponents.

    Pools mean-square increments over replicas and lattice sites, regresses
    log E|u(t+h, x) - u(t, x)|^2 on log h and log E|u(t, x+z) - u(t, x)|^2 on
    log |z|, and returns half the slopes (the per-unit regularity orders).
    ``window`` restricts times to (t0, t1] and the first spatial axis to
    [a, b].  Temporal lags pair recorded times against the latest recorded
    time; spatial lags are lattice shifts at that time.
    """
    fields = list(fields)
    if len(fields) < min_replicas:
        raise ValueError(f"need at least {min_replicas} replicas, got {len(fields)}")
    times = np.asarray(fields[0].times)
    grid = fields[0].grid
    if window is not None:
        (t0, t1), (a, b) = window
    else:
        (t0, t1), (a, b) = (0.0, float(times.max())), (0.0, grid.length)
    usable = np.where((times > t0) & (times <= t1 + 1e-12))[0]
    if usable.size < 2:
        raise ValueError("window keeps fewer than two recorded times")
    anchor = int(usable[-1])
    t_anchor = times[anchor]

    dt = grid.dt
    lag_steps = sorted(
        {int(round((t_anchor - times[i]) / dt)) for i in usable[:-1]} - {0}
    )
    if time_lag_steps is not None:
        lag_steps = sorted(set(lag_steps) & {int(s) for s in time_lag_steps})

    coords = np.arange(grid.points) * grid.spacing
    in_box = np.where((coords >= a) & (coords <= b + 1e-12))[0]

    stack = np.stack([f.data for f in fields])  # (R, n_times, d, lattice...)
    space_axis = 3  # first spatial axis of the stack
    anchor_block = stack[:, anchor]

    time_lags, time_moments = [], []
    for steps in lag_steps:
        i = int(np.argmin(np.abs(times - (t_anchor - steps * dt))))
        diff = np.take(anchor_block - stack[:, i], in_box, axis=space_axis - 1)
        time_lags.append(steps * dt)
        time_moments.append(float(np.mean(diff**2)))

    if space_lag_steps is None:
        space_lag_steps = [2**j for j in range(0, 8)]
    space_lags, space_moments = [], []
    for shift in space_lag_steps:
        rolled = np.roll(anchor_block, -int(shift), axis=space_axis - 1)
        diff = np.take(rolled - anchor_block, in_box, axis=space_axis - 1)
        space_lags.append(shift * grid.spacing)
        space_moments.append(float(np.mean(diff**2)))

    if len(time_lags) < 4 or len(space_lags) < 4:
        raise ValueError("need at least 4 temporal and 4 spatial lag points")
    if min(time_moments) <= 0.0 or min(space_moments) <= 0.0:
        raise ValueError("degenerate (zero) increments: exponent undefined")

    t_slope, t_err = _fit_slope(time_lags, time_moments)
    s_slope, s_err = _fit_slope(space_lags, space_moments)
    return HolderFit(
        temporal=t_slope / 2.0,
        spatial=s_slope / 2.0,
        temporal_stderr=t_err / 2.0,
        spatial_stderr=s_err / 2.0,
        time_lags=np.asarray(time_lags),
        time_moments=np.asarray(time_moments),
        space_lags=np.asarray(space_lags),
        space_moments=np.asarray(space_moments),
    )


def default_grid(k: int, dt: float | None = None) -> TorusGrid:
    """Desk-scale default lattice per spatial dimension."""
    if k == 1:
        L, M = 8.0, 512
    elif k == 2:
        L, M = 4.0, 128
    else:
        L, M = 4.0, 64
    if dt is None:
        h = L / M
        dt = h * h / 4.0
    return TorusGrid(k=k, length=L, points=M, dt=dt)
