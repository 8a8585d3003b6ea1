"""Hitting-probability and fractal-dimension experiments.

The experiments stream solver ensembles through an observer that watches
every step inside an observation rectangle, so nothing but summary state is
ever stored: per-replica minimum distances to target centers, step and site
increment statistics (for the mesh-modulus inflation), and optionally
occupied-box counts for range-dimension estimation.

Hit tests compare the recorded mesh against a continuum range, so targets
are inflated by an empirically fitted modulus of continuity of the recording
mesh; every report states the inflation used.  Estimates carry Wilson score
intervals; exponent fits are variance-weighted log-log regressions.  The
critical channel count ``(4 + 2k) / (2 - beta)`` is recomputed from the model
parameters wherever it is needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .potential import BoxCounter, CompactTarget, _fit_counts
from .solver import CHUNK_SIZE, SolverConfig, StepEngine, _chunked

__all__ = [
    "Rectangle",
    "AnisotropicGrid",
    "CriticalExponents",
    "ScanResult",
    "HitEstimate",
    "BallExponentFit",
    "PolarityRow",
    "RangeDimensionReport",
    "SandwichReport",
    "wilson_interval",
    "build_grid",
    "scan_ensemble",
    "mesh_inflation",
    "mc_hit_probability",
    "ball_exponent_fit",
    "polarity_scan",
    "range_dimension",
    "bound_sandwich",
]

#: exponent slack used in the mesh-modulus formula
MODULUS_DELTA = 0.05
#: default index slack for capacity / Hausdorff sandwich bounds
DEFAULT_ETA = 0.1


def wilson_interval(hits: int, n: int, z: float = 1.959964) -> tuple:
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise ValueError("need at least one trial")
    p = hits / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return (max(0.0, center - half), min(1.0, center + half))


@dataclass(frozen=True)
class Rectangle:
    """Closed observation rectangle I x J inside (0, T] x R^k."""

    t0: float
    t1: float
    box: tuple  # ((a1, b1), ..., (ak, bk))

    def __post_init__(self):
        if not (0 < self.t0 < self.t1):
            raise ValueError("need 0 < t0 < t1")
        box = tuple((float(a), float(b)) for a, b in self.box)
        if any(not b > a for a, b in box):
            raise ValueError("spatial box must be nondegenerate on every axis")
        object.__setattr__(self, "box", box)

    @property
    def k(self) -> int:
        return len(self.box)

    def time_span(self) -> float:
        return self.t1 - self.t0

    def as_pair(self):
        return (self.t0, self.t1), self.box


@dataclass(frozen=True)
class CriticalExponents:
    """Critical channel count and the slack parameters of the bounds."""

    k: int
    d: int
    beta: float
    eta: float = DEFAULT_ETA
    gamma: float | None = None

    def __post_init__(self):
        if self.gamma is None:
            object.__setattr__(self, "gamma", 0.9 * (2.0 - self.beta))
        if not (0 < self.gamma < 2.0 - self.beta):
            raise ValueError(f"gamma must lie in (0, {2.0 - self.beta})")
        if not self.eta > 0:
            raise ValueError("eta must be positive")

    @property
    def Q(self) -> float:
        """Critical dimension (4 + 2k) / (2 - beta), always recomputed."""
        return (4.0 + 2.0 * self.k) / (2.0 - self.beta)

    def regime(self) -> str:
        if self.d < self.Q:
            return "subcritical"
        if self.d > self.Q:
            return "supercritical"
        return "critical"


@dataclass(frozen=True)
class AnisotropicGrid:
    """Parabolic covering grid: time cells 2^(-4n/gamma), space cells 2^(-2n/gamma)."""

    rect: Rectangle
    n: int
    gamma: float
    beta: float

    def __post_init__(self):
        if not (0 < self.gamma < 2.0 - self.beta):
            raise ValueError(f"gamma must lie in (0, {2.0 - self.beta})")
        if self.n < 1:
            raise ValueError("refinement level n must be >= 1")

    @property
    def time_spacing(self) -> float:
        return 2.0 ** (-4.0 * self.n / self.gamma)

    @property
    def space_spacing(self) -> float:
        return 2.0 ** (-2.0 * self.n / self.gamma)

    @property
    def time_cells(self) -> int:
        return max(1, math.ceil(self.rect.time_span() / self.time_spacing - 1e-12))

    @property
    def space_cells_per_axis(self) -> tuple:
        return tuple(
            max(1, math.ceil((b - a) / self.space_spacing - 1e-12))
            for a, b in self.rect.box
        )

    def cell_count(self) -> int:
        total = self.time_cells
        for c in self.space_cells_per_axis:
            total *= c
        return total

    def count_bound(self) -> float:
        """Covering bound ``c 2^(n (4 + 2k) / gamma)`` with c the rect volume."""
        k = self.rect.k
        vol = self.rect.time_span()
        for a, b in self.rect.box:
            vol *= b - a
        return vol * 2.0 ** (self.n * (4.0 + 2.0 * k) / self.gamma)

    def cell(self, i: int, j) -> tuple:
        """Closed cell (time interval, space box), clipped to the rectangle."""
        j = np.atleast_1d(np.asarray(j, dtype=int))
        t_lo = self.rect.t0 + i * self.time_spacing
        t_hi = min(t_lo + self.time_spacing, self.rect.t1)
        box = tuple(
            (a + jj * self.space_spacing, min(a + (jj + 1) * self.space_spacing, b))
            for jj, (a, b) in zip(j, self.rect.box)
        )
        return (t_lo, t_hi), box


def build_grid(rect: Rectangle, n: int, gamma: float, params) -> AnisotropicGrid:
    return AnisotropicGrid(rect=rect, n=n, gamma=gamma, beta=params.beta)


# ---------------------------------------------------------------------------
# streaming ensemble scans


@dataclass
class ScanResult:
    """Summary of one streamed ensemble pass over an observation rectangle."""

    min_dist: np.ndarray          # (replicas, n_centers) distance of range to centers
    replicas: int
    n_centers: int
    observed_steps: int
    observed_sites: int
    rms_step_increment: float     # rms of |u_(n+1) - u_n| over the mesh (vector norm)
    rms_site_increment: float     # rms of one-site spatial increments
    box_counts: np.ndarray | None = None
    box_scales: tuple | None = None
    dt: float = 0.0
    spacing: float = 0.0
    beta: float = 0.0

    def inflation(self, delta: float = MODULUS_DELTA) -> float:
        return mesh_inflation(self)

    def modulus_coefficient(self, delta: float = MODULUS_DELTA) -> float:
        gauge = self.dt ** ((2.0 - self.beta) / 4.0 - delta) + self.spacing ** (
            (2.0 - self.beta) / 2.0 - delta
        )
        return mesh_inflation(self) / gauge


def mesh_inflation(scan: ScanResult) -> float:
    """Fitted mesh modulus: half the rms gap between adjacent mesh points."""
    return 0.5 * math.hypot(scan.rms_step_increment, scan.rms_site_increment)


class _RectObserver:
    """Accumulates hit distances and mesh-increment statistics step by step."""

    def __init__(self, cfg: SolverConfig, rect: Rectangle, centers: np.ndarray,
                 box_scales=None, image_subsample: int = 1):
        grid = cfg.grid
        self.d = cfg.model.d
        self.centers = np.atleast_2d(np.asarray(centers, dtype=float))
        if self.centers.shape[1] != self.d:
            raise ValueError(
                f"target centers have {self.centers.shape[1]} coordinates, "
                f"model has d={self.d}"
            )
        self.step_lo = int(math.ceil(rect.t0 / grid.dt - 1e-9))
        self.step_hi = int(math.floor(rect.t1 / grid.dt + 1e-9))
        if self.step_hi < self.step_lo or self.step_hi < 1:
            raise ValueError("rectangle contains no observable step times")
        coords = np.arange(grid.points) * grid.spacing
        masks = []
        for a, b in rect.box:
            masks.append((coords >= a - 1e-12) & (coords <= b + 1e-12))
        if not any(m.any() for m in masks):
            raise ValueError("rectangle contains no lattice sites")
        mask = masks[0]
        for m in masks[1:]:
            mask = np.logical_and.outer(mask, m)
        self.site_mask = mask
        self.n_sites = int(mask.sum())
        if self.n_sites == 0:
            raise ValueError("rectangle contains no lattice sites")
        self.min_sq = {}
        self.prev = {}
        self.sum_step_sq = 0.0
        self.n_step_incr = 0
        self.sum_site_sq = 0.0
        self.n_site_incr = 0
        self.counter = (
            BoxCounter(box_scales, self.d) if box_scales is not None else None
        )
        self.observed_steps = 0
        self._counted_steps = set()
        self.image_subsample = image_subsample

    def __call__(self, step_index, t, states, replicas):
        if step_index < self.step_lo or step_index > self.step_hi:
            return
        key = tuple(replicas)
        obs = states[:, :, self.site_mask]  # (d, R, S)
        if step_index not in self._counted_steps:
            self._counted_steps.add(step_index)
            self.observed_steps += 1
        d, R, S = obs.shape
        best = self.min_sq.get(key)
        if best is None:
            best = np.full((R, self.centers.shape[0]), np.inf)
            self.min_sq[key] = best
        for i, z in enumerate(self.centers):
            diff = obs - z[:, None, None]
            sq = np.einsum("crs,crs->rs", diff, diff)
            np.minimum(best[:, i], sq.min(axis=1), out=best[:, i])
        prev = self.prev.get(key)
        if prev is not None:
            inc = obs - prev
            self.sum_step_sq += float(np.einsum("crs,crs->", inc, inc))
            self.n_step_incr += R * S
        self.prev = {key: obs.copy()}
        # one-site spatial increments along the first lattice axis, subsampled
        if step_index % 16 == self.step_lo % 16:
            rolled = np.roll(states, -1, axis=2)
            sdiff = (rolled - states)[:, :, self.site_mask]
            self.sum_site_sq += float(np.einsum("crs,crs->", sdiff, sdiff))
            self.n_site_incr += R * S
        if self.counter is not None:
            pts = obs.reshape(d, R * S).T
            if self.image_subsample > 1:
                pts = pts[:: self.image_subsample]
            self.counter.add(pts)

    def result(self, cfg: SolverConfig, replica_order) -> ScanResult:
        blocks = []
        for chunk in _chunked(replica_order, CHUNK_SIZE):
            blocks.append(self.min_sq[tuple(chunk)])
        dist = np.sqrt(np.vstack(blocks))
        rms_step = math.sqrt(self.sum_step_sq / max(self.n_step_incr, 1))
        rms_site = math.sqrt(self.sum_site_sq / max(self.n_site_incr, 1))
        return ScanResult(
            min_dist=dist,
            replicas=dist.shape[0],
            n_centers=self.centers.shape[0],
            observed_steps=self.observed_steps,
            observed_sites=self.n_sites,
            rms_step_increment=rms_step,
            rms_site_increment=rms_site,
            box_counts=None if self.counter is None else self.counter.counts(),
            box_scales=None if self.counter is None else self.counter.scales,
            dt=cfg.grid.dt,
            spacing=cfg.grid.spacing,
            beta=cfg.model.beta,
        )


def scan_ensemble(cfg: SolverConfig, rect: Rectangle, centers,
                  box_scales=None, image_subsample: int = 1) -> ScanResult:
    """Run the configured ensemble, watching the rectangle at every step."""
    observer = _RectObserver(cfg, rect, centers, box_scales=box_scales,
                             image_subsample=image_subsample)
    engine = StepEngine(cfg)
    order = list(range(cfg.replicas))
    for chunk in _chunked(order, CHUNK_SIZE):
        engine.run_chunk(chunk, observer=observer)
    return observer.result(cfg, order)


# ---------------------------------------------------------------------------
# experiments


@dataclass
class HitEstimate:
    estimate: float
    interval: tuple
    hits: int
    replicas: int
    inflation: float
    target: CompactTarget = field(repr=False, default=None)


def _target_centers_radius(target: CompactTarget):
    if target.kind == "point":
        return np.atleast_2d(target.center), 0.0
    if target.kind == "ball":
        return np.atleast_2d(target.center), target.radius
    return target.points, target.cell_radius


def _hit_from_scan(scan: ScanResult, radius: float, inflation: float) -> tuple:
    dist = scan.min_dist.min(axis=1)  # nearest center per replica
    hits = int(np.count_nonzero(dist <= radius + inflation))
    return hits, scan.replicas


def mc_hit_probability(cfg: SolverConfig, rect: Rectangle, target: CompactTarget,
                       inflation: float | None = None,
                       scan: ScanResult | None = None) -> HitEstimate:
    """Monte Carlo probability that the observed range meets the target.

    The recorded range is inflated by the fitted mesh modulus (or the given
    ``inflation``); the estimate is the hitting fraction over replicas with
    a 95 percent Wilson interval.
    """
    if cfg.replicas < 1:
        raise ValueError("need at least one replica")
    centers, radius = _target_centers_radius(target)
    if scan is None:
        scan = scan_ensemble(cfg, rect, centers)
    if inflation is None:
        inflation = mesh_inflation(scan)
    hits, n = _hit_from_scan(scan, radius, inflation)
    return HitEstimate(
        estimate=hits / n,
        interval=wilson_interval(hits, n),
        hits=hits,
        replicas=n,
        inflation=inflation,
        target=target,
    )


@dataclass
class BallExponentFit:
    slope: float
    slope_ci: tuple
    eps: np.ndarray
    estimates: np.ndarray
    intervals: list
    inflation: float
    dropped_eps: list
    theory_floor: float
    warning: str | None = None


def ball_exponent_fit(cfg: SolverConfig, rect: Rectangle, z, eps_list,
                      exponents: CriticalExponents | None = None,
                      scan: ScanResult | None = None,
                      inflation: float | None = None) -> BallExponentFit:
    """Fit the decay exponent of ball-hitting probabilities in the radius.

    Requires the supercritical regime (d above the critical count), where
    the probability decays; zero-hit radii are dropped from the fit with a
    warning.  The fit is a variance-weighted regression of log estimate on
    log radius; the reported theory floor is d - Q - eta.
    """
    exponents = exponents or CriticalExponents(cfg.model.k, cfg.model.d, cfg.model.beta)
    if exponents.d <= exponents.Q:
        raise ValueError("ball-exponent fit needs d above the critical count")
    eps = np.sort(np.asarray(list(eps_list), dtype=float))[::-1]
    if eps.size < 4 or math.log10(eps.max() / eps.min()) < 0.75:
        raise ValueError("radius ladder needs >= 4 radii spanning >= 0.75 decades")
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if scan is None:
        scan = scan_ensemble(cfg, rect, z[None, :])
    if inflation is None:
        inflation = mesh_inflation(scan)
    dist = scan.min_dist.min(axis=1)
    n = scan.replicas
    rows, dropped, intervals = [], [], []
    for e in eps:
        hits = int(np.count_nonzero(dist <= e + inflation))
        intervals.append(wilson_interval(hits, n))
        if hits == 0:
            dropped.append(float(e))
        rows.append(hits / n)
    estimates = np.asarray(rows)
    keep = estimates > 0
    warning = None
    if dropped:
        warning = f"dropped zero-hit radii {dropped}"
    lx = np.log(eps[keep])
    p = estimates[keep]
    ly = np.log(p)
    if lx.size < 2:
        raise ValueError("fewer than two radii with hits; enlarge the ladder")
    var_log = (1.0 - p) / (n * p)  # delta-method variance of log p-hat
    wts = 1.0 / np.maximum(var_log, 1e-12)
    W = np.diag(wts)
    A = np.vstack([lx, np.ones_like(lx)]).T
    cov = np.linalg.inv(A.T @ W @ A)
    coef = cov @ (A.T @ W @ ly)
    slope = float(coef[0])
    err = math.sqrt(cov[0, 0])
    return BallExponentFit(
        slope=slope,
        slope_ci=(slope - 1.96 * err, slope + 1.96 * err),
        eps=eps,
        estimates=estimates,
        intervals=intervals,
        inflation=inflation,
        dropped_eps=dropped,
        theory_floor=exponents.d - exponents.Q - exponents.eta,
        warning=warning,
    )


@dataclass
class PolarityRow:
    d: int
    Q: float
    regime: str
    eps: float
    estimate: float
    interval: tuple
    hits: int
    replicas: int
    inflation: float


def polarity_scan(base_cfg: SolverConfig, rect: Rectangle, z, d_values,
                  eps: float, eps_ladder=None) -> list:
    """Hit estimates for a small ball across channel counts straddling Q.

    The master seed is shared, so runs at different d are coupled: the first
    channels of a wider system reuse the narrower system's noise.  The
    critical row (d equal to Q) is reported but never pass / failed.
    """
    rows = []
    z = np.atleast_1d(np.asarray(z, dtype=float))
    ladder = sorted(set([float(eps)] + [float(e) for e in (eps_ladder or [])]),
                    reverse=True)
    for d in d_values:
        model = replace(base_cfg.model, d=int(d))
        cfg = replace(base_cfg, model=model)
        zz = np.zeros(int(d))
        zz[: min(z.size, int(d))] = z[: min(z.size, int(d))]
        scan = scan_ensemble(cfg, rect, zz[None, :])
        inflation = mesh_inflation(scan)
        crit = CriticalExponents(cfg.model.k, int(d), cfg.model.beta)
        dist = scan.min_dist.min(axis=1)
        for e in ladder:
            hits = int(np.count_nonzero(dist <= e + inflation))
            rows.append(
                PolarityRow(
                    d=int(d), Q=crit.Q, regime=crit.regime(), eps=e,
                    estimate=hits / scan.replicas,
                    interval=wilson_interval(hits, scan.replicas),
                    hits=hits, replicas=scan.replicas, inflation=inflation,
                )
            )
    return rows


@dataclass
class RangeDimensionReport:
    dimension: float
    ci95: tuple
    r_squared: float
    scales: np.ndarray
    counts: np.ndarray
    theory: float
    samples: int
    note: str = (
        "box-counting dimension of the sampled range; surrogate for the "
        "Hausdorff dimension of the continuum range"
    )


def range_dimension(cfg: SolverConfig, rect: Rectangle, scales,
                    exponents: CriticalExponents | None = None,
                    image_subsample: int = 1) -> RangeDimensionReport:
    """Box-counting dimension of the pooled range over the rectangle.

    The range of the continuum field has Hausdorff dimension Q when the
    ambient dimension exceeds Q; the pooled lattice range is fed through the
    same box-counting machinery as :func:`potential.box_dimension`.
    """
    exponents = exponents or CriticalExponents(cfg.model.k, cfg.model.d, cfg.model.beta)
    if exponents.d <= exponents.Q:
        raise ValueError("range-dimension estimate needs d above the critical count")
    center = np.zeros(cfg.model.d)
    scan = scan_ensemble(cfg, rect, center[None, :], box_scales=scales,
                         image_subsample=image_subsample)
    fit = _fit_counts(scan.box_scales, scan.box_counts)
    samples = scan.observed_steps * scan.observed_sites * cfg.replicas
    return RangeDimensionReport(
        dimension=fit.dimension,
        ci95=fit.ci95,
        r_squared=fit.r_squared,
        scales=np.asarray(fit.scales),
        counts=np.asarray(fit.counts),
        theory=exponents.Q,
        samples=samples // max(image_subsample, 1),
    )


@dataclass
class SandwichReport:
    hit: HitEstimate
    capacity_index: float
    capacity_value: float
    capacity_gap: float
    hausdorff_index: float
    hausdorff_ladder: list
    fitted_lower_constant: float | None
    fitted_upper_constant: float | None
    lower_ok: bool
    upper_informative: bool
    Q: float
    eta: float


def bound_sandwich(cfg: SolverConfig, rect: Rectangle, target: CompactTarget,
                   eta: float = DEFAULT_ETA, eps_ladder=None,
                   scan: ScanResult | None = None,
                   capacity_resolution: int = 512) -> SandwichReport:
    """Monte Carlo hit estimate against its capacity and Hausdorff bounds.

    Computes the hit probability, the capacity of the target at index
    d - Q + eta, and the cover-sum upper estimates at index d - Q - eta.
    The recorded verdicts: positive capacity must come with a positive hit
    estimate, and a vanishing Hausdorff ladder flags the upper bound as
    informative (the hit estimates must decay as the target shrinks, which
    the radius ladder in the report exhibits).  The constants of both bounds
    are fitted, never assumed.
    """
    from .potential import OptimizerSettings, capacity, hausdorff_refinement

    crit = CriticalExponents(cfg.model.k, cfg.model.d, cfg.model.beta, eta=eta)
    hit = mc_hit_probability(cfg, rect, target, scan=scan)
    alpha_cap = cfg.model.d - crit.Q + eta
    alpha_haus = cfg.model.d - crit.Q - eta
    cap = capacity(target, alpha_cap,
                   opt=OptimizerSettings(resolution=capacity_resolution))
    ladder_eps = eps_ladder or [2.0 ** (-j) for j in range(1, 9)]
    ladder = hausdorff_refinement(target, alpha_haus, ladder_eps)
    h_tail = ladder[-1][1]
    lower_ok = (cap.value <= 0.0) or (hit.hits > 0)
    upper_informative = math.isfinite(h_tail) and h_tail < ladder[0][1] + 1e-12
    fitted_c = (hit.estimate / cap.value) if cap.value > 0 else None
    fitted_C = (hit.estimate / h_tail) if 0.0 < h_tail < math.inf else None
    return SandwichReport(
        hit=hit,
        capacity_index=alpha_cap,
        capacity_value=cap.value,
        capacity_gap=cap.duality_gap,
        hausdorff_index=alpha_haus,
        hausdorff_ladder=ladder,
        fitted_lower_constant=fitted_c,
        fitted_upper_constant=fitted_C,
        lower_ok=lower_ok,
        upper_informative=upper_informative,
        Q=crit.Q,
        eta=eta,
    )
