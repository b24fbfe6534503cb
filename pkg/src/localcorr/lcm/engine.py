"""Monte Carlo engine for the local correlation model.

Constituents follow their own local volatility dynamics; at every step
the correlation matrix is picked from a precomputed family table so that
the instantaneous basket variance matches the index local variance at
the current basket level.  Index vanillas are then repriced by
construction, up to time discretisation, table quantisation and
dispersion bound violations, all of which are surfaced in diagnostics.

Paths run in fixed-size blocks, each with its own counter-based random
substream, and block results are reduced in block order.  Prices are
therefore bit-identical for a given seed no matter how many worker
threads execute the blocks.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..corrfam import CholeskyTable, CorrelationFamily, build_table
from ..dupire import LocalVolSurface, calibrate_local_vol
from ..errors import BoundViolationError, EngineError, PricingError
from ..marketdata.snapshot import MarketSnapshot
from ..rng import substream
from .state import BoundsReport, check_dispersion_bounds, covariance_terms, solve_state

__all__ = [
    "SimulationConfig",
    "CalibratedMarket",
    "calibrate_market",
    "PayoffSpec",
    "PriceResult",
    "SimDiagnostics",
    "PathCube",
    "simulate",
    "price_european",
    "price",
    "average_correlation",
    "probe_bounds",
]

THREADS_ENV = "LOCALCORR_THREADS"

_PAYOFF_KINDS = (
    "index_call",
    "index_put",
    "asset_call",
    "asset_put",
    "worst_of_put",
    "best_of_call",
)


@dataclass(frozen=True)
class SimulationConfig:
    """Knobs of one engine run; everything that affects the draw is here.

    ``bounds_policy`` decides what a dispersion bound violation does:
    "clamp" pins the state to the table edge and counts it, "strict"
    aborts the run.  ``forced_state`` is a test hook fixing (u, kappa)
    for every step, bypassing the solver entirely.
    """

    n_paths: int = 100_000
    steps_per_year: int = 100
    seed: int = 0
    block_size: int = 4096
    n_threads: int | None = None
    table_states: int = 101
    table_shift: float | None = None
    u_max: float = 1e3
    lv_times: int = 64
    lv_spots: int = 161
    bounds_policy: str = "clamp"
    track_simplified: bool = False
    forced_state: tuple[float, int] | None = None

    def __post_init__(self):
        if self.n_paths < 1 or self.block_size < 1:
            raise EngineError("n_paths and block_size must be positive")
        if self.steps_per_year < 1:
            raise EngineError("steps_per_year must be positive")
        if self.bounds_policy not in ("clamp", "strict"):
            raise EngineError(f"unknown bounds policy {self.bounds_policy!r}")

    def resolve_threads(self) -> int:
        if self.n_threads is not None:
            return max(1, int(self.n_threads))
        env = os.environ.get(THREADS_ENV)
        if env:
            try:
                return max(1, int(env))
            except ValueError:
                raise EngineError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
        return 1


@dataclass(frozen=True)
class PayoffSpec:
    """European payoff on the terminal cross-section.

    Worst-of and best-of payoffs act on performances S_T / S_0, so their
    strikes are in performance units; index and single-asset payoffs use
    price-level strikes.
    """

    kind: str
    strike: float
    asset_id: str | None = None

    def __post_init__(self):
        if self.kind not in _PAYOFF_KINDS:
            raise PricingError(f"unknown payoff kind {self.kind!r}")
        if self.kind in ("asset_call", "asset_put") and not self.asset_id:
            raise PricingError("single-asset payoffs need an asset_id")
        if self.strike <= 0.0:
            raise PricingError("strike must be positive")

    def label(self) -> str:
        tag = f"{self.kind}[{self.asset_id}]" if self.asset_id else self.kind
        return f"{tag}@{self.strike:g}"


@dataclass(frozen=True)
class PriceResult:
    payoff: PayoffSpec
    price: float
    stderr: float
    n_paths: int
    df: float


# ----------------------------------------------------------------------
# calibration


@dataclass(eq=False)
class CalibratedMarket:
    """Everything precomputed once per (snapshot, family, horizon)."""

    snapshot: MarketSnapshot
    family: CorrelationFamily
    table: CholeskyTable
    horizon: float
    times: np.ndarray
    asset_ids: tuple
    weights: np.ndarray
    spots0: np.ndarray
    dlog_fwd: np.ndarray  # (n_steps, n) exact forward log increments
    local_vols: list[LocalVolSurface]
    index_local_vol: LocalVolSurface
    matrices: np.ndarray = field(init=False)
    chols: np.ndarray = field(init=False)
    offdiag_mean: np.ndarray = field(init=False)

    def __post_init__(self):
        self.matrices = self.table.matrices()
        self.chols = self.table.chols()
        n = self.weights.size
        if n > 1:
            mask = ~np.eye(n, dtype=bool)
            self.offdiag_mean = np.array([m[mask].mean() for m in self.matrices])
        else:
            self.offdiag_mean = np.zeros(self.table.n_states)

    @property
    def n_assets(self) -> int:
        return self.weights.size

    @property
    def n_steps(self) -> int:
        return self.times.size - 1

    def local_vol_row(self, t: float, ln_spots: np.ndarray) -> np.ndarray:
        """Constituent local vols at time ``t``, ln_spots of shape (p, n)."""
        out = np.empty_like(ln_spots)
        for i, lv in enumerate(self.local_vols):
            out[:, i] = np.interp(ln_spots[:, i], lv.log_spots, lv.time_slice(t))
        return out


def calibrate_market(
    snapshot: MarketSnapshot,
    family: CorrelationFamily,
    horizon: float,
    config: SimulationConfig | None = None,
) -> CalibratedMarket:
    """Build local vol tables, the step grid and the correlation table."""
    config = config or SimulationConfig()
    if horizon <= 0.0:
        raise EngineError("horizon must be positive")
    ids = tuple(snapshot.composition.ids)
    if family.n_assets != len(ids):
        raise EngineError(f"family has {family.n_assets} assets, composition has {len(ids)}")
    n_steps = max(1, int(np.ceil(config.steps_per_year * horizon)))
    times = np.linspace(0.0, horizon, n_steps + 1)
    weights = snapshot.weights
    spots0 = np.array([snapshot.asset(a).spot for a in ids])
    fwd_logs = np.empty((n_steps + 1, len(ids)))
    for j, a in enumerate(ids):
        fc = snapshot.forward_curve(a)
        fwd_logs[:, j] = [np.log(fc.forward(t)) for t in times]
    local_vols = [
        calibrate_local_vol(
            snapshot.call_surface(a), horizon,
            n_times=config.lv_times, n_spots=config.lv_spots,
        )
        for a in ids
    ]
    index_lv = calibrate_local_vol(
        snapshot.call_surface(snapshot.index.asset_id), horizon,
        n_times=config.lv_times, n_spots=config.lv_spots,
    )
    table = build_table(family, states=config.table_states, shift=config.table_shift)
    return CalibratedMarket(
        snapshot=snapshot,
        family=family,
        table=table,
        horizon=float(horizon),
        times=times,
        asset_ids=ids,
        weights=weights,
        spots0=spots0,
        dlog_fwd=np.diff(fwd_logs, axis=0),
        local_vols=local_vols,
        index_local_vol=index_lv,
    )


# ----------------------------------------------------------------------
# diagnostics


class _BlockStats:
    """Mutable per-block accumulators; merged in block order."""

    __slots__ = (
        "n_solved", "kappa_up", "viol_high", "viol_low", "clamped",
        "mismatch_sum", "simplified_sum", "simplified_n", "state_counts",
    )

    def __init__(self, n_states: int):
        self.n_solved = 0
        self.kappa_up = 0
        self.viol_high = 0
        self.viol_low = 0
        self.clamped = 0
        self.mismatch_sum = 0.0
        self.simplified_sum = 0.0
        self.simplified_n = 0
        self.state_counts = np.zeros(n_states, dtype=np.int64)

    def merge(self, other: "_BlockStats"):
        self.n_solved += other.n_solved
        self.kappa_up += other.kappa_up
        self.viol_high += other.viol_high
        self.viol_low += other.viol_low
        self.clamped += other.clamped
        self.mismatch_sum += other.mismatch_sum
        self.simplified_sum += other.simplified_sum
        self.simplified_n += other.simplified_n
        self.state_counts += other.state_counts


@dataclass(frozen=True)
class SimDiagnostics:
    """Aggregated health indicators of one simulation run."""

    n_paths: int
    n_steps: int
    n_solved: int
    kappa_up_fraction: float
    violation_high_fraction: float
    violation_low_fraction: float
    clamped_fraction: float
    quantization_mismatch: float  # mean relative gap, solved target vs table matrix
    simplified_state_gap: float  # mean |u - shortcut u| on the lowering branch
    mean_correlation: float  # state-occupancy weighted mean pairwise level
    state_counts: np.ndarray

    @property
    def violation_fraction(self) -> float:
        return self.violation_high_fraction + self.violation_low_fraction

    def as_dict(self) -> dict:
        return {
            "n_paths": self.n_paths,
            "n_steps": self.n_steps,
            "kappa_up_fraction": self.kappa_up_fraction,
            "violation_high_fraction": self.violation_high_fraction,
            "violation_low_fraction": self.violation_low_fraction,
            "clamped_fraction": self.clamped_fraction,
            "quantization_mismatch": self.quantization_mismatch,
            "simplified_state_gap": self.simplified_state_gap,
            "mean_correlation": self.mean_correlation,
        }


def _finalize_diag(stats: _BlockStats, market: CalibratedMarket, n_paths: int) -> SimDiagnostics:
    n = max(stats.n_solved, 1)
    occupancy = stats.state_counts.sum()
    mean_corr = (
        float(np.dot(stats.state_counts, market.offdiag_mean) / occupancy) if occupancy else 0.0
    )
    return SimDiagnostics(
        n_paths=n_paths,
        n_steps=market.n_steps,
        n_solved=stats.n_solved,
        kappa_up_fraction=stats.kappa_up / n,
        violation_high_fraction=stats.viol_high / n,
        violation_low_fraction=stats.viol_low / n,
        clamped_fraction=stats.clamped / n,
        quantization_mismatch=stats.mismatch_sum / n,
        simplified_state_gap=(
            stats.simplified_sum / stats.simplified_n if stats.simplified_n else 0.0
        ),
        mean_correlation=mean_corr,
        state_counts=stats.state_counts.copy(),
    )


# ----------------------------------------------------------------------
# the core block loop


def _run_block(
    market: CalibratedMarket,
    config: SimulationConfig,
    block_index: int,
    n_block: int,
    slice_steps: list[int],
):
    """Advance one block of paths; returns slices, state records and stats.

    ``slice_steps`` are step indices at which the asset cross-section and
    the solved state are recorded.  The state stored for a date is the
    one in force on the step starting there (the last step's state for
    the terminal date).
    """
    rng = substream(config.seed, block_index)
    n = market.n_assets
    n_steps = market.n_steps
    weights = market.weights
    table = market.table
    stats = _BlockStats(table.n_states)
    ln_s = np.tile(np.log(market.spots0), (n_block, 1))
    slice_pos = {step: j for j, step in enumerate(slice_steps)}
    spot_rec = np.empty((len(slice_steps), n_block, n))
    state_rec = np.zeros((len(slice_steps), n_block))
    clamp_rec = np.zeros((len(slice_steps), n_block), dtype=bool)
    viol_rec = np.zeros((len(slice_steps), n_block), dtype=bool)
    moff_sum = np.zeros(n_block)

    forced_idx = None
    if config.forced_state is not None:
        u0, k0 = config.forced_state
        forced_idx = table.lookup_index(float(u0), int(k0))
        forced_signed = float(u0) if int(k0) == 1 else -float(u0)

    def record_state(j, signed, clamped, violated):
        state_rec[j] = signed
        clamp_rec[j] = clamped
        viol_rec[j] = violated

    for k in range(n_steps):
        t = float(market.times[k])
        dt = float(market.times[k + 1] - market.times[k])
        if k in slice_pos:
            spot_rec[slice_pos[k]] = np.exp(ln_s)
        s = np.exp(ln_s)
        vols = market.local_vol_row(t, ln_s)

        state_slots = [slice_pos[step] for step in (k, n_steps) if step in slice_pos and (
            step == k or k == n_steps - 1)]
        if forced_idx is not None:
            idx = np.full(n_block, forced_idx, dtype=np.int64)
            for j in state_slots:
                record_state(j, forced_signed, False, False)
        else:
            basket = s @ weights
            sigma_b = np.interp(
                np.log(basket), market.index_local_vol.log_spots,
                market.index_local_vol.time_slice(t),
            )
            terms = covariance_terms(s, vols, weights, sigma_b, market.family)
            sol = solve_state(
                terms, market.family,
                u_max=config.u_max, track_simplified=config.track_simplified,
            )
            violated = sol.violated_high | sol.violated_low
            if config.bounds_policy == "strict" and sol.n_violations:
                raise BoundViolationError(
                    f"{sol.n_violations} dispersion bound violations at t = {t:.4f}"
                )
            idx = table.lookup_index(sol.u, sol.kappa)
            signed = sol.signed
            clamped = np.abs(signed) > table.max_state + 0.5 * table.shift
            for j in state_slots:
                record_state(j, signed, clamped, violated)
            stats.n_solved += n_block
            stats.kappa_up += int(np.count_nonzero(sol.kappa))
            stats.viol_high += int(np.count_nonzero(sol.violated_high))
            stats.viol_low += int(np.count_nonzero(sol.violated_low))
            stats.clamped += int(np.count_nonzero(clamped))
            if sol.simplified_u is not None:
                gaps = np.abs(sol.u - sol.simplified_u)
                good = np.isfinite(gaps)
                stats.simplified_sum += float(gaps[good].sum())
                stats.simplified_n += int(np.count_nonzero(good))
            stats.state_counts += np.bincount(idx, minlength=table.n_states)

        moff_sum += market.offdiag_mean[idx]
        z = rng.standard_normal((n_block, n))
        zc = np.empty_like(z)
        for val in np.unique(idx):
            rows = idx == val
            zc[rows] = z[rows] @ market.chols[val].T
            if forced_idx is None:
                sub = terms.a[rows]
                achieved = np.einsum("pi,pi->p", sub @ market.matrices[val], sub)
                stats.mismatch_sum += float(
                    np.abs(achieved / np.maximum(terms.target[rows], 1e-300) - 1.0).sum()
                )
        ln_s += market.dlog_fwd[k][None, :] - 0.5 * np.square(vols) * dt
        ln_s += np.sqrt(dt) * vols * zc

    if n_steps in slice_pos:
        spot_rec[slice_pos[n_steps]] = np.exp(ln_s)
    return spot_rec, state_rec, clamp_rec, viol_rec, moff_sum, stats


def _block_plan(config: SimulationConfig) -> list[int]:
    n_blocks = -(-config.n_paths // config.block_size)
    sizes = [config.block_size] * n_blocks
    sizes[-1] = config.n_paths - config.block_size * (n_blocks - 1)
    return sizes


def _map_blocks(worker, n_blocks: int, threads: int):
    if threads == 1:
        return [worker(b) for b in range(n_blocks)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return [f.result() for f in [pool.submit(worker, b) for b in range(n_blocks)]]


# ----------------------------------------------------------------------
# public entry points


@dataclass(frozen=True)
class PathCube:
    """Simulated cross-sections at the recorded dates with state records.

    ``values`` is (n_paths, n_assets, n_dates).  ``state`` holds the
    signed correlation state in force on the step starting at each date
    (for the terminal date, the last step's state); ``clamped`` and
    ``violated`` flag table clamping and dispersion bound violations of
    that same step.
    """

    asset_ids: tuple
    weights: np.ndarray
    spots0: np.ndarray
    dates: tuple
    values: np.ndarray
    state: np.ndarray  # (n_paths, n_dates) signed
    clamped: np.ndarray
    violated: np.ndarray
    path_mean_correlation: np.ndarray  # (n_paths,) trajectory average
    diagnostics: SimDiagnostics

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    def basket(self, date_index: int = -1) -> np.ndarray:
        return self.values[:, :, date_index] @ self.weights


def _snap_slice_steps(market: CalibratedMarket, dates) -> tuple[list[int], list[float]]:
    steps, snapped = [], []
    for t in dates:
        k = int(np.argmin(np.abs(market.times - t)))
        if k not in steps:
            steps.append(k)
            snapped.append(float(market.times[k]))
    order = np.argsort(steps)
    return [steps[i] for i in order], [snapped[i] for i in order]


def simulate(
    market: CalibratedMarket,
    config: SimulationConfig | None = None,
    *,
    dates=None,
) -> PathCube:
    """Run all paths, recording the cross-section at the given dates.

    Dates snap to the nearest step boundary; the default records only
    the horizon.  Memory is paths x assets x dates, so keep the date
    list short for large runs and use :func:`price_european` when only
    terminal payoffs matter.
    """
    config = config or SimulationConfig()
    slice_steps, snapped = _snap_slice_steps(market, dates if dates is not None else [market.horizon])
    sizes = _block_plan(config)
    results = _map_blocks(
        lambda b: _run_block(market, config, b, sizes[b], slice_steps),
        len(sizes), config.resolve_threads(),
    )
    stats = _BlockStats(market.table.n_states)
    for r in results:
        stats.merge(r[5])
    values = np.concatenate([r[0] for r in results], axis=1)  # (dates, paths, assets)
    state = np.concatenate([r[1] for r in results], axis=1)
    clamped = np.concatenate([r[2] for r in results], axis=1)
    violated = np.concatenate([r[3] for r in results], axis=1)
    moff = np.concatenate([r[4] for r in results])
    return PathCube(
        asset_ids=market.asset_ids,
        weights=market.weights,
        spots0=market.spots0,
        dates=tuple(snapped),
        values=np.moveaxis(values, 0, 2),
        state=state.T,
        clamped=clamped.T,
        violated=violated.T,
        path_mean_correlation=moff / market.n_steps,
        diagnostics=_finalize_diag(stats, market, config.n_paths),
    )


def _payoff_values(spec: PayoffSpec, spots: np.ndarray, market: CalibratedMarket) -> np.ndarray:
    k = spec.strike
    if spec.kind in ("index_call", "index_put"):
        level = spots @ market.weights
        gap = level - k if spec.kind == "index_call" else k - level
        return np.maximum(gap, 0.0)
    if spec.kind in ("asset_call", "asset_put"):
        try:
            col = market.asset_ids.index(spec.asset_id)
        except ValueError:
            raise PricingError(f"payoff references unknown asset {spec.asset_id!r}") from None
        level = spots[:, col]
        gap = level - k if spec.kind == "asset_call" else k - level
        return np.maximum(gap, 0.0)
    perf = spots / market.spots0[None, :]
    if spec.kind == "worst_of_put":
        return np.maximum(k - perf.min(axis=1), 0.0)
    return np.maximum(perf.max(axis=1) - k, 0.0)


def price_european(
    market: CalibratedMarket,
    payoffs: list[PayoffSpec],
    config: SimulationConfig | None = None,
) -> tuple[list[PriceResult], SimDiagnostics]:
    """Price European payoffs at the calibration horizon, streaming blocks.

    Per-block payoff sums are reduced in block order, so results do not
    depend on the thread count.
    """
    config = config or SimulationConfig()
    if not payoffs:
        raise PricingError("no payoffs given")
    sizes = _block_plan(config)
    n_pay = len(payoffs)

    def worker(b: int):
        spot_rec, _, _, _, _, stats = _run_block(market, config, b, sizes[b], [market.n_steps])
        spots = spot_rec[0]
        sums = np.empty(n_pay)
        sumsq = np.empty(n_pay)
        for j, spec in enumerate(payoffs):
            vals = _payoff_values(spec, spots, market)
            sums[j] = vals.sum()
            sumsq[j] = np.square(vals).sum()
        return sums, sumsq, stats

    outcomes = _map_blocks(worker, len(sizes), config.resolve_threads())
    agg = _BlockStats(market.table.n_states)
    total = np.zeros(n_pay)
    total_sq = np.zeros(n_pay)
    for sums, sumsq, stats in outcomes:
        total += sums
        total_sq += sumsq
        agg.merge(stats)
    n_paths = config.n_paths
    df = market.snapshot.discount_curve.discount(market.horizon)
    results = []
    for j, spec in enumerate(payoffs):
        mean = total[j] / n_paths
        var = max(total_sq[j] / n_paths - mean * mean, 0.0)
        results.append(
            PriceResult(
                payoff=spec,
                price=float(df * mean),
                stderr=float(df * np.sqrt(var / n_paths)),
                n_paths=n_paths,
                df=float(df),
            )
        )
    return results, _finalize_diag(agg, market, n_paths)


def price(
    snapshot: MarketSnapshot,
    family: CorrelationFamily,
    payoffs: list[PayoffSpec],
    horizon: float,
    config: SimulationConfig | None = None,
) -> tuple[list[PriceResult], SimDiagnostics]:
    """Calibrate and price in one call."""
    config = config or SimulationConfig()
    market = calibrate_market(snapshot, family, horizon, config)
    return price_european(market, payoffs, config)


# ----------------------------------------------------------------------
# diagnostics on simulated cubes


def average_correlation(
    cube: PathCube,
    strike: float | None = None,
    kind: str | None = None,
) -> float:
    """Average pairwise correlation along the paths, in percent.

    Unconditional when ``strike`` is None.  With a strike (in terms of
    the initial basket level), paths are weighted by the indicator of
    finishing in the money: a put below the money, a call above, unless
    ``kind`` ("put" or "call") overrides that convention.
    """
    per_path = cube.path_mean_correlation
    if strike is None:
        return float(per_path.mean() * 100.0)
    basket0 = float(cube.spots0 @ cube.weights)
    terminal = cube.basket(-1)
    if kind is None:
        kind = "put" if strike <= 1.0 else "call"
    if kind not in ("put", "call"):
        raise PricingError(f"unknown conditioning kind {kind!r}")
    level = strike * basket0
    in_money = terminal < level if kind == "put" else terminal > level
    count = int(np.count_nonzero(in_money))
    if count == 0:
        return float("nan")
    return float(per_path[in_money].mean() * 100.0)


def probe_bounds(
    market: CalibratedMarket,
    *,
    moneyness=None,
    times=None,
) -> BoundsReport:
    """Dispersion bound check along deterministic homothetic rays.

    Scales every constituent to m times its forward at a grid of times
    and tests whether the index local variance target stays inside the
    reachable covariance band.  A cheap preflight before long runs; the
    per-step violation fraction in simulation diagnostics is the
    authoritative in-sample measure.
    """
    if moneyness is None:
        moneyness = np.linspace(0.5, 1.5, 21)
    moneyness = np.asarray(moneyness, dtype=float)
    if times is None:
        times = np.linspace(market.horizon / 20.0, market.horizon, 20)
    reports = []
    weights = market.weights
    for t in np.asarray(times, dtype=float):
        fwds = np.array([
            market.snapshot.forward_curve(a).forward(float(t)) for a in market.asset_ids
        ])
        spots = moneyness[:, None] * fwds[None, :]
        ln_spots = np.log(spots)
        vols = market.local_vol_row(float(t), ln_spots)
        basket = spots @ weights
        sigma_b = np.interp(
            np.log(basket), market.index_local_vol.log_spots,
            market.index_local_vol.time_slice(float(t)),
        )
        terms = covariance_terms(spots, vols, weights, sigma_b, market.family)
        reports.append(check_dispersion_bounds(terms))
    return BoundsReport(
        n_checked=sum(r.n_checked for r in reports),
        n_low=sum(r.n_low for r in reports),
        n_high=sum(r.n_high for r in reports),
        worst_low=max(r.worst_low for r in reports),
        worst_high=max(r.worst_high for r in reports),
    )
