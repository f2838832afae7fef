"""Trajectory simulation, occupation statistics, and ergodic averages.

The driver advances all replicates in lockstep (vectorized over the
replicate axis) while every replicate consumes draws only from its own
stream, so results are bit-identical across runs and across any split of
replicates over worker threads.  Occupation fractions and functional
time-averages are accumulated streaming over the post-burn-in window;
standard errors come from 20 equal time batches per replicate, which keeps
them honest under autocorrelation.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .env import EnvSpec, make_stream
from .errors import ConfigurationError, NumericError
from .models import LOG_CAP, LOG_FLOOR, AffineChain, FaceModel, Model, Simplex

__all__ = [
    "N_BATCHES",
    "SimConfig",
    "ExtinctionNeighborhood",
    "OutsideBall",
    "Box",
    "Complement",
    "RateEstimate",
    "EmpiricalSummary",
    "PooledSummary",
    "SimulationResult",
    "Coordinate",
    "LogPerCapita",
    "Indicator",
    "LogNorm",
    "simulate",
    "ergodic_average",
    "ensemble_hit_probability",
    "auxiliary_affine_chain",
    "summary_rows",
]

N_BATCHES = 20
_CHUNK = 2048
_LINEAR_FLOOR = float(np.exp(LOG_FLOOR))


@dataclass(frozen=True)
class SimConfig:
    seed: int
    replicates: int = 1
    burn_in: int = 0
    horizon: int = 1000
    thinning: int = 100
    initial_state: object = "random_interior"
    eta_grid: tuple = ()
    bound_radius: object = None
    # Stream namespace: replicate r draws from (seed, replicate_base + r).
    # Nested estimators use disjoint bases so they never share a stream.
    replicate_base: int = 0

    def __post_init__(self):
        if self.replicates < 1:
            raise ConfigurationError("replicates must be positive")
        if self.horizon < 1:
            raise ConfigurationError("horizon must be positive")
        if not (0 <= self.burn_in < self.horizon):
            raise ConfigurationError("burn_in must satisfy 0 <= burn_in < horizon")
        if self.thinning < 1:
            raise ConfigurationError("thinning must be positive")
        for eta in self.eta_grid:
            if not eta > 0:
                raise ConfigurationError("eta_grid entries must be positive")
        if self.bound_radius is not None and not self.bound_radius > 0:
            raise ConfigurationError("bound_radius must be positive")

    def replaced(self, **kw) -> "SimConfig":
        d = {
            "seed": self.seed,
            "replicates": self.replicates,
            "burn_in": self.burn_in,
            "horizon": self.horizon,
            "thinning": self.thinning,
            "initial_state": self.initial_state,
            "eta_grid": self.eta_grid,
            "bound_radius": self.bound_radius,
            "replicate_base": self.replicate_base,
        }
        d.update(kw)
        return SimConfig(**d)


# ---------------------------------------------------------------------------
# Set descriptors


@dataclass(frozen=True)
class ExtinctionNeighborhood:
    """States within eta of the model's extinction set."""

    eta: float

    @property
    def name(self):
        return f"S_eta={self.eta:g}"

    def contains(self, x, model):
        return model.extinction.distance(x) <= self.eta


@dataclass(frozen=True)
class OutsideBall:
    """States outside the box [0, radius]^k (sup-norm ball in the orthant)."""

    radius: float

    @property
    def name(self):
        return f"outside_ball={self.radius:g}"

    def contains(self, x, model):
        return np.max(x, axis=-1) > self.radius


@dataclass(frozen=True)
class Box:
    """Product of closed per-coordinate intervals."""

    intervals: tuple

    @property
    def name(self):
        parts = ",".join(f"[{lo:g},{hi:g}]" for lo, hi in self.intervals)
        return f"box({parts})"

    def contains(self, x, model):
        ok = np.ones(x.shape[:-1], dtype=bool)
        for j, (lo, hi) in enumerate(self.intervals):
            ok &= (x[..., j] >= lo) & (x[..., j] <= hi)
        return ok


@dataclass(frozen=True)
class Complement:
    inner: object

    @property
    def name(self):
        return f"not[{self.inner.name}]"

    def contains(self, x, model):
        return ~self.inner.contains(x, model)


# ---------------------------------------------------------------------------
# Functionals


@dataclass(frozen=True)
class Coordinate:
    i: int

    kind = "state"

    @property
    def name(self):
        return f"coord_{self.i}"


@dataclass(frozen=True)
class Indicator:
    set_descriptor: object

    kind = "state"

    @property
    def name(self):
        return f"indicator[{self.set_descriptor.name}]"


@dataclass(frozen=True)
class LogPerCapita:
    i: int

    kind = "pair"

    @property
    def name(self):
        return f"log_percapita_{self.i}"


@dataclass(frozen=True)
class LogNorm:
    kind = "pair"

    @property
    def name(self):
        return "log_norm_growth"


# ---------------------------------------------------------------------------
# Results


@dataclass(frozen=True)
class RateEstimate:
    mean: float
    std_error: float
    batches: int
    n: int

    def to_dict(self):
        return {
            "mean": self.mean,
            "std_error": self.std_error,
            "batches": self.batches,
            "n": self.n,
        }


@dataclass
class EmpiricalSummary:
    occupation: dict
    functional_averages: dict
    thinned_samples: np.ndarray
    terminal_state: np.ndarray
    extinction_flag: bool
    divergence_flag: bool = False


@dataclass
class PooledSummary:
    occupation: dict
    functional_averages: dict
    extinct_fraction: float
    divergence_fraction: float = 0.0


@dataclass
class SimulationResult:
    replicates: list
    pooled: PooledSummary
    batch_means: dict = field(default_factory=dict, repr=False)


# ---------------------------------------------------------------------------
# Initial states


def _initial_states(model: Model, cfg: SimConfig, streams) -> np.ndarray:
    k = model.k
    r = len(streams)
    if isinstance(cfg.initial_state, str):
        if cfg.initial_state != "random_interior":
            raise ConfigurationError(f"unknown initial_state {cfg.initial_state!r}")
        support = getattr(model, "support", tuple(range(k)))
        x0 = np.zeros((r, k))
        for i, stream in enumerate(streams):
            u = stream.uniforms(k)
            if isinstance(model.state_space, Simplex):
                e = -np.log(u[list(support)])
                frac = e / e.sum()
                ks = len(support)
                x0[i, list(support)] = 0.01 + (1.0 - 0.01 * ks) * frac
            else:
                x0[i, list(support)] = 0.1 + 0.9 * u[list(support)]
        return x0
    x = np.asarray(cfg.initial_state, dtype=float)
    if x.shape != (k,):
        raise ConfigurationError(f"initial_state must have {k} coordinates")
    if np.any(x < 0):
        raise ConfigurationError("initial_state must be nonnegative")
    if isinstance(model.state_space, Simplex):
        if abs(x.sum() - 1.0) > 1e-9:
            raise ConfigurationError("simplex initial_state must sum to 1")
        x = x / x.sum()
    outside = getattr(model, "outside", ())
    if any(x[j] != 0.0 for j in outside):
        raise ConfigurationError("initial_state must vanish outside the face support")
    return np.tile(x, (r, 1))


# ---------------------------------------------------------------------------
# Core driver


def _batch_lengths(n_steps: int, n_batches: int) -> np.ndarray:
    # must agree exactly with the per-step index (rel * n_batches) // n_steps
    idx = (np.arange(n_steps) * n_batches) // n_steps
    return np.bincount(idx, minlength=n_batches)


def _drive_group(model, envspec, cfg, functionals, sets, rep_ids):
    """Advance one contiguous block of replicates in lockstep."""
    k = model.k
    m = model.env_dim
    t_total = cfg.horizon
    burn = cfg.burn_in
    n_steps = t_total - burn
    n_batches = min(N_BATCHES, n_steps)
    rg = len(rep_ids)
    streams = [make_stream(cfg.seed, cfg.replicate_base + rid) for rid in rep_ids]
    x = _initial_states(model, cfg, streams)

    mode = model.sim_mode
    alive0 = x > 0  # structural zeros are faces, never floor crossings
    if mode == "log_mult":
        with np.errstate(divide="ignore"):
            ell = np.log(x)
    elif mode == "affine":
        with np.errstate(divide="ignore"):
            ell = np.log(x[:, 0])

    state_fns = []
    pair_fns = []
    for f in functionals:
        if f.kind == "state":
            state_fns.append(f)
        else:
            pair_fns.append(f)
    if pair_fns and mode in ("linear", "affine"):
        if any(isinstance(f, LogPerCapita) for f in pair_fns):
            if not model.multiplicative:
                raise ConfigurationError(f"{model.name} has no per-capita growth factors")

    n_f = len(functionals)
    f_index = {f.name: i for i, f in enumerate(functionals)}
    occ_counts = np.zeros((rg, len(sets)), dtype=np.int64)
    fsums = np.zeros((rg, n_f, n_batches))
    n_thin = 0 if n_steps == 0 else 1 + (n_steps - 1) // cfg.thinning
    thinned = np.zeros((n_thin, rg, k))
    floored = np.zeros(rg, dtype=bool)
    frozen = np.zeros(rg, dtype=bool)

    t = 0
    while t < t_total:
        n = min(_CHUNK, t_total - t)
        u = np.empty((n, rg, m))
        for i, stream in enumerate(streams):
            u[:, i, :] = stream.uniforms(n * m).reshape(n, m)
        draws = envspec.transform(u)

        for s in range(n):
            step_t = t + s
            w = draws[s]

            if mode == "log_mult":
                x = np.exp(np.minimum(ell, LOG_CAP))
            elif mode == "affine":
                x = np.exp(np.minimum(ell, LOG_CAP))[:, None]

            measuring = step_t >= burn
            if measuring:
                rel = step_t - burn
                b = (rel * n_batches) // n_steps
                for j, sd in enumerate(sets):
                    occ_counts[:, j] += sd.contains(x, model)
                for f in state_fns:
                    if isinstance(f, Coordinate):
                        val = x[:, f.i]
                    else:
                        val = f.set_descriptor.contains(x, model).astype(float)
                    fsums[:, f_index[f.name], b] += val
                if rel % cfg.thinning == 0:
                    thinned[rel // cfg.thinning] = x

            # advance one step, collecting per-capita factors where cheap
            if mode == "log_mult":
                logf = model.log_percapita(x, w)
                ell_new = ell + logf
                dip = (ell_new < LOG_FLOOR) & alive0
                if dip.any():
                    ell_new[dip] = LOG_FLOOR
                    floored |= dip.any(axis=-1)
                if measuring and pair_fns:
                    for f in pair_fns:
                        if isinstance(f, LogPerCapita):
                            val = logf[:, f.i]
                        else:
                            val = logsumexp(ell_new, axis=-1) - logsumexp(ell, axis=-1)
                        fsums[:, f_index[f.name], b] += val
                ell = ell_new
            elif mode == "simplex":
                logf = model.log_percapita(x, w)
                x_new = x * np.exp(logf)
                x_new /= x_new.sum(axis=-1, keepdims=True)
                low = np.where(alive0, x_new, np.inf).min(axis=-1) < _LINEAR_FLOOR
                floored |= low
                if measuring and pair_fns:
                    for f in pair_fns:
                        if isinstance(f, LogPerCapita):
                            val = logf[:, f.i]
                        else:
                            val = np.zeros(rg)
                        fsums[:, f_index[f.name], b] += val
                x = x_new
            elif mode == "affine":
                la, lb = np.log(w[:, 0]), np.log(w[:, 1])
                ell_new = np.logaddexp(la + ell, lb)
                if measuring and pair_fns:
                    for f in pair_fns:
                        fsums[:, f_index[f.name], b] += ell_new - ell
                ell = ell_new
            else:
                x_new = model.step(x, w)
                crossed = (np.max(x_new, axis=-1) <= _LINEAR_FLOOR) & ~frozen
                if crossed.any():
                    floored |= crossed
                    frozen |= crossed
                    x_new[frozen] = x[frozen]
                if measuring and pair_fns:
                    tot_old = x.sum(axis=-1)
                    tot_new = x_new.sum(axis=-1)
                    with np.errstate(divide="ignore", invalid="ignore"):
                        g = np.log(tot_new) - np.log(tot_old)
                    for f in pair_fns:
                        fsums[:, f_index[f.name], b] += g
                x = x_new

        if mode in ("log_mult", "affine"):
            bad = np.isnan(ell) | (ell == np.inf)
        else:
            bad = ~np.isfinite(x)
        if bad.any():
            which = int(np.argwhere(bad.reshape(rg, -1).any(axis=-1))[0][0])
            raise NumericError(
                f"non-finite state for replicate {rep_ids[which]} "
                f"within steps {t}..{t + n - 1}",
                state=x[which] if mode not in ("log_mult", "affine") else None,
                step=t + n - 1,
            )
        t += n

    if mode == "log_mult":
        x = np.exp(np.minimum(ell, LOG_CAP))
    elif mode == "affine":
        x = np.exp(np.minimum(ell, LOG_CAP))[:, None]

    return {
        "occ_counts": occ_counts,
        "fsums": fsums,
        "thinned": thinned,
        "floored": floored,
        "terminal": x,
        "n_steps": n_steps,
        "n_batches": n_batches,
    }


def _drive(model, envspec, cfg, functionals, sets, n_threads=1):
    model.check_env(envspec)
    rep_ids = list(range(cfg.replicates))
    n_threads = max(1, min(int(n_threads), cfg.replicates))
    if n_threads == 1:
        parts = [_drive_group(model, envspec, cfg, functionals, sets, rep_ids)]
    else:
        bounds = np.linspace(0, cfg.replicates, n_threads + 1).astype(int)
        groups = [rep_ids[a:b] for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
        with ThreadPoolExecutor(max_workers=len(groups)) as pool:
            parts = list(
                pool.map(
                    lambda g: _drive_group(model, envspec, cfg, functionals, sets, g),
                    groups,
                )
            )
    out = parts[0]
    if len(parts) > 1:
        out = {
            "occ_counts": np.concatenate([p["occ_counts"] for p in parts]),
            "fsums": np.concatenate([p["fsums"] for p in parts]),
            "thinned": np.concatenate([p["thinned"] for p in parts], axis=1),
            "floored": np.concatenate([p["floored"] for p in parts]),
            "terminal": np.concatenate([p["terminal"] for p in parts]),
            "n_steps": parts[0]["n_steps"],
            "n_batches": parts[0]["n_batches"],
        }
    return out


def _rate_from_batches(batch_means: np.ndarray, n: int) -> RateEstimate:
    """Estimate from a flat array of equal-length batch means."""
    b = batch_means.size
    mean = float(batch_means.mean())
    if b < 2 or np.ptp(batch_means) == 0.0:
        # identical batches come from deterministic inputs; report SE 0
        # rather than the rounding residue of the variance formula
        return RateEstimate(mean, 0.0, b, n)
    se = float(np.sqrt(batch_means.var(ddof=1) / b))
    return RateEstimate(mean, se, b, n)


def _build_result(raw, functionals, sets) -> SimulationResult:
    n_steps = raw["n_steps"]
    n_batches = raw["n_batches"]
    lengths = _batch_lengths(n_steps, n_batches)
    occ = raw["occ_counts"] / n_steps
    # fsums holds batch sums; per-batch means weight each batch equally
    bmeans = raw["fsums"] / lengths[None, None, :]
    reps = []
    r_total = occ.shape[0]
    for r in range(r_total):
        fa = {}
        for j, f in enumerate(functionals):
            mean = float(raw["fsums"][r, j].sum() / n_steps)
            est = _rate_from_batches(bmeans[r, j], n_steps)
            fa[f.name] = RateEstimate(mean, est.std_error, n_batches, n_steps)
        reps.append(
            EmpiricalSummary(
                occupation={sd.name: float(occ[r, j]) for j, sd in enumerate(sets)},
                functional_averages=fa,
                thinned_samples=raw["thinned"][:, r, :].copy(),
                terminal_state=raw["terminal"][r].copy(),
                extinction_flag=bool(raw["floored"][r]),
            )
        )
    pooled_fa = {}
    for j, f in enumerate(functionals):
        mean = float(raw["fsums"][:, j, :].sum() / (n_steps * r_total))
        est = _rate_from_batches(bmeans[:, j, :].ravel(), n_steps * r_total)
        pooled_fa[f.name] = RateEstimate(mean, est.std_error, n_batches * r_total, n_steps * r_total)
    pooled = PooledSummary(
        occupation={sd.name: float(occ[:, j].mean()) for j, sd in enumerate(sets)},
        functional_averages=pooled_fa,
        extinct_fraction=float(raw["floored"].mean()),
    )
    return SimulationResult(
        replicates=reps,
        pooled=pooled,
        batch_means={f.name: bmeans[:, j, :].copy() for j, f in enumerate(functionals)},
    )


# ---------------------------------------------------------------------------
# Public operations


def default_sets(cfg: SimConfig) -> list:
    sets = [ExtinctionNeighborhood(eta) for eta in cfg.eta_grid]
    if cfg.bound_radius is not None:
        ball = OutsideBall(cfg.bound_radius)
        sets += [ball, Complement(ball)]
    return sets


def simulate(model, envspec, cfg, functionals=(), n_threads=1) -> SimulationResult:
    """Run replicate trajectories; summarize occupation over steps B..T-1.

    Results are a pure function of (model, env, cfg): replicate r draws only
    from stream (cfg.seed, r), and pooled statistics reduce over replicates
    in id order.
    """
    sets = default_sets(cfg)
    raw = _drive(model, envspec, cfg, tuple(functionals), sets, n_threads=n_threads)
    return _build_result(raw, tuple(functionals), sets)


def ergodic_average(model, envspec, cfg, functional, n_threads=1) -> RateEstimate:
    """Time average of one functional over the post-burn-in window."""
    if not isinstance(functional, (Coordinate, LogPerCapita, Indicator, LogNorm)):
        raise ConfigurationError(f"unsupported functional {functional!r}")
    if cfg.horizon - cfg.burn_in < 2:
        raise ConfigurationError("horizon too short for at least 2 batches")
    result = simulate(model, envspec, cfg, functionals=(functional,), n_threads=n_threads)
    return result.pooled.functional_averages[functional.name]


def ensemble_hit_probability(model, envspec, cfg, set_descriptor, t: int):
    """Fraction of replicates with X_t in the set, with binomial SE."""
    if not (1 <= t <= cfg.horizon):
        raise ConfigurationError("time index must satisfy 1 <= t <= horizon")
    probe = cfg.replaced(horizon=t, burn_in=0, eta_grid=(), bound_radius=None)
    raw = _drive(model, envspec, probe, (), ())
    inside = set_descriptor.contains(raw["terminal"], model)
    r_total = inside.size
    p_hat = float(inside.mean())
    se = float(np.sqrt(p_hat * (1.0 - p_hat) / r_total))
    return RateEstimate(p_hat, se, 1, r_total)


def auxiliary_affine_chain(alpha_dist, beta_dist, cfg, extra_sets=()) -> SimulationResult:
    """Simulate the dominating chain z' = alpha*z + beta in log space.

    The chain bounds any dynamics satisfying the corresponding drift
    inequality, so its occupation tail bounds the model's.  A replicate is
    flagged divergent when its running log-state batch means increase over
    10 or more consecutive windows.
    """
    envspec = EnvSpec((alpha_dist, beta_dist))
    model = AffineChain()
    sets = default_sets(cfg) + list(extra_sets)
    functionals = (LogNorm(),)
    raw = _drive(model, envspec, cfg, functionals, sets)
    result = _build_result(raw, functionals, sets)
    # Each batch mean of the growth increments telescopes to a difference of
    # log z at batch boundaries, so 10 consecutive positive batches mean the
    # running log state increased over 10 windows.  The tolerance ignores
    # the shrinking tail of a monotone approach to a fixed point.
    growth = result.batch_means["log_norm_growth"]
    for r, summary in enumerate(result.replicates):
        inc = growth[r] > 1e-12
        run = best = 0
        for flag in inc:
            run = run + 1 if flag else 0
            best = max(best, run)
        summary.divergence_flag = bool(best >= 10)
    result.pooled.divergence_fraction = float(
        np.mean([s.divergence_flag for s in result.replicates])
    )
    return result


def summary_rows(result: SimulationResult) -> list:
    """Flatten a simulation result for delimited output.

    Columns: replicate, set_name, occupation, functional, mean, std_error,
    extinct.  The pooled row uses replicate = "pooled".
    """
    rows = []

    def emit(tag, occupation, averages, extinct):
        for name in occupation:
            rows.append(
                {
                    "replicate": tag,
                    "set_name": name,
                    "occupation": occupation[name],
                    "functional": "",
                    "mean": "",
                    "std_error": "",
                    "extinct": extinct,
                }
            )
        for name, est in averages.items():
            rows.append(
                {
                    "replicate": tag,
                    "set_name": "",
                    "occupation": "",
                    "functional": name,
                    "mean": est.mean,
                    "std_error": est.std_error,
                    "extinct": extinct,
                }
            )

    for r, summary in enumerate(result.replicates):
        emit(
            str(r),
            summary.occupation,
            summary.functional_averages,
            int(summary.extinction_flag),
        )
    emit(
        "pooled",
        result.pooled.occupation,
        result.pooled.functional_averages,
        result.pooled.extinct_fraction,
    )
    return rows
