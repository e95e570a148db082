"""Particle systems on d-dimensional tori.

Two dynamics share the lattice scaffolding here. Instantaneously
coalescing random walks merge particles the moment one jumps onto an
occupied site. The multiple-merger variant instead lets co-located
particles run the jump chain of a finite measure on [0, 1] between walk
events, so mergers of more than two particles happen at a site whenever
the measure allows them.

Both engines are event-driven: nothing is discretized, every holding
time is exponential in the current total rate, and the density series
is read off at a logarithmic time grid.
"""

from __future__ import annotations

import dataclasses
import json
import math
from collections.abc import Iterable, Sequence

import numpy as np
from scipy import integrate, special, stats

from . import lambda_coalescent as lc
from .numerics import GofReport
from .partitions import Partition

__all__ = [
    "TorusConfig",
    "ParticleState",
    "DensitySeries",
    "SpatialPath",
    "log_star",
    "nonreturn_probability",
    "simulate_crw",
    "simulate_spatial_lambda",
    "descent_hitting_time",
    "descent_time_bound",
    "origin_escape_count",
    "arratia_dispersion_test",
]


def log_star(x: float) -> int:
    """Number of times the natural log must be iterated to drop below 1.

    Grows absurdly slowly: any astronomically large input gives a single
    digit. Inputs at or below 1 need no iterations at all.
    """
    if math.isnan(x):
        raise ValueError("log* of nan")
    count = 0
    while x > 1.0:
        x = math.log(x)
        count += 1
    return count


_NONRETURN_CACHE: dict[int, float] = {}


def nonreturn_probability(d: int) -> float:
    """Probability that simple random walk on Z^d never revisits its start.

    Zero in the recurrent dimensions one and two. For d = 3 the expected
    number of visits to the origin is the lattice Green function
    G = (2 pi)^{-3} int dk / (1 - phi(k)) with phi the jump transform,
    and the escape probability is 1/G. The integral is evaluated
    numerically once and cached.
    """
    if d not in (1, 2, 3):
        raise ValueError("dimension must be 1, 2, or 3")
    if d <= 2:
        return 0.0
    if d not in _NONRETURN_CACHE:
        # Writing 1/(1 - phi(k)) = int_0^inf exp(-s (1 - phi(k))) ds and
        # integrating over the momentum torus first turns the Green
        # function into a one-dimensional Bessel integral: the factor
        # exp(-s) cancels against the scaled-Bessel normalization, so the
        # integrand is exactly i0e(s/3)^3, decaying like s^{-3/2}.
        def head(s: float) -> float:
            return float(special.i0e(s / 3.0)) ** 3

        def tail(u: float) -> float:
            # substitution s = u^{-2} flattens the power tail
            return 2.0 * head(u**-2.0) * u**-3.0

        split = 200.0
        g1, _ = integrate.quad(head, 0.0, split, epsabs=1e-12, epsrel=1e-12)
        g2, _ = integrate.quad(
            tail, 0.0, split**-0.5, epsabs=1e-12, epsrel=1e-12
        )
        _NONRETURN_CACHE[d] = 1.0 / (g1 + g2)
    return _NONRETURN_CACHE[d]


@dataclasses.dataclass(frozen=True)
class TorusConfig:
    """Torus geometry plus the per-particle jump rate.

    ``L`` of 1 collapses the torus to a single site, which turns walk
    events into no-ops; a zero ``walk_rate`` freezes the particles in
    place. Both degenerate cases are allowed because they reduce the
    spatial dynamics to the well-understood non-spatial ones.
    """

    d: int
    L: int
    walk_rate: float = 1.0

    def __post_init__(self) -> None:
        if self.d not in (1, 2, 3):
            raise ValueError("dimension must be 1, 2, or 3")
        if self.L < 1 or self.L != int(self.L):
            raise ValueError("side length must be a positive integer")
        if self.walk_rate < 0.0:
            raise ValueError("walk rate cannot be negative")

    @property
    def n_sites(self) -> int:
        return self.L**self.d

    @property
    def gamma_d(self) -> float:
        return nonreturn_probability(self.d)

    def coords(self, site: int) -> tuple[int, ...]:
        out = []
        for _ in range(self.d):
            site, c = divmod(site, self.L)
            out.append(c)
        return tuple(out)

    def site_of(self, coords: Sequence[int]) -> int:
        if len(coords) != self.d:
            raise ValueError("coordinate arity does not match dimension")
        flat = 0
        for c in reversed(coords):
            flat = flat * self.L + int(c) % self.L
        return flat


@dataclasses.dataclass(frozen=True)
class ParticleState:
    """Snapshot of the surviving particles and the sample they carry.

    ``positions`` maps a particle id to a flat site index; ``blocks``
    maps the same id to the sorted tuple of initial-sample members that
    have merged into it. A merged pair keeps a single id, so the block
    map is a partition of the initial sample.
    """

    config: TorusConfig
    time: float
    positions: dict[int, int]
    blocks: dict[int, tuple[int, ...]]

    def __post_init__(self) -> None:
        if set(self.positions) != set(self.blocks):
            raise ValueError("positions and blocks must carry the same ids")
        n_sites = self.config.n_sites
        for site in self.positions.values():
            if not 0 <= site < n_sites:
                raise ValueError(f"site {site} outside the torus")
        members: list[int] = []
        for block in self.blocks.values():
            if not block:
                raise ValueError("empty block")
            members.extend(block)
        if len(set(members)) != len(members):
            raise ValueError("blocks overlap")

    @property
    def n_particles(self) -> int:
        return len(self.positions)

    @property
    def sample_size(self) -> int:
        return sum(len(b) for b in self.blocks.values())

    def partition(self) -> Partition:
        blocks = sorted(self.blocks.values(), key=min)
        return Partition(n=self.sample_size, blocks=tuple(blocks))

    def to_json(self) -> str:
        payload = {
            "d": self.config.d,
            "L": self.config.L,
            "walk_rate": self.config.walk_rate,
            "t": self.time,
            "positions": {
                str(i): list(self.config.coords(s))
                for i, s in sorted(self.positions.items())
            },
            "blocks": {
                str(i): list(b) for i, b in sorted(self.blocks.items())
            },
        }
        return json.dumps(payload, sort_keys=True)


@dataclasses.dataclass(frozen=True)
class DensitySeries:
    """Particle counts read off a time grid, with the implied density."""

    config: TorusConfig
    times: np.ndarray
    counts: np.ndarray

    def __post_init__(self) -> None:
        if self.times.shape != self.counts.shape:
            raise ValueError("times and counts must align")
        if self.times.size == 0:
            raise ValueError("empty series")
        if np.any(np.diff(self.times) < 0):
            raise ValueError("times must be nondecreasing")
        if np.any(np.diff(self.counts) > 0):
            raise ValueError("particle count must be nonincreasing")

    @property
    def density(self) -> np.ndarray:
        return self.counts / self.config.n_sites

    def to_csv(self) -> str:
        lines = ["t,particle_count,density"]
        dens = self.density
        for t, c, p in zip(self.times, self.counts, dens):
            lines.append("%.10g,%d,%.10g" % (t, int(c), p))
        return "\n".join(lines) + "\n"


@dataclasses.dataclass(frozen=True)
class SpatialPath:
    """Density series plus the final particle configuration."""

    series: DensitySeries
    final: ParticleState


class _UniformBuffer:
    """Serves scalar uniforms from batched generator draws."""

    __slots__ = ("rng", "block", "buf", "i")

    def __init__(self, rng: np.random.Generator, block: int = 16384) -> None:
        self.rng = rng
        self.block = block
        self.buf = rng.random(block)
        self.i = 0

    def next(self) -> float:
        i = self.i
        if i == self.block:
            self.buf = self.rng.random(self.block)
            i = 0
        self.i = i + 1
        return self.buf[i]


def _time_grid(horizon: float, points: int) -> np.ndarray:
    """Zero, then logarithmically spaced instants up to the horizon."""
    if points < 2:
        raise ValueError("need at least two grid points")
    grid = np.geomspace(horizon * 1e-3, horizon, points - 1)
    grid[-1] = horizon
    return np.concatenate([[0.0], grid])


def _normalize_initial(
    cfg: TorusConfig, initial: str | Iterable
) -> list[int]:
    if isinstance(initial, str):
        if initial != "full":
            raise ValueError("string initial condition must be 'full'")
        return list(range(cfg.n_sites))
    sites = []
    for item in initial:
        if isinstance(item, (tuple, list)):
            sites.append(cfg.site_of(item))
        else:
            site = int(item)
            if not 0 <= site < cfg.n_sites:
                raise ValueError(f"site {site} outside the torus")
            sites.append(site)
    if not sites:
        raise ValueError("no particles in the initial condition")
    return sites


def simulate_crw(
    cfg: TorusConfig,
    initial: str | Iterable,
    horizon: float,
    rng: np.random.Generator,
    grid_points: int = 41,
) -> tuple[DensitySeries, ParticleState]:
    """Instantaneously coalescing random walks up to a fixed horizon.

    ``initial`` is either the string "full" (one particle per site) or a
    list of sites, given flat or as coordinate tuples. Particles placed
    on the same site coalesce at time zero. Each survivor jumps to a
    uniform neighbour at the walk rate, and a jump onto an occupied site
    merges the jumper into the sitter.

    Returns the count/density series on a logarithmic time grid and the
    final configuration.
    """
    if horizon <= 0.0:
        raise ValueError("horizon must be positive")
    start = _normalize_initial(cfg, initial)
    grid = _time_grid(horizon, grid_points)

    positions: dict[int, int] = {}
    blocks: dict[int, list[int]] = {}
    occupant: dict[int, int] = {}
    for pid, site in enumerate(start):
        if site in occupant:
            blocks[occupant[site]].append(pid)
        else:
            occupant[site] = pid
            positions[pid] = site
            blocks[pid] = [pid]

    live = list(positions)
    slot = {pid: k for k, pid in enumerate(live)}
    powers = [cfg.L**a for a in range(cfg.d)]
    L, d, rho = cfg.L, cfg.d, cfg.walk_rate
    uni = _UniformBuffer(rng)

    rec_t: list[float] = []
    rec_n: list[int] = []
    gi = 0
    t = 0.0
    n = len(live)
    while True:
        rate = n * rho
        if rate <= 0.0:
            t_next = math.inf
        else:
            t_next = t - math.log(1.0 - uni.next()) / rate
        while gi < grid.size and grid[gi] <= min(t_next, horizon):
            rec_t.append(float(grid[gi]))
            rec_n.append(n)
            gi += 1
        if t_next > horizon:
            break
        t = t_next
        i = live[int(uni.next() * n)]
        u = uni.next() * (2 * d)
        axis = int(u) >> 1
        step = 1 if (int(u) & 1) else -1
        p = powers[axis]
        site = positions[i]
        c = (site // p) % L
        target = site + (((c + step) % L) - c) * p
        if target == site:
            continue
        j = occupant.get(target)
        if j is None:
            del occupant[site]
            occupant[target] = i
            positions[i] = target
        else:
            del occupant[site]
            del positions[i]
            bi, bj = blocks.pop(i), blocks[j]
            if len(bi) > len(bj):
                bi.extend(bj)
                blocks[j] = bi
            else:
                bj.extend(bi)
            k = slot.pop(i)
            last = live.pop()
            if last != i:
                live[k] = last
                slot[last] = k
            n -= 1

    series = DensitySeries(
        config=cfg,
        times=np.asarray(rec_t),
        counts=np.asarray(rec_n, dtype=np.int64),
    )
    final = ParticleState(
        config=cfg,
        time=horizon,
        positions=dict(positions),
        blocks={i: tuple(sorted(b)) for i, b in blocks.items()},
    )
    return series, final


def _merge_law(m: lc.LambdaMeasure, b: int) -> tuple[float, np.ndarray]:
    """Total merger rate and cumulative size weights for b co-located blocks."""
    if b <= 512:
        return lc._jump_chain_step(m, b)
    logw = lc._jump_log_weights(m, b)
    top = float(np.max(logw))
    w = np.exp(logw - top)
    total = float(np.sum(w))
    return math.exp(top) * total, np.cumsum(w) / total


class _LambdaEngine:
    """Event loop for walks plus per-site multiple-merger dynamics.

    Sites with at least two particles carry a merger clock whose rate is
    the total jump-chain rate of the measure at that occupancy; walk
    clocks are per particle. The per-site rates live in a small dict that
    is rebuilt incrementally as occupancies change.
    """

    def __init__(
        self,
        cfg: TorusConfig,
        m: lc.LambdaMeasure,
        start: list[int],
        rng: np.random.Generator,
    ) -> None:
        self.cfg = cfg
        self.m = m
        self.rng = rng
        self.t = 0.0
        self.positions: dict[int, int] = {i: s for i, s in enumerate(start)}
        self.blocks: dict[int, list[int]] = {i: [i] for i in range(len(start))}
        self.members: dict[int, list[int]] = {}
        for pid, site in self.positions.items():
            self.members.setdefault(site, []).append(pid)
        self.rates: dict[int, float] = {}
        for site, ids in self.members.items():
            if len(ids) >= 2:
                self.rates[site] = _merge_law(m, len(ids))[0]
        self.live = list(self.positions)
        self.powers = [cfg.L**a for a in range(cfg.d)]

    @property
    def n(self) -> int:
        return len(self.live)

    def _set_rate(self, site: int) -> None:
        b = len(self.members.get(site, ()))
        if b >= 2:
            self.rates[site] = _merge_law(self.m, b)[0]
        else:
            self.rates.pop(site, None)

    def step(self, horizon: float) -> bool:
        """Advance one event; False when nothing can fire before the horizon."""
        rng = self.rng
        walk = self.cfg.walk_rate * self.n
        merge = sum(self.rates.values())
        total = walk + merge
        if total <= 0.0:
            self.t = horizon
            return False
        t_next = self.t + rng.exponential(1.0 / total)
        if t_next > horizon:
            self.t = horizon
            return False
        self.t = t_next
        u = rng.random() * total
        if u < walk:
            self._walk_event()
        else:
            self._merge_event(u - walk)
        return True

    def _walk_event(self) -> None:
        rng = self.rng
        cfg = self.cfg
        i = self.live[int(rng.random() * self.n)]
        u = rng.random() * (2 * cfg.d)
        axis = int(u) >> 1
        step = 1 if (int(u) & 1) else -1
        p = self.powers[axis]
        site = self.positions[i]
        c = (site // p) % cfg.L
        target = site + (((c + step) % cfg.L) - c) * p
        if target == site:
            return
        self.members[site].remove(i)
        if not self.members[site]:
            del self.members[site]
        self.members.setdefault(target, []).append(i)
        self.positions[i] = target
        self._set_rate(site)
        self._set_rate(target)

    def _merge_event(self, u: float) -> None:
        rng = self.rng
        site = -1
        for s, r in self.rates.items():
            if u < r:
                site = s
                break
            u -= r
        if site < 0:
            site = s
        ids = self.members[site]
        b = len(ids)
        _, cum = _merge_law(self.m, b)
        ksize = min(2 + int(np.searchsorted(cum, rng.random())), b)
        picked = rng.choice(b, size=ksize, replace=False)
        chosen = sorted(ids[k] for k in picked)
        keep = chosen[0]
        acc = self.blocks[keep]
        for pid in chosen[1:]:
            other = self.blocks.pop(pid)
            if len(other) > len(acc):
                other.extend(acc)
                acc = other
            else:
                acc.extend(other)
            del self.positions[pid]
            ids.remove(pid)
        self.blocks[keep] = acc
        self.live = list(self.positions)
        self._set_rate(site)

    def state(self) -> ParticleState:
        return ParticleState(
            config=self.cfg,
            time=self.t,
            positions=dict(self.positions),
            blocks={i: tuple(sorted(b)) for i, b in self.blocks.items()},
        )


def simulate_spatial_lambda(
    cfg: TorusConfig,
    m: lc.LambdaMeasure,
    initial: str | Iterable,
    horizon: float,
    rng: np.random.Generator,
    grid_points: int = 41,
) -> SpatialPath:
    """Walks at the configured rate plus per-site multiple-merger dynamics.

    Between walk events, the particles sharing a site behave exactly as
    the measure's jump chain on that many blocks. A single-site torus or
    a zero walk rate therefore reproduces the non-spatial coalescent.
    """
    if horizon <= 0.0:
        raise ValueError("horizon must be positive")
    start = _normalize_initial(cfg, initial)
    grid = _time_grid(horizon, grid_points)
    eng = _LambdaEngine(cfg, m, start, rng)

    rec_t: list[float] = []
    rec_n: list[int] = []
    gi = 0
    while True:
        n_before = eng.n
        alive = eng.step(horizon)
        while gi < grid.size and grid[gi] <= eng.t:
            rec_t.append(float(grid[gi]))
            rec_n.append(n_before)
            gi += 1
        if not alive:
            break
    series = DensitySeries(
        config=cfg,
        times=np.asarray(rec_t),
        counts=np.asarray(rec_n, dtype=np.int64),
    )
    return SpatialPath(series=series, final=eng.state())


def descent_hitting_time(
    cfg: TorusConfig,
    m: lc.LambdaMeasure,
    n: int,
    k: int,
    rng: np.random.Generator,
    site: int = 0,
    max_time: float = math.inf,
) -> float:
    """First time the watched site holds at most k particles.

    Starts n particles on one site and runs the spatial dynamics until
    the occupancy there drops to k or below, through mergers or through
    particles walking away. Returns the hitting time, or infinity if the
    horizon ``max_time`` passes first.
    """
    if n < 1:
        raise ValueError("need at least one particle")
    if k < 1:
        raise ValueError("threshold must be at least one particle")
    eng = _LambdaEngine(cfg, m, [site] * n, rng)
    while True:
        if len(eng.members.get(site, ())) <= k:
            return eng.t
        if not eng.step(max_time):
            return math.inf


def descent_time_bound(
    m: lc.LambdaMeasure, k: int, b_cap: int = 4096
) -> float:
    """Graph-independent cap on the mean time to reach k particles per site.

    Computes sum_{b>=k} 1/gamma_b + k/gamma_k, where gamma_b is the total
    expected block-loss rate at b blocks. The sum is truncated at
    ``b_cap`` and the remainder is extrapolated from the local power law
    of gamma; for measures where the coalescent descends from infinity
    the remainder is a fraction of a percent at the default cap.
    """
    if k < 2:
        raise ValueError("threshold must be at least two")
    verdict = lc._cdi_analytic(m) or lc.cdi_test(m).verdict
    if verdict != "comes-down":
        raise ValueError("the cap requires a coalescent that descends from infinity")
    gammas = np.array([lc.rate_summaries(m, b)[1] for b in range(k, b_cap + 1)])
    if np.any(gammas <= 0.0):
        raise ValueError("block-loss rate vanished; no finite bound")
    partial = float(np.sum(1.0 / gammas))
    # fit the local power law gamma ~ c b^s over the top octave; the
    # remainder past the cap is then about b_cap^{1-s}/(c (s-1))
    b_mid = b_cap // 2
    g_mid = float(gammas[b_mid - k])
    s = math.log(float(gammas[-1]) / g_mid) / math.log(b_cap / b_mid)
    if s <= 1.0:
        raise ValueError("block-loss rate grows too slowly for a finite bound")
    tail = b_cap / (float(gammas[-1]) * (s - 1.0))
    return partial + tail + k / float(gammas[0])


def origin_escape_count(
    cfg: TorusConfig,
    n: int,
    reps: int,
    rng: np.random.Generator,
    m: lc.LambdaMeasure | None = None,
) -> np.ndarray:
    """How many particles ever leave a site holding n pairwise-merging particles.

    Each particle jumps away at the walk rate while co-located pairs
    merge at the measure's rate on the atom at zero; a particle that
    jumps is counted once and not tracked further. The count is a
    functional of the embedded race alone, so holding times are never
    sampled: at b particles the next departure is a jump with probability
    rho b / (rho b + mass b(b-1)/2).

    Returns one integer count per replicate.
    """
    if n < 1:
        raise ValueError("need at least one particle")
    if reps < 1:
        raise ValueError("need at least one replicate")
    if cfg.walk_rate <= 0.0:
        raise ValueError("particles can never escape without a walk rate")
    mass = 1.0 if m is None else m.kingman_mass
    if m is not None and (m.atoms or m.components):
        raise ValueError("escape counts assume pairwise merging at the site")
    if mass <= 0.0:
        raise ValueError("escape counts assume pairwise merging at the site")
    theta = 2.0 * cfg.walk_rate / mass
    counts = np.zeros(reps, dtype=np.int64)
    for b in range(n, 0, -1):
        q = theta / (theta + b - 1.0)
        counts += rng.random(reps) < q
    return counts


def arratia_dispersion_test(
    cfg: TorusConfig,
    t: float,
    rng: np.random.Generator,
    initial: str | Iterable = "full",
    min_particles: int = 50,
) -> GofReport:
    """Box-count Poisson check for coalescing walks run to time t.

    The torus is tiled with cubic boxes whose volume is close to one
    over the empirical density, so each box holds about one survivor on
    average. The report carries the dispersion statistic
    sum (X_i - mean)^2 / mean, its chi-square degrees of freedom (boxes
    minus one), and a two-sided p-value; the dispersion index is the
    statistic divided by its degrees of freedom. In dimensions two and
    three the counts approach a unit-mean Poisson law at large times,
    while dimension one stays visibly sub-Poissonian.
    """
    _, state = simulate_crw(cfg, initial, t, rng)
    n = state.n_particles
    if n < min_particles:
        raise ValueError(
            f"only {n} particles survive; too few for a box-count test"
        )
    density = n / cfg.n_sites
    divisors = [m for m in range(1, cfg.L + 1) if cfg.L % m == 0]
    side = min(divisors, key=lambda m: abs(density * m**cfg.d - 1.0))
    boxes_per_axis = cfg.L // side
    n_boxes = boxes_per_axis**cfg.d
    if n_boxes < 16:
        raise ValueError("torus too coarse for a box-count test")

    sites = np.fromiter(state.positions.values(), dtype=np.int64, count=n)
    box = np.zeros(n, dtype=np.int64)
    scale = 1
    for _ in range(cfg.d):
        sites, coord = np.divmod(sites, cfg.L)
        box += (coord // side) * scale
        scale *= boxes_per_axis
    counts = np.bincount(box, minlength=n_boxes)

    mean = counts.mean()
    statistic = float(np.sum((counts - mean) ** 2) / mean)
    dof = n_boxes - 1
    cdf = stats.chi2.cdf(statistic, dof)
    p_value = float(2.0 * min(cdf, 1.0 - cdf))
    return GofReport(statistic=statistic, p_value=min(p_value, 1.0), dof=dof)
