"""Monte Carlo for Galton-Watson processes with and without immigration, and exact small-n laws.

Batch simulation draws a whole generation at once: given ``Z_n = z`` the
offspring counts per atom are multinomial with ``z`` trials, so a generation
costs one multinomial draw per path regardless of the population size.  Paths
are split into fixed chunks with independent streams from
``SeedSequence(seed).spawn``; results do not depend on the number of threads.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .inversion import TailResult
from .model import ImmigrationModel, OffspringModel

CHUNK = 100_000
MIN_EXPECTED_HITS = 100
EXACT_LOSS_TOL = 1e-9


class PopulationCapExceeded(RuntimeError):
    pass


class RareEventInfeasible(ArithmeticError):
    """Requested event is too rare for the sample budget; use inversion instead."""


@dataclass(frozen=True)
class SimConfig:
    generations: int = 30
    samples: int = 1_000_000
    seed: int = 20140611
    population_cap: int = 10**15
    threads: int = 1

    def __post_init__(self):
        if self.generations < 1:
            raise ValueError("generations must be >= 1")
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


class AliasTable:
    """Walker/Vose alias table over the support ``1..K`` of a probability vector."""

    def __init__(self, probs):
        p = np.asarray(probs, dtype=float)
        k = p.size
        scaled = p * k / p.sum()
        prob = np.zeros(k)
        alias = np.zeros(k, dtype=np.int64)
        small = [i for i in range(k) if scaled[i] < 1.0]
        large = [i for i in range(k) if scaled[i] >= 1.0]
        while small and large:
            s, g = small.pop(), large.pop()
            prob[s], alias[s] = scaled[s], g
            scaled[g] -= 1.0 - scaled[s]
            (small if scaled[g] < 1.0 else large).append(g)
        for i in large + small:
            prob[i], alias[i] = 1.0, i
        self.prob, self.alias = prob, alias

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        """Draws with values in ``1..K``."""
        i = rng.integers(0, self.prob.size, size=size)
        keep = rng.random(size) < self.prob[i]
        return np.where(keep, i, self.alias[i]) + 1


def sample_gw_path(off: OffspringModel, gens: int, rng: np.random.Generator,
                   population_cap: int = 10**8, table: AliasTable | None = None) -> np.ndarray:
    """One path ``Z_0..Z_gens`` with ``Z_0 = 1``, drawing every individual's offspring."""
    table = table or AliasTable(off.probs)
    z = np.empty(gens + 1, dtype=np.int64)
    z[0] = 1
    for n in range(gens):
        if z[n] > population_cap:
            raise PopulationCapExceeded(f"Z_{n} = {z[n]} exceeds the cap {population_cap}")
        z[n + 1] = int(table.sample(rng, int(z[n])).sum())
    return z


def sample_gwi_path(off: OffspringModel, imm: ImmigrationModel, gens: int, rng: np.random.Generator,
                    population_cap: int = 10**8) -> np.ndarray:
    """One path of the process with immigration, ``Z_0 = Y_0``."""
    table, imm_table = AliasTable(off.probs), AliasTable(imm.probs)
    z = np.empty(gens + 1, dtype=np.int64)
    z[0] = int(imm_table.sample(rng, 1)[0])
    for n in range(gens):
        if z[n] > population_cap:
            raise PopulationCapExceeded(f"Z_{n} = {z[n]} exceeds the cap {population_cap}")
        z[n + 1] = int(table.sample(rng, int(z[n])).sum()) + int(imm_table.sample(rng, 1)[0])
    return z


def _offspring_step(rng: np.random.Generator, z: np.ndarray, atoms: np.ndarray, pvals: np.ndarray) -> np.ndarray:
    """Total offspring of ``z[i]`` independent individuals, for every path ``i``."""
    if atoms.size == 2:
        extra = rng.binomial(z, pvals[1])
        return z * atoms[0] + extra * (atoms[1] - atoms[0])
    counts = rng.multinomial(z, pvals)
    return counts @ atoms


@dataclass
class BatchResult:
    """Per-path summaries of a batch of simulated paths."""

    z_final: np.ndarray
    first_branch: np.ndarray    # K (or the immigration analogue); gens + 1 if never
    generations: int
    mean_a: float
    paths: np.ndarray | None = None

    @property
    def w_approx(self) -> np.ndarray:
        return self.z_final / self.mean_a**self.generations


def _simulate_chunk(off, imm, gens, n, seed_seq, cap, keep_paths):
    rng = np.random.default_rng(seed_seq)
    nz = np.flatnonzero(off.probs)
    atoms, pvals = nz + 1, off.probs[nz]
    imm_table = AliasTable(imm.probs) if imm is not None else None
    nu = imm.min_index_nu if imm is not None else 0
    z = imm_table.sample(rng, n).astype(np.int64) if imm is not None else np.ones(n, dtype=np.int64)
    first = np.full(n, gens + 1, dtype=np.int64)

    def minimal(g):
        return nu * (g + 1) if imm is not None else 1

    first[z > minimal(0)] = 0
    paths = np.empty((n, gens + 1), dtype=np.int64) if keep_paths else None
    if keep_paths:
        paths[:, 0] = z
    for g in range(1, gens + 1):
        if z.max(initial=0) > cap:
            raise PopulationCapExceeded(f"population exceeded the cap {cap} in generation {g - 1}")
        z = _offspring_step(rng, z, atoms, pvals)
        if imm_table is not None:
            z = z + imm_table.sample(rng, n)
        newly = (first > gens) & (z > minimal(g))
        first[newly] = g
        if keep_paths:
            paths[:, g] = z
    return z, first, paths


def simulate_batch(off: OffspringModel, imm: ImmigrationModel | None, cfg: SimConfig,
                   keep_paths: bool = False) -> BatchResult:
    """Simulate ``cfg.samples`` independent paths for ``cfg.generations`` generations."""
    n_chunks = math.ceil(cfg.samples / CHUNK)
    seeds = np.random.SeedSequence(cfg.seed).spawn(n_chunks)
    sizes = [min(CHUNK, cfg.samples - i * CHUNK) for i in range(n_chunks)]

    def run(i):
        return _simulate_chunk(off, imm, cfg.generations, sizes[i], seeds[i], cfg.population_cap, keep_paths)

    if cfg.threads > 1 and n_chunks > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            parts = list(pool.map(run, range(n_chunks)))
    else:
        parts = [run(i) for i in range(n_chunks)]
    return BatchResult(
        z_final=np.concatenate([p[0] for p in parts]),
        first_branch=np.concatenate([p[1] for p in parts]),
        generations=cfg.generations,
        mean_a=off.mean_a,
        paths=np.concatenate([p[2] for p in parts]) if keep_paths else None,
    )


def _expected_probability(off, imm, eps) -> float:
    from .laplace import PhiEvaluator
    from .inversion import tail_W, tail_W_imm

    ev = PhiEvaluator(off)
    return (tail_W(ev, eps) if imm is None else tail_W_imm(ev, imm, eps)).value


def check_feasible(off: OffspringModel, imm: ImmigrationModel | None, eps: float, cfg: SimConfig) -> float:
    """Expected hit count for ``{W < eps}``; raises if below ``MIN_EXPECTED_HITS``."""
    expected = _expected_probability(off, imm, eps) * cfg.samples
    if expected < MIN_EXPECTED_HITS:
        raise RareEventInfeasible(
            f"rare-event infeasible: about {expected:.3g} expected hits for eps = {eps:g} with "
            f"{cfg.samples} samples (need {MIN_EXPECTED_HITS}); use the inversion method")
    return expected


def tail_from_batch(batch: BatchResult, eps: float) -> TailResult:
    n = batch.z_final.size
    hits = int(np.count_nonzero(batch.w_approx < eps))
    p = hits / n
    se = math.sqrt(p * (1.0 - p) / n)
    return TailResult(value=p, log_value=math.log(p) if p > 0 else -math.inf, abs_error_est=se,
                      method="monte_carlo", contour_shift=math.nan, t_truncation=math.nan)


def estimate_tail_mc(off: OffspringModel, imm: ImmigrationModel | None, eps: float, cfg: SimConfig,
                     check: bool = True) -> TailResult:
    """Empirical ``P{W_approx < eps}`` with its binomial standard error."""
    if check:
        check_feasible(off, imm, eps, cfg)
    return tail_from_batch(simulate_batch(off, imm, cfg), eps)


@dataclass(frozen=True)
class ConditionalCounts:
    hits: int
    ks: tuple
    exceed: tuple    # number of hits with first_branch > k

    def probabilities(self) -> np.ndarray:
        return np.array(self.exceed, dtype=float) / self.hits

    def std_errors(self) -> np.ndarray:
        p = self.probabilities()
        return np.sqrt(p * (1 - p) / self.hits)


def conditional_counts(batch: BatchResult, eps: float, ks) -> ConditionalCounts:
    sel = batch.first_branch[batch.w_approx < eps]
    return ConditionalCounts(hits=int(sel.size), ks=tuple(int(k) for k in ks),
                             exceed=tuple(int(np.count_nonzero(sel > k)) for k in ks))


def estimate_K_conditional(off: OffspringModel, imm: ImmigrationModel | None, eps: float, x: int,
                           cfg: SimConfig, check: bool = True) -> float:
    """Empirical ``P{K > floor(scale) + x | W < eps}`` (scale ``gamma`` with immigration, ``gamma_s`` without)."""
    from . import scales

    if check:
        check_feasible(off, imm, eps, cfg)
    scale = scales.gamma(eps, off) if imm is not None else scales.gamma_s(eps, off)
    k = math.floor(scale) + x
    counts = conditional_counts(simulate_batch(off, imm, cfg), eps, [k])
    if counts.hits == 0:
        raise RareEventInfeasible("no samples satisfy the conditioning event")
    return float(counts.probabilities()[0])


@dataclass(frozen=True)
class Pmf:
    probs: np.ndarray    # probs[k] = P{Z = k}
    lost_mass: float


def _compose(off: OffspringModel, g: np.ndarray, cap: int) -> np.ndarray:
    """Coefficients of ``f(g(s))`` truncated to degree ``cap``."""
    res = np.zeros(1)
    res[0] = off.probs[-1]
    for p in off.probs[-2::-1]:
        res = np.convolve(res, g)[: cap + 1]
        res[0] += p
    return np.convolve(res, g)[: cap + 1]


def exact_zn_pmf(off: OffspringModel, imm: ImmigrationModel | None, n: int, support_cap: int = 4096) -> Pmf:
    """Exact law of ``Z_n`` (``Z_0 = 1``) or of the immigration process (``Z_0 = Y_0``).

    With immigration the generating function is ``prod_{j=0}^n h(f_j(s))``.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    ident = np.array([0.0, 1.0])
    fj = ident
    if imm is None:
        for _ in range(n):
            fj = _compose(off, fj, support_cap)
        total = fj
    else:
        hq = np.concatenate([[0.0], imm.probs])
        total = np.array([1.0])
        for j in range(n + 1):
            if j > 0:
                fj = _compose(off, fj, support_cap)
            h_of = np.zeros(1)
            h_of[0] = hq[-1]
            for q in hq[-2::-1]:
                h_of = np.convolve(h_of, fj)[: support_cap + 1]
                h_of[0] += q
            total = np.convolve(total, h_of)[: support_cap + 1]
    lost = max(0.0, 1.0 - float(total.sum()))
    if lost > EXACT_LOSS_TOL:
        raise ValueError(f"support_cap {support_cap} loses mass {lost:.3g}")
    return Pmf(total, lost)


def chi_square_test(observed_counts: np.ndarray, probs: np.ndarray, min_expected: float = 5.0):
    """Pearson chi-square against ``probs``, pooling cells with small expectation into the last bin."""
    from scipy.stats import chisquare

    obs = np.asarray(observed_counts, dtype=float)
    n = obs.sum()
    exp = np.asarray(probs, dtype=float)[: obs.size] * n
    order = np.argsort(exp)[::-1]
    big = [i for i in order if exp[i] >= min_expected]
    small = [i for i in order if exp[i] < min_expected]
    pooled_o, pooled_e = obs[small].sum(), exp[small].sum()
    if pooled_e == 0.0 and pooled_o > 0:
        raise ValueError("observations in cells of zero probability")
    keep_pool = bool(small) and pooled_e > 0.0
    o = list(obs[big]) + ([pooled_o] if keep_pool else [])
    e = list(exp[big]) + ([pooled_e] if keep_pool else [])
    o, e = np.array(o), np.array(e)
    e *= o.sum() / e.sum()
    return chisquare(o, e)

