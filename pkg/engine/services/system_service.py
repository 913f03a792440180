import math
from functools import partial
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.special import logsumexp, roots_legendre
from scipy.stats import binom, multinomial

from engine.clauses import build_clause
from engine.dependencies.logging import logger
from engine.schemas.base_schemas import Estimate, FunctionalEstimate
from engine.schemas.clause_schemas import DilutedModel
from engine.schemas.system_schemas import (
    ClauseGroup, GGResidual, GGSpec, HamiltonianInstance, McmcTrace, OverlapBins, ReplicaBatch,
)
from engine.utils.config_util import load_config
from engine.utils.error_util import ErrorHandling
from engine.utils.pool_util import parallel_map
from engine.utils.rng_util import stream
from engine.utils.stats_util import LOG2, bernoulli_se, mean_and_se

ENUMERATION_CHUNK = 4096
R_HAT_WARNING = 1.1


class SystemService:
    """
    Finite-N diluted Hamiltonians with the perturbation part, their Gibbs
    measures and replica diagnostics.

    Spins are stored as float arrays of +-1 with sites 0..N-1; configuration
    number c has spin -1 at site j iff bit j of c is set.
    """

    @staticmethod
    def sample_instance(N: int, model: DilutedModel, rng: np.random.Generator,
                        with_perturbation: Optional[bool] = None) -> HamiltonianInstance:
        """Poisson(lambda N) model clauses plus, with eps_pert > 0, the perturbation clauses"""
        if N < 1:
            raise ErrorHandling.invalid_parameter(f"N must be >= 1, got {N}")
        with_perturbation = model.with_perturbation if with_perturbation is None else with_perturbation
        clause = build_clause(model.clause)
        n = int(rng.poisson(model.lam * N)) if model.lam > 0 else 0
        groups = [ClauseGroup(
            model=model.clause,
            indices=rng.integers(0, N, size=(n, model.K)),
            disorder=clause.sample_disorder(rng, n),
        )]
        if with_perturbation:
            single = model.pert_model(1)
            groups.append(ClauseGroup(
                model=single,
                indices=np.arange(N).reshape(N, 1),
                disorder=build_clause(single).sample_disorder(rng, N),
            ))
            for d in range(2, model.d_max + 1):
                pert = model.pert_model(d)
                n_d = int(rng.poisson(N))
                groups.append(ClauseGroup(
                    model=pert,
                    indices=rng.integers(0, N, size=(n_d, d)),
                    disorder=build_clause(pert).sample_disorder(rng, n_d),
                ))
        return HamiltonianInstance(N=N, model=model, groups=groups)

    @staticmethod
    def instance_from_record(record: dict) -> HamiltonianInstance:
        groups = []
        for group in record["groups"]:
            arity = group["model"].get("K", group["model"].get("d"))
            groups.append(ClauseGroup(
                model=group["model"],
                indices=np.asarray(group["indices"], dtype=np.int64).reshape(-1, arity),
                disorder=np.asarray(group["disorder"], dtype=float),
            ))
        return HamiltonianInstance(N=record["N"], model=DilutedModel(**record["model"]), groups=groups)

    @staticmethod
    def permute_sites(instance: HamiltonianInstance, permutation: Sequence[int]) -> HamiltonianInstance:
        """Relabel site i as permutation[i]"""
        permutation = np.asarray(permutation, dtype=np.int64)
        if sorted(permutation.tolist()) != list(range(instance.N)):
            raise ErrorHandling.invalid_parameter("not a permutation of the sites")
        groups = [group.model_copy(update={"indices": permutation[group.indices]}) for group in instance.groups]
        return instance.model_copy(update={"groups": groups})

    @staticmethod
    def energy(instance: HamiltonianInstance, spins: np.ndarray) -> np.ndarray:
        """H(sigma) for a batch of configurations, shape (batch, N) -> (batch,)"""
        spins = np.atleast_2d(np.asarray(spins, dtype=float))
        total = np.zeros(spins.shape[0])
        for group in instance.groups:
            if group.size == 0:
                continue
            clause = build_clause(group.model)
            total += clause.theta(group.disorder, spins[:, group.indices]).sum(axis=1)
        return total

    @staticmethod
    def configurations(N: int, start: int, stop: int) -> np.ndarray:
        codes = np.arange(start, stop, dtype=np.int64)
        bits = (codes[:, None] >> np.arange(N, dtype=np.int64)) & 1
        return 1.0 - 2.0 * bits

    @staticmethod
    def _check_cap(instance: HamiltonianInstance, cap: Optional[int]) -> None:
        cap = load_config().enumeration_cap() if cap is None else cap
        if instance.N > cap:
            raise ErrorHandling.enumeration_cap(instance.N, cap)

    @staticmethod
    def gibbs_log_weights(instance: HamiltonianInstance, cap: Optional[int] = None) -> np.ndarray:
        """H over all 2^N configurations in code order"""
        SystemService._check_cap(instance, cap)
        total = 2 ** instance.N
        chunks = []
        for start in range(0, total, ENUMERATION_CHUNK):
            stop = min(total, start + ENUMERATION_CHUNK)
            chunks.append(SystemService.energy(instance, SystemService.configurations(instance.N, start, stop)))
        return np.concatenate(chunks)

    @staticmethod
    def log_partition(instance: HamiltonianInstance, cap: Optional[int] = None) -> float:
        """log sum_sigma exp H(sigma), accumulated chunk by chunk with a running max-shift"""
        SystemService._check_cap(instance, cap)
        if instance.n_clauses == 0:
            return instance.N * LOG2
        total = 2 ** instance.N
        log_z = -math.inf
        for start in range(0, total, ENUMERATION_CHUNK):
            stop = min(total, start + ENUMERATION_CHUNK)
            H = SystemService.energy(instance, SystemService.configurations(instance.N, start, stop))
            log_z = float(np.logaddexp(log_z, logsumexp(H)))
        if not math.isfinite(log_z):
            raise ErrorHandling.numerical_failure("free_energy", f"log partition function is {log_z}")
        return log_z

    @staticmethod
    def free_energy(instance: HamiltonianInstance, cap: Optional[int] = None) -> float:
        """(1/N) log Z_N by exact enumeration"""
        if instance.n_clauses == 0:
            SystemService._check_cap(instance, cap)
            return LOG2
        return SystemService.log_partition(instance, cap) / instance.N

    @staticmethod
    def gibbs_probabilities(instance: HamiltonianInstance, cap: Optional[int] = None) -> np.ndarray:
        H = SystemService.gibbs_log_weights(instance, cap)
        return np.exp(H - logsumexp(H))

    @staticmethod
    def sample_replicas(instance: HamiltonianInstance, n: int, rng: np.random.Generator, method: str = "exact",
                        burn_in: int = 100, cap: Optional[int] = None) -> ReplicaBatch:
        """
        n replicas from the Gibbs measure.

        exact: inverse CDF over the enumerated table. mcmc: n independent
        Metropolis chains from uniform starts, each run for `burn_in` sweeps.
        """
        if method == "exact":
            probs = SystemService.gibbs_probabilities(instance, cap)
            cdf = np.cumsum(probs)
            codes = np.minimum(np.searchsorted(cdf, rng.random(n) * cdf[-1], side="right"), probs.size - 1)
            bits = (codes[:, None] >> np.arange(instance.N, dtype=np.int64)) & 1
            return ReplicaBatch(spins=1.0 - 2.0 * bits, method="exact")
        if method == "mcmc":
            spins = rng.choice(np.array([-1.0, 1.0]), size=(n, instance.N))
            spins = SystemService.metropolis(instance, spins, burn_in, rng)
            return ReplicaBatch(spins=spins, method="mcmc", sweeps=burn_in, burn_in=burn_in)
        raise ErrorHandling.invalid_parameter(f"Unknown sampling method: {method}")

    @staticmethod
    def site_tables(instance: HamiltonianInstance) -> List[list]:
        """For every site, the clauses touching it: (clause law, indices, disorder, flip mask)"""
        tables = [[] for _ in range(instance.N)]
        for group in instance.groups:
            if group.size == 0:
                continue
            clause = build_clause(group.model)
            for site in range(instance.N):
                rows = np.flatnonzero(np.any(group.indices == site, axis=1))
                if rows.size:
                    idx = group.indices[rows]
                    tables[site].append((clause, idx, group.disorder[rows], idx == site))
        return tables

    @staticmethod
    def metropolis(instance: HamiltonianInstance, spins: np.ndarray, n_sweeps: int, rng: np.random.Generator,
                   scale: float = 1.0, tables: Optional[List[list]] = None) -> np.ndarray:
        """
        Single-flip Metropolis for the measure proportional to exp(scale H), run on
        all chains (rows of `spins`) at once. A sweep is N updates at uniformly chosen sites.
        """
        spins = np.array(spins, dtype=float)
        tables = SystemService.site_tables(instance) if tables is None else tables
        n_chains, N = spins.shape
        for _ in range(n_sweeps):
            for site in rng.integers(0, N, size=N):
                delta = np.zeros(n_chains)
                for clause, idx, disorder, mask in tables[site]:
                    s = spins[:, idx]
                    delta += (clause.theta(disorder, np.where(mask, -s, s)) - clause.theta(disorder, s)).sum(axis=1)
                accept = np.log(rng.random(n_chains)) < scale * delta
                spins[accept, site] = -spins[accept, site]
        return spins

    @staticmethod
    def mcmc_trace(instance: HamiltonianInstance, n_chains: int, n_samples: int, rng: np.random.Generator,
                   burn_in: int = 100, thinning: int = 10, scale: float = 1.0) -> McmcTrace:
        """Thinned samples of independent chains with a potential-scale-reduction diagnostic on H"""
        tables = SystemService.site_tables(instance)
        spins = rng.choice(np.array([-1.0, 1.0]), size=(n_chains, instance.N))
        spins = SystemService.metropolis(instance, spins, burn_in, rng, scale, tables)
        samples = np.empty((n_samples, n_chains, instance.N))
        energies = np.empty((n_samples, n_chains))
        for t in range(n_samples):
            spins = SystemService.metropolis(instance, spins, thinning, rng, scale, tables)
            samples[t] = spins
            energies[t] = SystemService.energy(instance, spins)
        r_hat = SystemService.potential_scale_reduction(energies)
        if r_hat > R_HAT_WARNING:
            logger.warning(f"MCMC chains not mixed: R-hat {r_hat:.3f} at N={instance.N}, scale={scale}")
        return McmcTrace(samples=samples, energies=energies, r_hat=r_hat,
                         sweeps=burn_in + n_samples * thinning, burn_in=burn_in, thinning=thinning)

    @staticmethod
    def potential_scale_reduction(trace: np.ndarray) -> float:
        """Gelman-Rubin R-hat of a (n_samples, n_chains) trace"""
        n, m = trace.shape
        if n < 2 or m < 2:
            return 1.0
        within = float(np.mean(np.var(trace, axis=0, ddof=1)))
        between = n * float(np.var(trace.mean(axis=0), ddof=1))
        if within == 0.0:
            return 1.0 if between == 0.0 else math.inf
        pooled = (n - 1) / n * within + between / n
        return math.sqrt(pooled / within)

    @staticmethod
    def free_energy_ti(instance: HamiltonianInstance, rng: np.random.Generator, n_nodes: int = 8,
                       n_chains: int = 16, n_samples: int = 200, burn_in: int = 100,
                       thinning: int = 10) -> Estimate:
        """
        Approximate (1/N) log Z_N by thermodynamic integration:
        log Z = N log 2 + int_0^1 <H>_t dt with <.>_t the measure proportional to exp(t H),
        Gauss-Legendre in t and Metropolis averages at every node.
        """
        if instance.n_clauses == 0:
            return Estimate(value=LOG2, std_error=0.0, n=0)
        nodes, weights = roots_legendre(n_nodes)
        nodes, weights = (nodes + 1.0) / 2.0, weights / 2.0
        integral, variance = 0.0, 0.0
        for t, w in zip(nodes, weights):
            trace = SystemService.mcmc_trace(instance, n_chains, n_samples, rng, burn_in, thinning, scale=float(t))
            chain_means = trace.energies.mean(axis=0)
            integral += w * float(chain_means.mean())
            variance += (w * float(chain_means.std(ddof=1)) / math.sqrt(n_chains)) ** 2
        N = instance.N
        return Estimate(value=(N * LOG2 + integral) / N, std_error=math.sqrt(variance) / N,
                        n=n_nodes * n_chains * n_samples)

    @staticmethod
    def disorder_averaged_free_energy(N: int, model: DilutedModel, n_instances: int, seed: int,
                                      method: str = "exact", workers: Optional[int] = None,
                                      mcmc_options: Optional[dict] = None) -> FunctionalEstimate:
        """F_N = E (1/N) log Z_N over independent instances"""
        logger.info(f"free energy N={N} n_instances={n_instances} method={method} seed={seed}")
        values = parallel_map(
            partial(_free_energy_replicate, N, model, method, mcmc_options or {}, seed),
            range(n_instances), workers,
        )
        mean, se = mean_and_se(values)
        return FunctionalEstimate(
            value=mean, std_error=se, n=n_instances, seed=seed,
            extra={"N": N, "method": method, "approximate": method != "exact"},
        )

    @staticmethod
    def overlap(a: np.ndarray, b: np.ndarray) -> float:
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if a.shape != b.shape:
            raise ErrorHandling.invalid_parameter(f"overlap of configurations of lengths {a.shape} and {b.shape}")
        return float(np.mean(a * b))

    @staticmethod
    def exact_magnetizations(instance: HamiltonianInstance, cap: Optional[int] = None) -> np.ndarray:
        probs = SystemService.gibbs_probabilities(instance, cap)
        m = np.zeros(instance.N)
        for start in range(0, probs.size, ENUMERATION_CHUNK):
            stop = min(probs.size, start + ENUMERATION_CHUNK)
            m += probs[start:stop] @ SystemService.configurations(instance.N, start, stop)
        return m

    @staticmethod
    def exact_overlap_distribution(instance: HamiltonianInstance, cap: Optional[int] = None) -> OverlapBins:
        """Law of R_{1,2} for two independent replicas, on the grid (2k - N)/N"""
        N = instance.N
        probs = SystemService.gibbs_probabilities(instance, cap)
        S = SystemService.configurations(N, 0, probs.size)
        agreements = np.rint((N + S @ S.T) / 2.0).astype(np.int64)
        mass = np.bincount(agreements.ravel(), weights=np.outer(probs, probs).ravel(), minlength=N + 1)
        values = tuple(float(2 * k - N) / N for k in range(N + 1))
        return OverlapBins(values=values, probs=tuple(float(x) for x in mass))

    @staticmethod
    def overlap_histogram(pairs: np.ndarray) -> pd.DataFrame:
        """Histogram of R_{1,2} over replica pairs of shape (n_pairs, 2, N)"""
        N = pairs.shape[-1]
        agreements = np.rint((N + np.sum(pairs[:, 0] * pairs[:, 1], axis=-1)) / 2.0).astype(np.int64)
        counts = np.bincount(agreements, minlength=N + 1)
        n = counts.sum()
        frequency = counts / n
        return pd.DataFrame({
            "overlap": [(2 * k - N) / N for k in range(N + 1)],
            "count": counts,
            "frequency": frequency,
            "std_error": [bernoulli_se(f, n) for f in frequency],
        })

    @staticmethod
    def sample_replica_tuples(instance: HamiltonianInstance, n_tuples: int, size: int, rng: np.random.Generator,
                              method: str = "exact", burn_in: int = 100) -> np.ndarray:
        """(n_tuples, size, N) replicas, conditionally independent given the instance"""
        batch = SystemService.sample_replicas(instance, n_tuples * size, rng, method, burn_in)
        return batch.spins.reshape(n_tuples, size, instance.N)

    @staticmethod
    def ultrametricity_violation(triplets: np.ndarray, delta: float) -> Estimate:
        """P(R_{2,3} < min(R_{1,2}, R_{1,3}) - delta) over triplets of shape (n, 3, N)"""
        R12 = np.mean(triplets[:, 0] * triplets[:, 1], axis=-1)
        R13 = np.mean(triplets[:, 0] * triplets[:, 2], axis=-1)
        R23 = np.mean(triplets[:, 1] * triplets[:, 2], axis=-1)
        hits = R23 < np.minimum(R12, R13) - delta
        p = float(np.mean(hits))
        return Estimate(value=p, std_error=bernoulli_se(p, hits.size), n=int(hits.size))

    @staticmethod
    def ultrametricity_uniform_baseline(N: int, delta: float) -> float:
        """
        The same probability for three independent uniform configurations: site
        patterns of (sigma^1 sigma^2, sigma^1 sigma^3) are multinomial over four types.
        """
        law = multinomial(N, [0.25] * 4)
        total = 0.0
        for a in range(N + 1):
            for b in range(N + 1 - a):
                for c in range(N + 1 - a - b):
                    d = N - a - b - c
                    R12 = (a + b - c - d) / N
                    R13 = (a - b + c - d) / N
                    R23 = (a - b - c + d) / N
                    if R23 < min(R12, R13) - delta:
                        total += law.pmf([a, b, c, d])
        return float(total)

    @staticmethod
    def positivity_mass(pairs: np.ndarray, threshold: float) -> Estimate:
        """P(R_{1,2} < -threshold) over pairs of shape (n, 2, N)"""
        R = np.mean(pairs[:, 0] * pairs[:, 1], axis=-1)
        hits = R < -threshold
        p = float(np.mean(hits))
        return Estimate(value=p, std_error=bernoulli_se(p, hits.size), n=int(hits.size))

    @staticmethod
    def positivity_uniform_baseline(N: int, threshold: float) -> float:
        """P(Binom(N, 1/2) < N (1 - threshold) / 2): R < -threshold for uniform spins"""
        k = np.arange(N + 1)
        return float(np.sum(binom.pmf(k, N, 0.5)[k < N * (1.0 - threshold) / 2.0]))

    @staticmethod
    def gg_exact_parts(instance: HamiltonianInstance, spec: GGSpec, cap: Optional[int] = None) -> np.ndarray:
        """
        Gibbs averages (a, b, c, d) of one instance by enumeration:
        a = <f psi(R_{1,n+1})>, b = <f>, c = <psi(R_{1,2})>, d = sum_{l=2..n} <f psi(R_{1,l})>.
        All are sums over sigma^1 of quantities averaged over the other replicas.
        """
        N, n = instance.N, spec.n
        probs = SystemService.gibbs_probabilities(instance, cap)
        S = SystemService.configurations(N, 0, probs.size)
        R = (S @ S.T) / N
        Psi = spec.psi(R)
        m_psi = Psi @ probs
        c = float(probs @ m_psi)
        if spec.f_kind == "overlap":
            m_R = R @ probs
            a = float(probs @ (m_R * m_psi))
            b = float(probs @ m_R)
            d = float(probs @ ((R * Psi) @ probs)) + (n - 2) * a
            return np.array([a, b, c, d])
        f1 = np.ones(probs.size) if spec.f_kind == "one" else SystemService._site_spins(S, spec.site)
        a = float(probs @ (f1 * m_psi))
        b = float(probs @ f1)
        return np.array([a, b, c, (n - 1) * a])

    @staticmethod
    def gg_replica_parts(replicas: np.ndarray, spec: GGSpec) -> np.ndarray:
        """The same averages estimated from sets of n + 1 replicas, shape (n_sets, n + 1, N)"""
        n = spec.n
        R1 = np.mean(replicas[:, :1] * replicas, axis=-1)
        if spec.f_kind == "one":
            f = np.ones(replicas.shape[0])
        elif spec.f_kind == "spin":
            f = SystemService._site_spins(replicas[:, 0], spec.site)
        else:
            f = R1[:, 1]
        psi = spec.psi(R1)
        a = float(np.mean(f * psi[:, n]))
        b = float(np.mean(f))
        c = float(np.mean(psi[:, 1]))
        d = float(sum(np.mean(f * psi[:, l]) for l in range(1, n)))
        return np.array([a, b, c, d])

    @staticmethod
    def gg_combine(parts: np.ndarray, n: int, method: str, threshold: Optional[float] = None) -> GGResidual:
        """E a - (1/n) E b E c - (1/n) E d with a delta-method standard error over instances"""
        parts = np.atleast_2d(parts)
        Ea, Eb, Ec, Ed = parts.mean(axis=0)
        lhs = float(Ea)
        rhs = float(Eb * Ec / n + Ed / n)
        influence = parts[:, 0] - (parts[:, 1] * Ec + Eb * parts[:, 2]) / n - parts[:, 3] / n
        se = float(np.std(influence, ddof=1) / math.sqrt(len(influence))) if len(influence) > 1 else 0.0
        return GGResidual(residual=lhs - rhs, std_error=se, lhs=lhs, rhs=rhs,
                          n_instances=len(parts), method=method, threshold=threshold)

    @staticmethod
    def gg_residual(instances: Sequence[HamiltonianInstance], spec: GGSpec, method: str = "exact",
                    n_sets: int = 500, seed: int = 0, sampler: str = "exact") -> GGResidual:
        """
        Residual of the Ghirlanda-Guerra identity for test functions f and psi.

        With f = 1 both sides are E<psi(R_{1,2})> for any measure: that value is
        reported as lhs and rhs and the residual is exactly 0.
        """
        if spec.f_kind == "spin" and any(spec.site >= inst.N for inst in instances):
            raise ErrorHandling.invalid_parameter(f"site {spec.site} outside the system")
        parts = SystemService._gg_parts(instances, [spec], method, n_sets, seed, sampler)[0]
        if spec.f_kind == "one":
            mean_psi = float(np.atleast_2d(parts)[:, 2].mean())
            return GGResidual(residual=0.0, std_error=0.0, lhs=mean_psi, rhs=mean_psi,
                              n_instances=len(instances), method=method)
        return SystemService.gg_combine(parts, spec.n, method)

    @staticmethod
    def gg_mixture_report(instances: Sequence[HamiltonianInstance], spec: GGSpec, thresholds: Sequence[float],
                          method: str = "exact", n_sets: int = 500, seed: int = 0,
                          sampler: str = "exact") -> List[GGResidual]:
        """
        Residuals for the indicators psi_t(R) = I(R <= t): the conditional law of
        R_{1,n+1} given the first n replicas against the mixture (1/n) law(R_{1,2}) +
        (1/n) sum_l delta_{R_{1,l}}, compared through its distribution function.
        """
        specs = [spec.model_copy(update={"psi_kind": "indicator", "threshold": float(t)}) for t in thresholds]
        all_parts = SystemService._gg_parts(instances, specs, method, n_sets, seed, sampler)
        return [SystemService.gg_combine(parts, spec.n, method, threshold=float(t))
                for parts, t in zip(all_parts, thresholds)]

    @staticmethod
    def _gg_parts(instances, specs: List[GGSpec], method: str, n_sets: int, seed: int,
                  sampler: str) -> List[np.ndarray]:
        results = [[] for _ in specs]
        for i, instance in enumerate(instances):
            if method == "exact":
                for k, spec in enumerate(specs):
                    results[k].append(SystemService.gg_exact_parts(instance, spec))
            elif method == "mc":
                rng = stream(seed, "gg-replicas", i)
                replicas = SystemService.sample_replica_tuples(instance, n_sets, specs[0].n + 1, rng, sampler)
                for k, spec in enumerate(specs):
                    results[k].append(SystemService.gg_replica_parts(replicas, spec))
            else:
                raise ErrorHandling.invalid_parameter(f"Unknown GG method: {method}")
        return [np.array(r) for r in results]

    @staticmethod
    def _site_spins(spins: np.ndarray, site: int) -> np.ndarray:
        if site >= spins.shape[-1]:
            raise ErrorHandling.invalid_parameter(f"site {site} outside the system")
        return spins[..., site]

    @staticmethod
    def sample_instances(N: int, model: DilutedModel, n_instances: int, seed: int,
                         tag: str = "instance") -> List[HamiltonianInstance]:
        return [SystemService.sample_instance(N, model, stream(seed, tag, i)) for i in range(n_instances)]


def _free_energy_replicate(N: int, model: DilutedModel, method: str, mcmc_options: Dict, seed: int,
                           index: int) -> float:
    rng = stream(seed, "finite-fe", index)
    instance = SystemService.sample_instance(N, model, rng)
    if method == "exact":
        return SystemService.free_energy(instance)
    return SystemService.free_energy_ti(instance, rng, **mcmc_options).value
