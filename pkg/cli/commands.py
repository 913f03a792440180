from typing import Callable, Dict, List, NamedTuple, Optional, Tuple

import numpy as np
import pandas as pd

from cli.dependencies.logging import logger
from cli.run_context import RunContext
from engine.schemas.cascade_schemas import CascadeParams
from engine.schemas.cavity_schemas import CavitySpec
from engine.schemas.clause_schemas import DilutedModel
from engine.schemas.search_schemas import SearchSpec
from engine.services.cascade_service import CascadeService
from engine.services.cavity_service import CavityService
from engine.services.functional_service import FunctionalService
from engine.services.optimizer_service import OptimizerService
from engine.services.recursion_service import RecursionService
from engine.services.system_service import SystemService
from engine.utils.rng_util import stream

class CommandOutput(NamedTuple):
    records: List[dict]
    table: Optional[pd.DataFrame] = None


def _model(ctx: RunContext) -> DilutedModel:
    return ctx.require("model")


def _branching(ctx: RunContext, params: CascadeParams) -> int:
    budget = ctx.config.budget
    M = ctx.config.cascade.M if ctx.config.cascade else None
    return CascadeService.resolve_branching(params, M, budget.truncation_budget, budget.max_leaves)


def _cascade(ctx: RunContext) -> Tuple[CascadeParams, int]:
    params = ctx.require("cascade").params()
    return params, _branching(ctx, params)


def _search(ctx: RunContext) -> SearchSpec:
    search, budget = ctx.config.search, ctx.config.budget
    update = {"seed": ctx.seed}
    if search.M is None and ctx.config.cascade is not None and ctx.config.cascade.M is not None:
        update["M"] = ctx.config.cascade.M
    if search.truncation_budget is None:
        update["truncation_budget"] = budget.truncation_budget
    if search.max_leaves is None:
        update["max_leaves"] = budget.max_leaves
    return search.model_copy(update=update)


def rpc_sample(ctx: RunContext) -> CommandOutput:
    params, M = _cascade(ctx)
    cascade = CascadeService.build_cascade(params, M, stream(ctx.seed, "rpc-sample", 0))
    CascadeService.validate_cascade(cascade)
    record = ctx.record(
        "cascade",
        cascade=CascadeService.dump_cascade(cascade),
        pair_overlap_masses=CascadeService.pair_overlap_masses(cascade),
        truncation_budget=CascadeService.truncation_budget(params, M),
        empirical_truncation_budget=CascadeService.empirical_truncation_budget(cascade),
    )
    return CommandOutput([record])


def overlap_law(ctx: RunContext) -> CommandOutput:
    params, M = _cascade(ctx)
    budget = ctx.config.budget
    records = []
    for p in range(params.r + 1):
        estimate = CascadeService.overlap_law(params, M, p, budget.n_replicates, ctx.seed, ctx.workers)
        records.append(ctx.record("overlap-cdf", level=p, target=params.zeta_at(p), **estimate.model_dump()))
    for zeta in params.zetas:
        for x in budget.x_values:
            estimate = CascadeService.point_count_above(zeta, M, x, budget.n_replicates, ctx.seed)
            records.append(ctx.record("point-count", zeta=zeta, x=x, target=x ** (-zeta), **estimate.model_dump()))
    return CommandOutput(records, pd.json_normalize(records))


def mp_eval(ctx: RunContext) -> CommandOutput:
    model = _model(ctx)
    budget = ctx.config.budget
    kwargs = dict(with_perturbation=budget.with_perturbation, poisson_cap=budget.poisson_cap, workers=ctx.workers)
    if ctx.config.cascade is None:
        field = ctx.config.h.constant if ctx.config.h and ctx.config.h.constant is not None else 0.0
        estimate = FunctionalService.estimate_P_single_atom(model, budget.n_samples, ctx.seed, field, **kwargs)
    else:
        params, M = _cascade(ctx)
        h = ctx.order_parameter(params.r)
        if budget.omega_star_infimum:
            estimate = FunctionalService.omega_star_infimum(params, h, model, M, budget.n_samples, ctx.seed,
                                                            weights=budget.weights, **kwargs)
        else:
            estimate = FunctionalService.estimate_P(params, h, model, M, budget.n_samples, ctx.seed,
                                                    weights=budget.weights, **kwargs)
    return CommandOutput([ctx.record("functional", **estimate.model_dump())])


def mp_min(ctx: RunContext) -> CommandOutput:
    model = _model(ctx)
    search = ctx.config.search
    spec = _search(ctx)
    results = OptimizerService.minimize_over_depths(spec, model, search.depths, ctx.workers)
    records = []
    for result in results:
        records.append(ctx.record(
            "search", r=result.r, best=result.best.model_dump(), reeval=result.reeval.model_dump(),
            reeval_z=result.reeval_z, start_values=result.start_values, n_failed_starts=result.n_failed_starts,
            estimate_P_input=result.best.estimate_P_input(),
        ))
    running = OptimizerService.running_minimum(results)
    records.append(ctx.record("running-minimum", rows=running.to_dict(orient="records")))
    trace = pd.concat([OptimizerService.trace_frame(res).assign(r=res.r) for res in results], ignore_index=True)
    return CommandOutput(records, trace)


def rpc_identity(ctx: RunContext) -> CommandOutput:
    spec = ctx.require("recursion")
    M = _branching(ctx, CascadeParams(r=spec.r, zetas=spec.zetas))
    estimate = RecursionService.rpc_average_identity_check(spec, M, ctx.config.budget.n_samples, ctx.seed,
                                                           ctx.workers)
    return CommandOutput([ctx.record("rpc-identity", **estimate.model_dump())])


def invariance_test(ctx: RunContext) -> CommandOutput:
    spec = ctx.require("recursion")
    M = _branching(ctx, CascadeParams(r=spec.r, zetas=spec.zetas))
    report = RecursionService.invariance_test(spec, M, ctx.config.budget.n_replicates, ctx.seed, ctx.workers)
    table = pd.DataFrame({"statistic": list(report.z_scores), "z": list(report.z_scores.values())})
    return CommandOutput([ctx.record("invariance", max_abs_z=report.max_abs_z, passed=report.passed,
                                     **report.model_dump())], table)


def finite_fe(ctx: RunContext) -> CommandOutput:
    model = _model(ctx)
    finite = ctx.config.finite
    options = {"n_nodes": finite.n_nodes, "n_chains": finite.n_chains, "n_samples": finite.n_mcmc_samples,
               "burn_in": finite.burn_in, "thinning": finite.thinning}
    estimate = SystemService.disorder_averaged_free_energy(finite.N, model, finite.n_instances, ctx.seed,
                                                           finite.method, ctx.workers, options)
    return CommandOutput([ctx.record("free-energy", **estimate.model_dump())])


def replicas(ctx: RunContext) -> CommandOutput:
    model = _model(ctx)
    finite = ctx.config.finite
    rng = stream(ctx.seed, "replicas", 0)
    instance = SystemService.sample_instance(finite.N, model, rng)
    batch = SystemService.sample_replicas(instance, finite.n_replicas, rng, finite.method, finite.burn_in)
    spins = batch.spins
    magnetizations = spins.mean(axis=0)
    mag_se = spins.std(axis=0, ddof=1) / np.sqrt(batch.n) if batch.n > 1 else np.zeros(finite.N)
    pairs = spins[: 2 * (batch.n // 2)].reshape(-1, 2, finite.N)
    histogram = SystemService.overlap_histogram(pairs)
    record = ctx.record("replicas", N=finite.N, n=batch.n, method=batch.method, sweeps=batch.sweeps,
                        burn_in=batch.burn_in, instance=instance.to_record(), magnetizations=magnetizations,
                        magnetization_std_errors=mag_se, overlap_histogram=histogram.to_dict(orient="list"))
    records = [record]
    if finite.method == "exact":
        exact = SystemService.exact_overlap_distribution(instance)
        records.append(ctx.record("exact-overlap", magnetizations=SystemService.exact_magnetizations(instance),
                                  **exact.model_dump()))
    return CommandOutput(records, histogram)


def gg_check(ctx: RunContext) -> CommandOutput:
    model = _model(ctx)
    finite, gg = ctx.config.finite, ctx.config.gg
    spec = gg.to_spec()
    instances = SystemService.sample_instances(finite.N, model, finite.n_instances, ctx.seed, "gg-instance")
    residual = SystemService.gg_residual(instances, spec, gg.method, gg.n_sets, ctx.seed, finite.method)
    records = [ctx.record("gg-residual", spec=spec.model_dump(), **residual.model_dump())]
    table = None
    if gg.thresholds:
        mixture = SystemService.gg_mixture_report(instances, spec, gg.thresholds, gg.method, gg.n_sets, ctx.seed,
                                                  finite.method)
        rows = [m.model_dump() for m in mixture]
        records.append(ctx.record("gg-mixture", rows=rows))
        table = pd.DataFrame(rows)
    return CommandOutput(records, table)


def _replica_tuples(ctx: RunContext, size: int, tag: str) -> np.ndarray:
    model = _model(ctx)
    finite = ctx.config.finite
    instances = SystemService.sample_instances(finite.N, model, finite.n_instances, ctx.seed, f"{tag}-instance")
    tuples = [
        SystemService.sample_replica_tuples(instance, finite.n_replicas, size, stream(ctx.seed, tag, i),
                                            finite.method, finite.burn_in)
        for i, instance in enumerate(instances)
    ]
    return np.concatenate(tuples, axis=0)


def um_check(ctx: RunContext) -> CommandOutput:
    finite = ctx.config.finite
    estimate = SystemService.ultrametricity_violation(_replica_tuples(ctx, 3, "um-replicas"), finite.delta)
    baseline = SystemService.ultrametricity_uniform_baseline(finite.N, finite.delta)
    return CommandOutput([ctx.record("ultrametricity", N=finite.N, delta=finite.delta,
                                     uniform_baseline=baseline, **estimate.model_dump())])


def positivity(ctx: RunContext) -> CommandOutput:
    finite = ctx.config.finite
    estimate = SystemService.positivity_mass(_replica_tuples(ctx, 2, "positivity-replicas"), finite.threshold)
    baseline = SystemService.positivity_uniform_baseline(finite.N, finite.threshold)
    return CommandOutput([ctx.record("positivity", N=finite.N, threshold=finite.threshold,
                                     uniform_baseline=baseline, **estimate.model_dump())])


def cavity_check(ctx: RunContext) -> CommandOutput:
    model = _model(ctx)
    params, M = _cascade(ctx)
    section = ctx.require("cavity")
    spec = CavitySpec(n=section.n, m=section.m, sets=section.sets)
    h = ctx.order_parameter(params.r)
    budget = ctx.config.budget
    result = CavityService.cavity_residual(params, h, model, spec, M, budget.n_samples, ctx.seed,
                                           budget.with_perturbation, budget.poisson_cap, section.relabel,
                                           ctx.workers)
    return CommandOutput([ctx.record("cavity", spec=spec.model_dump(), **result.model_dump())])


def fl_compare(ctx: RunContext) -> CommandOutput:
    model = _model(ctx)
    finite, search = ctx.config.finite, ctx.config.search
    spec = _search(ctx)
    results = OptimizerService.minimize_over_depths(spec, model, search.depths, ctx.workers)
    table = OptimizerService.fl_gap_report(model, finite.N_list, spec, finite.n_instances, search.depths,
                                           finite.method, ctx.workers, results)
    records = [ctx.record("fl-gap", **row) for row in table.to_dict(orient="records")]
    running = OptimizerService.running_minimum(results)
    records.append(ctx.record("running-minimum", rows=running.to_dict(orient="records")))
    if not bool(table["valid"].all()):
        logger.warning("fl-compare: gap reported outside the validity regime of the upper bound")
    return CommandOutput(records, table)


COMMANDS: Dict[str, Callable[[RunContext], CommandOutput]] = {
    "rpc-sample": rpc_sample,
    "overlap-law": overlap_law,
    "mp-eval": mp_eval,
    "mp-min": mp_min,
    "rpc-identity": rpc_identity,
    "invariance-test": invariance_test,
    "finite-fe": finite_fe,
    "replicas": replicas,
    "gg-check": gg_check,
    "um-check": um_check,
    "positivity": positivity,
    "cavity-check": cavity_check,
    "fl-compare": fl_compare,
}

