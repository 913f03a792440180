import math

import numpy as np
import pytest

from engine.clauses import CLAUSES, build_clause
from engine.schemas.clause_schemas import ClauseInstance, KSatModel, KSpinModel, PertModel
from engine.services.clause_service import ClauseService
from engine.utils.error_util import ParameterError
from engine.utils.rng_util import stream


def _models(K):
    return [
        KSpinModel(K=K, beta=1.3),
        KSpinModel(K=K, beta=0.7, g_dist="rademacher"),
        KSatModel(K=K, beta=2.0),
        PertModel(d=K, eps_pert=0.5),
    ]


@pytest.mark.parametrize("K", [1, 2, 3, 4])
def test_extension_matches_corner_sum(K):
    for i, model in enumerate(_models(K)):
        rng = stream(7, "clause-oracle", K * 10 + i)
        clause = build_clause(model)
        disorder = clause.sample_disorder(rng, 1000)
        x = rng.uniform(-1.0, 1.0, size=(1000, K))
        extended = clause.exp_theta_extended(disorder, x)
        brute = clause.corner_average(disorder, x)
        assert np.allclose(extended, brute, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("K", [1, 3])
def test_extension_on_corners(K):
    for i, model in enumerate(_models(K)):
        rng = stream(8, "clause-corner", K * 10 + i)
        inst = ClauseService.sample_disorder(model, rng)
        sigma = rng.choice([-1, 1], size=K)
        expected = math.exp(ClauseService.theta_corner(inst, sigma))
        assert ClauseService.exp_theta_extended(inst, sigma.astype(float)) == pytest.approx(expected, rel=1e-12)


def test_ksat_closed_forms():
    model = KSatModel(K=3, beta=1.5)
    inst = ClauseInstance(model=model, disorder=[1.0, -1.0, 1.0])
    assert ClauseService.theta_corner(inst, [1, -1, 1]) == -1.5
    assert ClauseService.theta_corner(inst, [1, 1, 1]) == 0.0
    assert ClauseService.exp_theta_extended(inst, [1.0, -1.0, 1.0]) == pytest.approx(math.exp(-1.5), rel=1e-14)


def test_kspin_zero_coupling():
    inst = ClauseInstance(model=KSpinModel(K=2, beta=1.0), disorder=0.0)
    assert ClauseService.exp_theta_extended(inst, [0.3, -0.8]) == pytest.approx(1.0, rel=1e-14)


def test_perturbation_corners():
    inst = ClauseInstance(model=PertModel(d=2, eps_pert=0.2), disorder=0.05)
    assert ClauseService.theta_corner(inst, [1, 1]) == 0.05
    assert ClauseService.theta_corner(inst, [1, -1]) == 0.0


def test_symmetric_under_permutation():
    rng = stream(9, "clause-sym")
    x = rng.uniform(-1.0, 1.0, size=4)
    for model in (KSpinModel(K=4, beta=1.0), PertModel(d=4, eps_pert=0.3)):
        inst = ClauseService.sample_disorder(model, rng)
        a = ClauseService.exp_theta_extended(inst, x)
        b = ClauseService.exp_theta_extended(inst, x[::-1])
        assert a == pytest.approx(b, rel=1e-13)


def test_disorder_laws():
    rng = stream(10, "clause-law")
    signs = build_clause(KSatModel(K=2, beta=1.0)).sample_disorder(rng, 10000)
    assert set(np.unique(signs)) == {-1.0, 1.0}
    assert abs(signs.mean()) <= 3 * 1.0 / math.sqrt(signs.size)

    g = build_clause(KSpinModel(K=2, beta=1.0, g_dist="rademacher")).sample_disorder(rng, 1000)
    assert np.all(np.abs(g) == 1.0)

    pert = PertModel(d=5, eps_pert=0.1)
    g = build_clause(pert).sample_disorder(rng, 10000)
    assert pert.sigma2 == 0.1 / 32
    # variance of the sample variance of a Gaussian is 2 sigma^4 / (n - 1)
    assert g.var(ddof=1) <= pert.sigma2 + 3 * pert.sigma2 * math.sqrt(2.0 / (g.size - 1))


def test_extension_is_positive_at_extremes():
    inst = ClauseInstance(model=KSatModel(K=2, beta=50.0), disorder=[1.0, 1.0])
    assert ClauseService.exp_theta_extended(inst, [1.0, 1.0]) > 0.0
    assert ClauseService.log_exp_theta(inst, [1.0, 1.0]) == -50.0


def test_rejects_bad_inputs():
    inst = ClauseInstance(model=KSpinModel(K=2, beta=1.0), disorder=0.5)
    with pytest.raises(ParameterError):
        ClauseService.exp_theta_extended(inst, [1.2, 0.0])
    with pytest.raises(ParameterError):
        ClauseService.exp_theta_extended(inst, [0.1])
    with pytest.raises(ParameterError):
        ClauseService.theta_corner(inst, [1, 0])


def test_registry():
    assert set(CLAUSES) == {"kspin", "ksat", "pert"}
    assert isinstance(build_clause(KSatModel(K=1, beta=1.0)), CLAUSES["ksat"])
