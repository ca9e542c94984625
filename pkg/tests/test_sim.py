import numpy as np
import pytest
from scipy.stats import kstest

from bbmkit import (SimConfig, build_grid, ValidationError, advance_particle, constant_field, empirical_moments,
                    estimate_growth, ground_state, make_potential, martingale_check, run_ensemble,
                    run_replica)
from bbmkit._accel import HAVE_NUMBA
from bbmkit.oracles import yule_moments
from bbmkit.sim import EnsembleReport, EstimationError, LineageStream

BUMP3 = {"dim": 3, "shape": "bump", "radius": 1.0, "height": 1.0}


def test_lineage_stream():
    s = LineageStream(seed=3)
    u = s.uniform(1000)
    assert np.all((u > 0) & (u < 1))
    assert s.counter == 1000
    assert np.array_equal(LineageStream(seed=3).uniform(1000), u)
    a, b = s.split()
    assert a.key != b.key and a.key != s.key
    assert not np.array_equal(a.uniform(10), b.uniform(10))


def test_zero_beta_increment_variance(bump3):
    t = 0.8
    steps = np.array([advance_particle(np.zeros(3), LineageStream(seed=i), 0.0, bump3, t)[0]
                      for i in range(100_000)])
    assert np.allclose(np.var(steps, axis=0), t, rtol=0.02)
    assert abs(np.mean(steps)) < 0.01
    pos, branched, dt = advance_particle(np.zeros(3), LineageStream(seed=0), 0.0, bump3, t)
    assert not branched and dt == t


def test_constant_field_event_times():
    rate = 2.5
    field = constant_field(1.0, dim=1)
    out = [advance_particle(0.0, LineageStream(seed=i), rate, field, 1e9) for i in range(20_000)]
    assert all(b for _, b, _ in out)
    dts = np.array([d for _, _, d in out])
    assert kstest(dts, "expon", args=(0, 1 / rate)).pvalue > 0.01


def test_acceptance_probability_half():
    # v = 1 on a wide plateau around the start, v_max = 2 far away
    p = make_potential({"dim": 1, "shape": "table", "xs": [-1000, -999, 999, 999.5, 1000],
                        "vs": [0, 1, 1, 2, 0]})
    n = 20_000
    hits = sum(advance_particle(0.0, LineageStream(seed=i), 1.0, p, 1e9)[1] for i in range(n))
    assert abs(hits / n - 0.5) <= 3 * np.sqrt(0.25 / n)


def test_stream_counter_advances(bump3):
    s = LineageStream(seed=1)
    advance_particle(np.zeros(3), s, 1.0, bump3, 1.0)
    assert s.counter == 6


def _cfg(**kw):
    base = dict(potential=make_potential(BUMP3), beta=5.0, t_end=3.0,
                checkpoints=(0.5, 1.0, 2.0), replicas=200, seed=11)
    base.update(kw)
    return SimConfig(**base)


def test_replica_deterministic():
    cfg = _cfg()
    a, b = run_replica(cfg, 5), run_replica(cfg, 5)
    assert np.array_equal(a.counts, b.counts) and a.branches == b.branches
    assert np.array_equal(run_ensemble(cfg).counts, run_ensemble(cfg).counts)


def test_replica_matches_ensemble_row():
    cfg = _cfg()
    rep = run_ensemble(cfg)
    assert np.array_equal(run_replica(cfg, cfg.seed + 7).counts, rep.counts[7])


def test_zero_beta_counts_one():
    rep = run_ensemble(_cfg(beta=0.0))
    assert np.all(rep.counts == 1)
    np.testing.assert_array_equal(empirical_moments(rep).moments, 1.0)
    with pytest.raises(ValidationError):
        martingale_check(rep)


def test_counts_monotone():
    rep = run_ensemble(_cfg(replicas=300))
    assert np.all(rep.counts >= 1)
    assert np.all(np.diff(rep.counts, axis=1) >= 0)
    assert np.all(rep.counts_u <= rep.counts)


@pytest.mark.skipif(not HAVE_NUMBA, reason="numba not installed")
@pytest.mark.parametrize("kw", [
    {},
    {"count_region": ((0.0, 0.0, 0.0), 1.5)},
    {"fast_exterior": False, "x0": (0.3, -2.0, 0.0)},
    {"potential": make_potential({"dim": 1, "shape": "table", "xs": [-1, 0, 2], "vs": [0, 2, 0]}),
     "beta": 1.5, "x0": (0.5,)},
])
def test_backends_identical(backend, kw):
    cfg = _cfg(**kw)
    gs = ground_state(cfg.beta, cfg.potential, _grid(cfg.potential)) if not kw else None
    backend("numba")
    a = run_ensemble(cfg, gs)
    backend("numpy")
    b = run_ensemble(cfg, gs)
    assert np.array_equal(a.counts, b.counts)
    assert np.array_equal(a.counts_u, b.counts_u)
    assert np.array_equal(a.branches, b.branches)
    if gs is not None:
        np.testing.assert_allclose(a.scores, b.scores, rtol=1e-12)


def _grid(p):
    return build_grid(p, 64)


def test_workers_do_not_change_results():
    cfg = _cfg(replicas=101)
    a = run_ensemble(cfg, workers=1)
    b = run_ensemble(cfg, workers=4)
    assert np.array_equal(a.counts, b.counts) and np.array_equal(a.branches, b.branches)


def test_merge_equals_single_run():
    whole = run_ensemble(_cfg(replicas=200, seed=0))
    a = run_ensemble(_cfg(replicas=120, seed=0))
    b = run_ensemble(_cfg(replicas=80, seed=120))
    m = a.merge(b)
    assert np.array_equal(m.counts, whole.counts)
    np.testing.assert_allclose(m.moments(), whole.moments())
    assert m.merge_count == 2
    with pytest.raises(ValidationError):
        a.merge(a)
    with pytest.raises(ValidationError):
        a.merge(run_ensemble(_cfg(replicas=10, seed=500, beta=4.0)))


def test_yule_moments():
    cfg = SimConfig(constant_field(1.0), beta=1.0, t_end=2.0, checkpoints=(1.0, 2.0),
                    replicas=4000, seed=3)
    rep = run_ensemble(cfg)
    est = empirical_moments(rep)
    for j, t in enumerate(rep.times):
        m1, m2 = yule_moments(1.0, t)
        assert abs(est.moments[0, j] - m1) <= 3 * est.se[0, j]
        assert abs(est.moments[1, j] - m2) <= 3 * est.se[1, j]


def test_truncation_flag():
    cfg = SimConfig(constant_field(1.0), beta=1.0, t_end=4.0, replicas=50, seed=0,
                    max_particles=20)
    rep = run_ensemble(cfg)
    assert rep.truncated.any()
    assert np.all(rep.counts[rep.truncated] == 0)
    with pytest.raises(EstimationError):
        empirical_moments(rep)
    with pytest.raises(EstimationError):
        rep.moments()
    assert rep.summary()["truncated"] == rep.n_truncated


@pytest.mark.parametrize("spec,x0", [(BUMP3, (2.0, 0.0, 0.0)),
                                     ({"dim": 1, "shape": "bump", "radius": 1.0,
                                       "height": 1.0}, (1.5,))])
def test_fast_exterior_matches_plain_thinning(spec, x0):
    kw = dict(potential=make_potential(spec), beta=4.0, t_end=3.0, checkpoints=(1.0, 2.0),
              replicas=3000, x0=x0)
    fast = run_ensemble(SimConfig(**kw, fast_exterior=True, seed=0))
    slow = run_ensemble(SimConfig(**kw, fast_exterior=False, seed=10_000))
    a, b = fast.counts.astype(float), slow.counts.astype(float)
    se = np.sqrt(a.var(axis=0) / a.shape[0] + b.var(axis=0) / b.shape[0])
    assert np.all(np.abs(a.mean(axis=0) - b.mean(axis=0)) <= 3 * se)
    assert kstest(a[:, -1], b[:, -1], method="asymp").pvalue > 0.01


def test_no_time_step_checkpoints_do_not_bias():
    one = run_ensemble(_cfg(checkpoints=(), replicas=2000, seed=0))
    many = run_ensemble(_cfg(checkpoints=tuple(np.linspace(0.1, 2.9, 15)), replicas=2000,
                             seed=50_000))
    a, b = one.counts[:, -1].astype(float), many.counts[:, -1].astype(float)
    se = np.sqrt(a.var() / a.size + b.var() / b.size)
    assert abs(a.mean() - b.mean()) <= 3 * se


def test_estimate_growth_synthetic():
    t = np.linspace(10, 20, 11)
    counts = np.tile(np.round(np.exp(0.5 * t)), (50, 1))
    lam, (lo, hi) = estimate_growth(EnsembleReport.from_counts(t, counts), n_boot=100)
    assert abs(lam - 0.5) <= 1e-3
    assert lo <= lam <= hi
    with pytest.raises(EstimationError):
        estimate_growth(EnsembleReport.from_counts(t, counts), window=(10, 12))


def test_martingale_needs_scores():
    rep = run_ensemble(_cfg(replicas=20))
    with pytest.raises(ValidationError):
        martingale_check(rep)


def test_martingale_flat_small(bump3, grid3):
    gs = ground_state(5.0, bump3, grid3)
    cfg = _cfg(checkpoints=(0.25, 0.5, 0.75, 1.0), t_end=1.0, replicas=2000, seed=0)
    chk = martingale_check(run_ensemble(cfg, gs))
    assert chk.initial == pytest.approx(float(gs.radial(0.0)))
    assert np.all(chk.z_initial <= 3) and chk.flatness <= 3


def test_config_round_trip(tmp_path):
    cfg = _cfg(count_region=((0.0, 0.0, 0.0), 2.0))
    back = SimConfig.from_dict(cfg.to_dict())
    assert back.hash() == cfg.hash()
    assert _cfg(seed=1).model_hash() == _cfg(seed=2, replicas=5).model_hash()
    with pytest.raises(ValidationError):
        SimConfig.from_dict({**cfg.to_dict(), "dt": 0.1})


@pytest.mark.parametrize("kw", [{"beta": -1.0}, {"t_end": 0.0}, {"checkpoints": (2.0, 1.0)},
                                {"checkpoints": (4.0,)}, {"replicas": 0}, {"seed": -1},
                                {"x0": (0.0, 0.0)}, {"count_region": ((0.0,), 1.0)}])
def test_config_validation(kw):
    with pytest.raises(ValidationError):
        _cfg(**kw)


def test_write_csv(tmp_path):
    rep = run_ensemble(_cfg(replicas=3))
    path = tmp_path / "c.csv"
    rep.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,replica_id,n_t,n_t_U,psi_score"
    assert len(lines) == 1 + 3 * rep.times.size
