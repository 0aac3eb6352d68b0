"""Acceptance criteria 1-11.

Run ``pytest tests/test_acceptance.py`` and read the "acceptance criteria"
section at the end of the report: one PASS/FAIL line per criterion.
"""
import json
import time
from dataclasses import dataclass

import numpy as np
import pytest

from gaitbci.classifier import BayesModel, classify, posterior
from gaitbci.cli import main
from gaitbci.core import CueSchedule, State, SynthConfig, generate_synthetic
from gaitbci.decoder import DecoderConfig, OnlineDecoder, run_posteriors, run_posteriors_batch, run_stream
from gaitbci.evaluation import (ARNullModel, calibrate, evaluate_session, fit_null, monte_carlo_p,
                                simulate_null)
from gaitbci.features import fit_discriminant, fit_feature_extractor
from gaitbci.plant import Phase, PlantConfig, RoGOPlant
from gaitbci.spectral import BinSpec, WindowSpec, bin_powers
from gaitbci.training import TrainConfig, extract_trials, train

from oracles import bayes_direct, dft_band_power, hysteresis_reference, likelihood_oracle_branch

SEEDS = range(5)
criterion = pytest.mark.criterion


@dataclass
class Loop:
    seed: int
    model: object
    train_seconds: float
    decoder: DecoderConfig
    session: object
    cues: CueSchedule
    plant: RoGOPlant
    trace: object
    report: object


def closed_loop(seed, depth=0.6):
    """Train, calibrate and run one synthetic subject; seeds are disjoint per stage."""
    train_cues = CueSchedule.training()
    rec = generate_synthetic(SynthConfig(erd_depth=depth, seed=100 + seed), train_cues)
    t = time.perf_counter()
    model = train(rec, train_cues, TrainConfig())
    elapsed = time.perf_counter() - t
    cues = CueSchedule.session()
    cal = generate_synthetic(SynthConfig(erd_depth=depth, seed=200 + seed), cues)
    cal_trace = run_stream(cal, model, DecoderConfig())
    res = calibrate(cal_trace.posteriors, cues.state_at(cal_trace.times - 1e-9))
    dec = DecoderConfig().with_thresholds(res.t_idle, res.t_walk)
    ses = generate_synthetic(SynthConfig(erd_depth=depth, seed=300 + seed), cues)
    plant = RoGOPlant()
    trace = run_stream(ses, model, dec, plant)
    return Loop(seed, model, elapsed, dec, ses, cues, plant, trace, evaluate_session(cues, plant.log, trace))


@pytest.fixture(scope="session")
def loops():
    return [closed_loop(s) for s in SEEDS]


def note(request, text):
    request.node._detail = text


# -- 1 -----------------------------------------------------------------------

@criterion(1, "end-to-end training")
def test_c1_training_accuracy_and_runtime(loops, request):
    acc = [lp.model.cv_accuracy[0] for lp in loops]
    secs = max(lp.train_seconds for lp in loops)
    note(request, f"CV {min(acc):.3f}-{max(acc):.3f} over {len(acc)} seeds, slowest train {secs:.1f} s")
    assert min(acc) >= 0.90
    assert secs < 60.0


@criterion(1, "end-to-end training")
def test_c1_no_rhythm_change_is_chance(request):
    cues = CueSchedule.training()
    rec = generate_synthetic(SynthConfig(erd_depth=0.0, seed=150), cues)
    acc = train(rec, cues, TrainConfig()).cv_accuracy[0]
    note(request, f"depth 0 CV {acc:.3f}")
    assert 0.40 <= acc <= 0.60


# -- 2 -----------------------------------------------------------------------

@criterion(2, "closed-loop session")
def test_c2_closed_loop_median(loops, request):
    xc = np.median([lp.report.xcorr_max for lp in loops])
    lag = np.median([lp.report.lag_at_max for lp in loops])
    om = np.median([lp.report.omissions for lp in loops])
    fa = np.median([lp.report.false_alarms for lp in loops])
    rows = "; ".join(lp.report.table_row().replace("  ", " ") for lp in loops)
    note(request, f"median xcorr {xc:.3f} at {lag:.2f} s, OM {om:g}, FA {fa:g} | {rows}")
    assert xc >= 0.75 and lag <= 15.0 and om == 0 and fa <= 2


# -- 3 -----------------------------------------------------------------------

@criterion(3, "Monte Carlo significance")
def test_c3_monte_carlo(loops, request):
    out = []
    for lp in loops:
        null = fit_null(lp.trace.raw)
        t = time.perf_counter()
        mc = monte_carlo_p(lp.cues, null, lp.decoder, PlantConfig(), lp.report.xcorr_max, lp.trace.times,
                           n=10_000, seed=lp.seed)
        out.append((mc.p_value, float(mc.null_max.max()), time.perf_counter() - t))
    p, mx, secs = (max(v) for v in zip(*out))
    note(request, f"max p {p:g}, max null correlation {mx:.3f}, slowest run {secs:.1f} s, over {len(out)} sessions")
    assert p < 1e-3 and mx < 0.6 and secs < 300.0


# -- 4 -----------------------------------------------------------------------

@criterion(4, "latency accounting")
def test_c4_lag_decomposition(loops, request):
    cfg = PlantConfig()
    decision, onset = [], []
    for lp in loops:
        events = lp.plant.log.events
        tr = lp.trace
        for (a, b) in zip(lp.cues.boundaries[:-1], lp.cues.boundaries[1:]):
            if lp.cues.state_at([a])[0] != State.WALK:
                continue
            i = int(np.argmax((tr.times > a) & (tr.states == 1)))
            walking = min(t for t, ph in events if ph == Phase.WALKING and t > a)
            decision.append(tr.times[i] - a)
            onset.append(walking - a)
    decision, onset = np.array(decision), np.array(onset)
    lags = [lp.report.lag_at_max for lp in loops]
    note(request, f"cue->walking {onset.mean():.2f} s = decoder {decision.mean():.2f} s "
                  f"(window {WindowSpec().length} s + averaging) + {cfg.command_latency} + "
                  f"{cfg.startup_latency} s start-up; xcorr argmax lags {lags}")
    # every onset is exactly decoder delay + command latency + locked-in start-up
    np.testing.assert_allclose(onset, decision + cfg.command_latency + cfg.startup_latency, atol=1e-9)
    assert (decision >= WindowSpec().length - 1e-9).all()
    assert (onset >= cfg.startup_latency).all()


@criterion(4, "latency accounting")
def test_c4_step_posterior_decoder_latency():
    cfg = DecoderConfig()
    for t_walk in np.linspace(0.0, 0.999, 40):
        states, _ = run_posteriors(np.r_[np.zeros(20), np.ones(20)], cfg.with_thresholds(0.0, t_walk))
        assert (int(np.argmax(states == 1)) - 20) * cfg.window.step <= cfg.avg_horizon + cfg.window.step


# -- 5 -----------------------------------------------------------------------

@criterion(5, "state-machine oracle")
def test_c5_state_machine_oracle(request):
    rng = np.random.default_rng(5)
    n, pairs = 100_000, 100
    levels = np.arange(9) / 8           # P-bar can land exactly on these
    mismatches = 0
    switches = 0
    for k in range(pairs):
        if k % 2:
            a, b = np.sort(rng.choice(levels, 2))
            p = rng.choice(levels, n)
        else:
            a, b = np.sort(rng.random(2))
            slow = np.repeat(rng.random(n // 40 + 1), 40)[:n]
            p = np.clip(slow + 0.2 * rng.standard_normal(n), 0, 1)
        cfg = DecoderConfig(t_idle=a, t_walk=b)
        ref_s, ref_p = hysteresis_reference(p.tolist(), 8, a, b)
        got_s, got_p = run_posteriors_batch(p[None], cfg)
        mismatches += int(np.count_nonzero(got_s[0] != np.array(ref_s))) + int(np.count_nonzero(got_p[0] != ref_p))
        switches += int(np.count_nonzero(np.diff(ref_s)))
        if k < 3:
            s, pb = run_posteriors(p, cfg)
            mismatches += int(np.count_nonzero(s != np.array(ref_s)))
    note(request, f"{pairs} pairs x {n} steps, {switches} reference switches, {mismatches} mismatches")
    assert mismatches == 0


# -- 6 -----------------------------------------------------------------------

@criterion(6, "spectral correctness")
def test_c6_parseval_and_dft(request):
    rng = np.random.default_rng(6)
    worst = 0.0
    for n in (192, 256, 191, 500):
        for _ in range(10):
            x = rng.standard_normal(n) * rng.uniform(0.1, 100)
            total = bin_powers(x[None], 256.0, BinSpec(0.0, 128.0, 2.0), taper="rect").sum()
            worst = max(worst, abs(total - x.var()) / x.var())
    err = 0.0
    w = np.hamming(192)
    for f in (7.0, 10.0, 10.7, 23.3):
        x = np.sin(2 * np.pi * f * np.arange(192) / 256.0 + 0.3)
        p = bin_powers(x[None], 256.0, BinSpec(2.0, 40.0, 2.0))[:, 0]
        for b, lo in enumerate(np.arange(2.0, 40.0, 2.0)):
            err = max(err, abs(p[b] - dft_band_power(x, 256.0, lo, lo + 2, nfft=512, taper=w)))
    note(request, f"Parseval rel err {worst:.1e}, DFT oracle abs err {err:.1e}")
    assert worst <= 1e-6 and err <= 1e-9


# -- 7 -----------------------------------------------------------------------

@criterion(7, "classifier")
def test_c7_classifier(request):
    rng = np.random.default_rng(7)
    norm_err, oracle_err, compared = 0.0, 0.0, 0
    for _ in range(10_000):
        mi, mw = rng.normal(0, 3, 2)
        vi, vw = rng.uniform(0.01, 5, 2)
        pi = rng.uniform(0.05, 0.95)
        f = rng.normal(0, 6)
        m = BayesModel.single(mi, vi, mw, vw, (pi, 1 - pi))
        pw = posterior(f, 0, m)
        norm_err = max(norm_err, abs((1 - pw) + pw - 1))
        try:
            ref = bayes_direct(f, mi, vi, mw, vw, pi, 1 - pi)
        except ZeroDivisionError:
            continue
        compared += 1
        oracle_err = max(oracle_err, abs(pw - ref))
    tie = classify(0.0, 0, BayesModel.single(-1.0, 1.0, 1.0, 1.0))
    note(request, f"normalization {norm_err:.1e}, direct Bayes {oracle_err:.1e} on {compared} cases, tie -> {tie.label}")
    assert norm_err <= 1e-12 and oracle_err <= 1e-12 and tie == State.WALK


# -- 8 -----------------------------------------------------------------------

@criterion(8, "feature extraction")
def test_c8_feature_extraction(loops, request):
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(20):
        p, n = rng.integers(4, 40), rng.integers(10, 60)
        X = rng.standard_normal((2 * n, p)) * rng.uniform(0.1, 3, p)
        X[n:] += rng.standard_normal(p)
        fx, _ = fit_feature_extractor(X, np.repeat([0, 1], n))
        for b in (0, 1):
            B = fx.subspaces[b].basis
            worst = max(worst, np.abs(B.T @ B - np.eye(B.shape[1])).max(),
                        abs(np.linalg.norm(fx.discriminants[b].w) - 1))
    A = rng.standard_normal((3, 3))
    cov = A @ A.T + np.eye(3)
    L = np.linalg.cholesky(cov)
    Zi = rng.standard_normal((4000, 3)) @ L.T
    Zw = Zi[rng.permutation(4000)] + np.array([1.0, -0.5, 0.3])   # identical sample covariance
    cos = abs(fit_discriminant(Zi, Zw, "aida").w @ fit_discriminant(Zi, Zw, "lda").w)
    # branch choice on held-out session trials of the first trained subject
    lp = loops[0]
    m = lp.model
    X, _, _ = extract_trials(lp.session, lp.cues, m.retained_channels, m.window, m.bins)
    X = X.reshape(len(X), -1)
    got = m.feature_extractor.select_branch(X)
    want = np.array([likelihood_oracle_branch(m.feature_extractor, x) for x in X])
    agree = float(np.mean(got == want))
    note(request, f"orthonormality/unit err {worst:.1e}, AIDA/LDA |cos| {cos:.5f}, "
                  f"branch agreement {agree:.1%} on {len(X)} held-out trials")
    assert worst <= 1e-10 and cos > 0.999 and agree == 1.0


# -- 9 -----------------------------------------------------------------------

def lag1(y):
    a, b = y[:-1] - y[:-1].mean(), y[1:] - y[1:].mean()
    return float((a * b).sum() / np.sqrt((a * a).sum() * (b * b).sum()))


@criterion(9, "null-model fit")
def test_c9_fit_algebra(loops):
    for lp in loops:
        m = fit_null(lp.trace.raw)
        assert m.alpha == m.rho
        assert m.beta == 2 * m.mu * (1 - m.alpha)


@criterion(9, "null-model fit")
@pytest.mark.xfail(strict=True, reason="output clipping biases the moments outside alpha >= 0, mu <= 0.5; "
                                       "see the decisions ledger")
def test_c9_moment_recovery_full_regime(request):
    """Clipped output moments over mu in [0.2, 0.8], |alpha| <= 0.9, 10^6 steps each."""
    bad = []
    cells = [(mu, a) for mu in (0.2, 0.35, 0.5, 0.65, 0.8) for a in (-0.9, -0.5, 0.0, 0.5, 0.9)]
    for i, (mu, a) in enumerate(cells):
        Y = simulate_null(ARNullModel.from_moments(mu, a), 1_000_000, 900 + i)
        if abs(Y.mean() - mu) > 0.02 or abs(lag1(Y) - a) > 0.05:
            bad.append(f"({mu:g},{a:+g})")
    note(request, f"algebra exact; moments out of tolerance in {len(bad)}/{len(cells)} (mu, alpha) cells: "
                  + " ".join(bad))
    assert not bad


# -- 10 ----------------------------------------------------------------------

@criterion(10, "determinism")
def test_c10_pipeline_byte_identical(tmp_path, request):
    manifest = tmp_path / "m.json"
    manifest.write_text(json.dumps({"synth": {"n_channels": 16}, "montecarlo": {"n": 200}}))
    trees = []
    for run in ("a", "b"):
        assert main(["pipeline", "--manifest", str(manifest), "--out", str(tmp_path / run)]) == 0
        trees.append({p.name: p.read_bytes() for p in sorted((tmp_path / run).iterdir())})
    same = [k for k in trees[0] if trees[0][k] == trees[1].get(k)]
    note(request, f"{len(same)}/{len(trees[0])} pipeline artifacts byte-identical")
    assert trees[0].keys() == trees[1].keys() and len(same) == len(trees[0])


@criterion(10, "determinism")
def test_c10_stream_equals_replay(loops):
    lp = loops[0]
    ref = run_stream(lp.session, lp.model, lp.decoder)
    assert ref == lp.trace
    for size in (1, 64, 500, 4096):
        assert run_stream(lp.session, lp.model, lp.decoder, chunk_size=size) == ref


# -- 11 ----------------------------------------------------------------------

@criterion(11, "real-time budget")
def test_c11_per_step_latency(loops, request):
    lp = loops[0]
    dec = OnlineDecoder(lp.model, lp.decoder, lp.session.n_channels)
    step = dec.n_step
    x = lp.session.samples
    times = []
    for a in range(0, x.shape[1] - step + 1, step):
        t = time.perf_counter()
        out = dec.push(x[:, a:a + step])
        dt = time.perf_counter() - t
        if out:
            times.append(dt)
    times = np.array(times) * 1e3
    note(request, f"{len(times)} steps, median {np.median(times):.2f} ms, p99 {np.percentile(times, 99):.2f} ms, "
                  f"max {times.max():.2f} ms ({len(lp.model.retained_channels)} channels)")
    assert np.percentile(times, 99) < 50.0
