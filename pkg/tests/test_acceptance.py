"""Acceptance suite: every criterion as one test, at its stated tolerance.

The stochastic criteria (A1-A5) share two session fixtures: one
calibration on the narrowband preset and one 20-sample threshold table
per experiment x pathway configuration (each sample the mean of 5
adaptive tracks), all under fixed seeds. Expect roughly 15 minutes on a
single core; run with ``pytest tests/test_acceptance.py -v -s`` to see
the per-criterion lines as they complete.
"""

import json

import numpy as np
import pytest

from maskrel import calibration as cal
from maskrel.cli import main as cli_main
from maskrel.model import (
    PathwayConfig,
    PathwayOrder,
    binaural_pathway,
    decision_energy,
    pathway_output,
    peripheral,
)
from maskrel.signals import erb_bandwidth
from maskrel.staircase import (
    PsychometricObserver,
    ThresholdObserver,
    run_track,
    trial_rng,
)
from maskrel.stimulus import assemble_trial

SEED_CALIBRATION = 2026
SEED_TABLES = {"exp2": 404, "exp3": 504}
ANCHORS = cal.CalibrationAnchors()
ORDERS = list(PathwayOrder)


def report(criterion: str, passed: bool, detail: str) -> None:
    print(f"[{criterion}] {'PASS' if passed else 'FAIL'} - {detail}")


@pytest.fixture(scope="session")
def calibration():
    return cal.calibrate(
        cal.EXPERIMENTS["exp2"], ANCHORS, seed=SEED_CALIBRATION
    )


@pytest.fixture(scope="session")
def tables(calibration):
    out = {}
    for i, order in enumerate(ORDERS):
        cfg = calibration.configs[order]
        for exp_name in ("exp2", "exp3"):
            out[(exp_name, order)] = cal.run_experiment(
                cal.EXPERIMENTS[exp_name], cfg,
                seed=SEED_TABLES[exp_name] + i,
                n_threshold_samples=20, n_runs=5,
            )
    return out


def test_A1_calibration_closure(tables):
    masker = cal.EXPERIMENTS["exp2"].masker_level
    targets = {
        ("diotic", "harmonic"): ANCHORS.diotic_target(masker),
        ("dichotic", "harmonic"): ANCHORS.dichotic_target(masker),
    }
    errors = {}
    for order in ORDERS:
        means = tables[("exp2", order)].means()
        for key, target in targets.items():
            errors[(order.value, key[0])] = means[key] - target
    worst = max(abs(v) for v in errors.values())
    detail = ", ".join(f"{k[0]}/{k[1]}: {v:+.2f} dB" for k, v in errors.items())
    report("A1", worst <= 1.0, f"anchor errors {detail}")
    assert worst <= 1.0


def test_A2_harmonic_bmld(tables):
    values = {
        order.value: tables[("exp2", order)].bmlds()["harmonic"]
        for order in ORDERS
    }
    ok = all(8.5 <= v <= 11.5 for v in values.values())
    report("A2", ok, f"harmonic BMLD {values} (window 10 +- 1.5 dB)")
    assert ok, values


def test_A3_exp2_diotic_release(tables):
    values = {
        order.value: tables[("exp2", order)].releases()["diotic"]
        for order in ORDERS
    }
    ok = all(4.0 <= v <= 8.0 for v in values.values())
    report("A3", ok, f"exp2 diotic release {values} (window [4, 8] dB)")
    assert ok, values


def test_A4_exp2_dichotic_release(tables):
    values = {
        order: tables[("exp2", order)].releases()["dichotic"]
        for order in ORDERS
    }
    checks = {
        PathwayOrder.BINAURAL_THEN_MOD:
            -0.5 <= values[PathwayOrder.BINAURAL_THEN_MOD] <= 2.5,
        PathwayOrder.MOD_THEN_BINAURAL:
            abs(values[PathwayOrder.MOD_THEN_BINAURAL]) <= 1.5,
        PathwayOrder.NO_MOD_IN_BINAURAL:
            abs(values[PathwayOrder.NO_MOD_IN_BINAURAL]) <= 1.5,
    }
    detail = {o.value: round(v, 2) for o, v in values.items()}
    report("A4", all(checks.values()), f"exp2 dichotic release {detail}")
    assert all(checks.values()), detail


def test_A5_exp3_overprediction_reproduced(tables):
    human_drop = cal.HUMAN_REFERENCE["exp3"]["mistuning_release_diotic_db"]
    deltas, releases3 = {}, {}
    for order in ORDERS:
        r2 = tables[("exp2", order)].releases()["diotic"]
        r3 = tables[("exp3", order)].releases()["diotic"]
        deltas[order.value] = r3 - r2
        releases3[order.value] = r3
    consistent = all(abs(d) <= 2.0 for d in deltas.values())
    # the model must KEEP over-predicting: humans dropped to 2.1 dB
    still_large = all(r > human_drop for r in releases3.values())
    detail = (f"exp3-exp2 deltas {dict((k, round(v, 2)) for k, v in deltas.items())}, "
              f"exp3 releases {dict((k, round(v, 2)) for k, v in releases3.items())} "
              f"vs human {human_drop}")
    report("A5", consistent and still_large, detail)
    assert consistent, deltas
    assert still_large, releases3


ORACLE_LEVELS = [
    65, 65, 60, 60, 55, 55, 50, 50, 45, 45, 40, 45, 45, 43, 43, 41,
    43, 43, 42, 43, 43, 42, 43, 43, 42, 43, 43, 42, 43, 43,
]


def test_A6_staircase_oracle():
    spec = cal.EXPERIMENTS["exp2"].condition("diotic", "harmonic")
    run = run_track(spec, ThresholdObserver(43.0), [1], keep_records=True)
    trace_ok = ([r.level for r in run.records] == ORACLE_LEVELS
                and run.threshold == 42.5)

    theta, slope = 45.0, 2.0
    p = 1 / np.sqrt(2)
    analytic = theta + slope * np.log(p / (1 - p))
    observer = PsychometricObserver(
        lambda level: 1 / (1 + np.exp(-(level - theta) / slope))
    )
    thresholds = [
        run_track(spec, observer, [606, k]).threshold for k in range(100)
    ]
    mean = float(np.mean(thresholds))
    logistic_ok = abs(mean - analytic) <= 1.0
    report("A6", trace_ok and logistic_ok,
           f"lattice walk {'exact' if trace_ok else 'MISMATCH'}; logistic "
           f"mean {mean:.2f} vs analytic 70.7%-point {analytic:.2f} dB")
    assert trace_ok
    assert logistic_ok, (mean, analytic)


def test_A7_model_nulls_and_mechanism(calibration):
    # EC null on 1000 random diotic stimuli through every configuration
    rng = np.random.default_rng(515)
    nonzero = 0
    for i in range(1000):
        exp = cal.EXPERIMENTS["exp2" if i % 2 == 0 else "exp3"]
        tuning = "harmonic" if i % 4 < 2 else "mistuned"
        spec = exp.condition("diotic", tuning)
        level = float(rng.uniform(20.0, 70.0))
        trial = assemble_trial(spec, level, rng)
        internal = peripheral(trial.comparisons[i % 2])
        for order in ORDERS:
            out = binaural_pathway(internal, spec.is_mistuned,
                                   PathwayConfig(order))
            if np.any(out.samples != 0.0):
                nonzero += 1
    null_ok = nonzero == 0

    # modulation-domain SNR ordering: per-draw detectability of the
    # 20-Hz beat cue in the mistuned condition exceeds the 40-Hz cue in
    # the harmonic condition at the same target level
    def dprime(spec, n_draws=200, level=55.0):
        cfg = PathwayConfig(PathwayOrder.BINAURAL_THEN_MOD)
        draw_rng = np.random.default_rng(616)
        diff = np.empty(n_draws)
        for k in range(n_draws):
            trial = assemble_trial(spec, level, draw_rng)
            e_t = decision_energy(pathway_output(
                trial.comparison(trial.target_position), False,
                spec.is_mistuned, cfg), 0.0, draw_rng)
            e_r = decision_energy(pathway_output(
                trial.comparison(1 - trial.target_position), False,
                spec.is_mistuned, cfg), 0.0, draw_rng)
            diff[k] = e_t - e_r
        return float(diff.mean() / diff.std())

    d_mist = dprime(cal.EXPERIMENTS["exp2"].condition("diotic", "mistuned"))
    d_harm = dprime(cal.EXPERIMENTS["exp2"].condition("diotic", "harmonic"))
    snr_ok = d_mist > 1.2 * d_harm

    # center-frequency optimality of the configured model (fitted
    # sigma_m): percent correct peaks near 40 Hz (harmonic) / 20 Hz
    # (mistuned), with cross-dominance between the two filters
    sigma_m = calibration.sigma_m_fit.sigma

    def pc_scan(spec, level, n_draws=150):
        grid = np.arange(5.0, 55.0, 5.0)
        pcs = []
        for mf in grid:
            cfg = PathwayConfig(
                PathwayOrder.BINAURAL_THEN_MOD, sigma_m, 0.0,
                mod_freq_harmonic=mf, mod_freq_mistuned=mf,
            )
            scan_rng = np.random.default_rng(717)
            hits = 0
            for _ in range(n_draws):
                trial = assemble_trial(spec, level, scan_rng)
                e_t = decision_energy(pathway_output(
                    trial.comparison(trial.target_position), False,
                    spec.is_mistuned, cfg), sigma_m, scan_rng)
                e_r = decision_energy(pathway_output(
                    trial.comparison(1 - trial.target_position), False,
                    spec.is_mistuned, cfg), sigma_m, scan_rng)
                hits += e_t > e_r
            pcs.append(hits / n_draws)
        return grid, np.array(pcs)

    grid, pc_harm = pc_scan(
        cal.EXPERIMENTS["exp2"].condition("diotic", "harmonic"), 58.0
    )
    _, pc_mist = pc_scan(
        cal.EXPERIMENTS["exp2"].condition("diotic", "mistuned"), 51.0
    )
    harm_best = grid[int(np.argmax(pc_harm))]
    mist_best = grid[int(np.argmax(pc_mist))]
    i20, i40 = list(grid).index(20.0), list(grid).index(40.0)
    tuning_ok = (
        30.0 <= harm_best <= 50.0
        and 15.0 <= mist_best <= 25.0
        and pc_harm[i40] > pc_harm[i20]
        and pc_mist[i20] > pc_mist[i40]
    )
    report(
        "A7", null_ok and snr_ok and tuning_ok,
        f"EC-null violations {nonzero}/1000; d' mistuned {d_mist:.2f} vs "
        f"harmonic {d_harm:.2f}; optimal mod freq harmonic {harm_best:.0f} Hz"
        f" / mistuned {mist_best:.0f} Hz",
    )
    assert null_ok
    assert snr_ok, (d_mist, d_harm)
    assert tuning_ok, (harm_best, mist_best, pc_harm.tolist(), pc_mist.tolist())


def test_A8_dsp_responses():
    from maskrel.signals import MonoSignal, butterworth_lowpass, gammatone_bandpass

    fs = 48000.0
    imp = MonoSignal(np.r_[1.0, np.zeros(2**15 - 1)], fs)
    y = gammatone_bandpass(imp, 800.0, erb_bandwidth(800.0))
    nfft = 2**20
    power = np.abs(np.fft.rfft(y.samples, nfft)) ** 2
    freqs = np.fft.rfftfreq(nfft, 1 / fs)
    peak = float(freqs[int(np.argmax(power))])
    erb_measured = float(np.trapezoid(power, freqs) / power.max())
    gt_ok = abs(peak - 800.0) <= 2.0 and abs(erb_measured / 111.07 - 1) <= 0.05

    cut_ok = {}
    t = np.arange(int(2 * fs)) / fs
    for cutoff, order in ((380.0, 4), (770.0, 5)):
        x = MonoSignal(np.sin(2 * np.pi * cutoff * t), fs)
        filtered = butterworth_lowpass(x, cutoff, order)
        seg = slice(int(0.5 * fs), int(1.9 * fs))
        gain = 20 * np.log10(
            np.sqrt(np.mean(filtered.samples[seg] ** 2)) / np.sqrt(0.5)
        )
        cut_ok[cutoff] = abs(gain - (-3.0103)) <= 0.2
    ok = gt_ok and all(cut_ok.values())
    report("A8", ok,
           f"gammatone peak {peak:.2f} Hz, ERB {erb_measured:.2f} Hz; "
           f"butterworth -3 dB points ok: {cut_ok}")
    assert ok, (peak, erb_measured, cut_ok)


def test_A9_results_regenerate_byte_identically(tmp_path):
    base_args = [
        "simulate", "--experiment", "exp2", "--order", "mod-then-binaural",
        "--seed", "31", "--samples", "2", "--runs", "1",
        "--sigma-m", "4e-3", "--sigma-b", "2e-3",
    ]
    first, second = tmp_path / "a", tmp_path / "b"
    assert cli_main(base_args + ["--outdir", str(first)]) == 0
    summary = json.loads(
        (first / "summary_exp2_mod-then-binaural.json").read_text()
    )
    rerun_cfg = tmp_path / "rerun.json"
    rerun_cfg.write_text(json.dumps(
        {**summary["run_config"], "outdir": str(second)}
    ))
    assert cli_main(["simulate", "--config", str(rerun_cfg)]) == 0
    identical = all(
        (first / name).read_bytes() == (second / name).read_bytes()
        for name in ("results_exp2_mod-then-binaural.csv",
                     "summary_exp2_mod-then-binaural.json")
    )
    report("A9", identical, "results and summary regenerate byte-identically "
                            "from the embedded config")
    assert identical


def test_B1_api_track_equivalence():
    from fastapi.testclient import TestClient

    from maskrel.service import create_app
    from maskrel.staircase import StaircaseState, staircase_step

    spec = cal.EXPERIMENTS["exp2"].condition("diotic", "harmonic")
    threshold, seed = 43.0, 909
    client = TestClient(create_app())
    payload = client.post("/sessions", json={
        "experiment": "exp2", "ipd": "diotic", "tuning": "harmonic",
        "seed": seed,
    }).json()
    sid = payload["session_id"]
    state = StaircaseState()
    levels = []
    trial = payload["trial"]
    while True:
        n = trial["number"]
        position = assemble_trial(
            spec, state.current_level, trial_rng([seed], n)
        ).target_position
        correct = state.current_level >= threshold
        chosen = 2 + (position if correct else 1 - position)
        levels.append(state.current_level)
        feedback = client.post(
            f"/sessions/{sid}/response", json={"trial": n, "chosen": chosen}
        ).json()
        assert feedback["correct"] == correct
        state = staircase_step(state, correct)
        if feedback["status"] == "finished":
            break
        trial = feedback["next_trial"]
    oracle = run_track(spec, ThresholdObserver(threshold), [seed],
                       keep_records=True)
    same_track = levels == [r.level for r in oracle.records]
    same_thr = feedback["threshold_db"] == oracle.threshold
    report("B1", same_track and same_thr,
           f"HTTP track of {len(levels)} trials identical to in-process "
           f"oracle, threshold {feedback['threshold_db']:.2f} dB")
    assert same_track and same_thr


def test_B2_audio_parity(tmp_path):
    from fastapi.testclient import TestClient

    from maskrel.service import create_app

    client = TestClient(create_app())
    payload = client.post("/sessions", json={
        "experiment": "exp3", "ipd": "dichotic", "tuning": "mistuned",
        "seed": 1234,
    }).json()
    served = {
        k: client.get(payload["trial"]["intervals"][k - 1]).content
        for k in (1, 2, 3)
    }
    parity = True
    for k in (1, 2, 3):
        out = tmp_path / f"i{k}.wav"
        rc = cli_main([
            "synth", "--experiment", "exp3", "--ipd", "dichotic",
            "--tuning", "mistuned", "--level", "65", "--seed", "1234",
            "--trial", "1", "--interval", str(k), "--out", str(out),
        ])
        assert rc == 0
        parity = parity and out.read_bytes() == served[k]
    report("B2", parity, "all three served intervals byte-identical to "
                         "CLI synthesis")
    assert parity
