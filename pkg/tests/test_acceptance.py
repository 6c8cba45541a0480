"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is repeated in the terminal summary.
Tolerances are pinned to the published acceptance thresholds.
"""

import csv
import dataclasses
import math
import time

import numpy as np
import pytest

from fronthaul_sim import McConfig, PowerSplit, SystemConfig, cli
from fronthaul_sim.experiments import evaluate_point, preset
from fronthaul_sim.model import EstimationMode, derive_stats
from fronthaul_sim.montecarlo import paired_estimate
from fronthaul_sim.multibs import (
    _Candidate,
    _Scene,
    multibs_joint_backhaul,
    per_bs_rate,
    side_info_cov,
    wz_data_noise,
    wz_data_noise_rayleigh,
    wz_data_rate,
)
from fronthaul_sim.ratecore import (
    BackhaulSplit,
    ScalarNoise,
    cfe_rate,
    csi_noise_from_rate,
    data_noise_for_budget,
    data_rate_for_noise,
    ecf_joint_backhaul,
    ecf_separate_rate,
    kkt_residuals,
    received_cov_eigs,
    waterfill_for_budget,
)

from oracles import waterfill_grid

pytestmark = pytest.mark.slow


def _with_trials(spec, trials):
    return dataclasses.replace(spec, trials=trials)


def _check_runtime(start, limit_s):
    return time.perf_counter() - start <= limit_s


# --------------------------------------------------------------------------
# 1. CFE and ECF-separate coincide for a single-antenna Rayleigh link


def _snr_products(cfg, split, c_pilot, c_data):
    """Effective SNR times estimate variance under both strategies."""
    frac = cfg.data_fraction
    ecf = derive_stats(cfg, split)
    sp = csi_noise_from_rate(ecf, c_pilot, cfg)
    sd = data_noise_for_budget(received_cov_eigs(cfg, split.p_data), c_data, frac)
    e_err = ecf.err_var[0, 0]
    rho_ecf = split.p_data / (1 + split.p_data * (sp + e_err) + sd)
    ecf_product = rho_ecf * (ecf.est_var[0, 0] - sp)

    sp_c = data_noise_for_budget(received_cov_eigs(cfg, split.p_pilot), c_pilot, cfg.train_len / cfg.coherence_len)
    cfe = derive_stats(cfg, split, sp_c, EstimationMode.CFE)
    rho_cfe = split.p_data / (1 + sd + split.p_data * cfe.err_var[0, 0])
    return ecf_product, rho_cfe * cfe.est_var[0, 0]


def test_criterion_01_cfe_matches_ecf_separate(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_rho, worst_rate = 0.0, 0.0
    for _ in range(50):
        t = int(rng.integers(2, 51))
        pp, pd = 10 ** rng.uniform(-1, 3), 10 ** rng.uniform(-1, 3)
        c = rng.uniform(0.5, 10.0)
        cp = rng.uniform(0.02, 0.98) * c
        cfg = SystemConfig((1,), (1,), t, 1, (pp + (t - 1) * pd) / t, c)
        split = PowerSplit(pp, pd)
        a, b = _snr_products(cfg, split, cp, c - cp)
        worst_rho = max(worst_rho, abs(a - b) / abs(b))
        mc = McConfig(2000, seed=int(rng.integers(1 << 31)))
        bh = BackhaulSplit(cp, c - cp)
        x, y = cfe_rate(cfg, split, mc, bh).samples, ecf_separate_rate(cfg, split, mc, bh).samples
        worst_rate = max(worst_rate, float(np.max(np.abs(x - y) / np.maximum(np.abs(y), 1e-300))))
    ok = worst_rho <= 1e-12 and worst_rate <= 1e-12 and _check_runtime(start, 60)
    verdict(1, "CFE == ECF-separate", ok, f"max rel SNR gap {worst_rho:.2e}, max rel rate gap {worst_rate:.2e}")


# --------------------------------------------------------------------------
# 2. Joint compression never needs more data backhaul than separate


def test_criterion_02_jensen_gap(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    worst = math.inf
    for i in range(100):
        nt, nr = int(rng.integers(1, 3)), int(rng.integers(1, 4))
        t = int(rng.integers(nt + 1, 31))
        k = float(rng.choice([0.0, rng.uniform(0, 10)]))
        cfg = SystemConfig((nt,), (nr,), t, nt, 10 ** rng.uniform(0, 3), 6.0, rician_k=k)
        split = PowerSplit.from_fraction(cfg, rng.uniform(0.05, 0.6))
        stats = derive_stats(cfg, split)
        csi = rng.uniform(0.01, 1.0) * stats.min_est_var(0)
        noise = 10 ** rng.uniform(-2, 2)
        _, joint = ecf_joint_backhaul(cfg, split, csi, noise, McConfig(10_000, seed=i))
        separate = data_rate_for_noise(received_cov_eigs(cfg, split.p_data), noise, cfg.data_fraction)
        worst = min(worst, (separate - joint.mean) / max(joint.se, 1e-300))
    ok = worst >= -3 and _check_runtime(start, 300)
    verdict(2, "Jensen gap >= -3 SE", ok, f"smallest gap {worst:.2f} SE over 100 points")


# --------------------------------------------------------------------------
# 3. Water-filling against KKT conditions and a dense grid


def test_criterion_03_waterfilling(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(11)
    kkt, ups, gap, budget_err, inactive = 0.0, math.inf, 0.0, 0.0, 0
    for _ in range(20):
        h = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        spe = rng.uniform(0.5, 3.0)
        pd = 10 ** rng.uniform(0, 2)
        budget = rng.uniform(0.2, 6.0)
        sol = waterfill_for_budget(h, spe, budget, pd, 2)
        resid, upsilon = kkt_residuals(sol)
        kkt = max(kkt, float(np.max(np.abs(resid), initial=0.0)))
        ups = min(ups, float(np.min(upsilon, initial=math.inf)))
        inactive += upsilon.size
        grid, _ = waterfill_grid(sol.signal_eigs, spe, budget)
        gap = max(gap, abs(sol.rate - grid))
        budget_err = max(budget_err, abs(sol.budget_used - budget) / budget)
    ok = kkt <= 1e-9 and ups >= 0 and gap <= 1e-3 and budget_err <= 1e-4 and _check_runtime(start, 120)
    verdict(
        3,
        "water-filling KKT/grid/budget",
        ok,
        f"KKT {kkt:.1e}, min upsilon {ups:.3g} ({inactive} inactive), grid gap {gap:.1e}, budget {budget_err:.1e}",
    )


# --------------------------------------------------------------------------
# 4. Multi-BS formulas without side information reduce to single-BS ones


def test_criterion_04_multibs_reductions(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(5)
    worst = [0.0, 0.0, 0.0]
    for i in range(50):
        nt, nr = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        t = int(rng.integers(nt + 1, 31))
        cfg = SystemConfig((nt,), (nr,), t, nt, 10 ** rng.uniform(0, 3), rng.uniform(1.0, 10.0), rician_k=rng.uniform(0, 5))
        split = PowerSplit.from_fraction(cfg, rng.uniform(0.05, 0.6))
        mc = McConfig(2000, seed=i)
        scene = _Scene(cfg, split, mc)
        cand = _Candidate(scene, scene.empty_state(), 0)
        c = cfg.backhaul[0]
        cp = rng.uniform(scene.floor(0), c)
        rep = ecf_separate_rate(cfg, split, mc, BackhaulSplit(cp, c - cp))
        csi, noise = rep.params.csi_noise[0], rep.params.data_noise[0].variance
        # rate with side information vs single-BS rate
        r = per_bs_rate(cand.signal(csi), cand.sigma_pe(csi), noise, cfg.data_fraction).mean
        worst[0] = max(worst[0], abs(r - rep.sum_rate) / max(rep.sum_rate, 1e-300))
        # Wyner-Ziv data backhaul vs separate data backhaul
        wz = wz_data_rate(cand.separate_cov_eigs(csi), noise, cfg.data_fraction)
        sep = data_rate_for_noise(received_cov_eigs(cfg, split.p_data), noise, cfg.data_fraction)
        worst[1] = max(worst[1], abs(wz - sep) / sep)
        # joint backhaul with side information vs single-BS joint backhaul
        j_multi = multibs_joint_backhaul(cand.signal(csi), cand.sigma_pe(csi), noise, cfg.data_fraction).mean
        j_single = ecf_joint_backhaul(cfg, split, csi, noise, mc)[1].mean
        worst[2] = max(worst[2], abs(j_multi - j_single) / j_single)
    ok = max(worst) <= 1e-12 and _check_runtime(start, 60)
    verdict(4, "multi-BS reductions", ok, "max rel gaps rate {:.1e}, WZ {:.1e}, joint {:.1e}".format(*worst))


# --------------------------------------------------------------------------
# 5. Closed-form Rayleigh Wyner-Ziv noise vs bisection on the expectation


def test_criterion_05_rayleigh_closed_form(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    worst = 0.0
    for i in range(20):
        t = int(rng.integers(2, 21))
        pd = 10 ** rng.uniform(0, 2)
        cfg = SystemConfig((1,), (1, 1), t, 1, pd, rng.uniform(1.0, 8.0))
        split = PowerSplit.uniform(cfg)
        scene = _Scene(cfg, split, McConfig(100_000, seed=i))
        csi1 = rng.uniform(0.001, 0.5) * scene.stats.min_est_var(0)
        sd1 = 10 ** rng.uniform(-1, 1)
        h = scene.grams[0].matrices(csi1)
        state = side_info_cov(scene.empty_state(), h, 1.0 / (scene.recon_noise(0, csi1) + sd1), 0, csi1, ScalarNoise(sd1))
        cand = _Candidate(scene, state, 1)
        c_data = cfg.backhaul[1] * rng.uniform(0.3, 0.9)
        solved = wz_data_noise(cand.separate_cov_eigs(0.5 * scene.stats.min_est_var(1)), c_data, cfg.data_fraction)
        closed = wz_data_noise_rayleigh(cfg, pd, c_data, 1, [(0, csi1, scene.eps(0), sd1)])
        worst = max(worst, abs(closed - solved) / solved)
    ok = worst <= 1e-8 and _check_runtime(start, 120)
    verdict(5, "Rayleigh closed form vs bisection", ok, f"max rel gap {worst:.2e}")


# --------------------------------------------------------------------------
# 6. Dominance chain and crossovers on the single-link sweep


def test_criterion_06_dominance_chain(verdict):
    start = time.perf_counter()
    spec = _with_trials(preset("fig2"), 100_000)

    def run(c, s):
        return evaluate_point(spec, c, s, 0, keep_samples=True).report

    failures, notes = [], []
    for c in (4.0, 6.0, 8.0):
        r = {s: run(c, s) for s in ("cfe", "ecf_sep", "ecf_joint", "ecf_jac")}
        for hi, lo in (("ecf_jac", "ecf_joint"), ("ecf_joint", "ecf_sep")):
            d = paired_estimate(r[hi].samples, r[lo].samples)
            notes.append(f"C={c:g} {hi}-{lo}={d.mean:+.4f}")
            if d.mean < -3 * d.se:
                failures.append(f"{hi}<{lo} at C={c:g}")
        d = paired_estimate(r["ecf_sep"].samples, r["cfe"].samples)
        se = max(d.se, math.hypot(r["ecf_sep"].se, r["cfe"].se))
        if abs(d.mean) > 3 * se:
            failures.append(f"sep!=cfe at C={c:g}")
    jac2 = run(2.0, "ecf_jac")
    semi = max((run(2.0, s) for s in ("semi_const", "semi_select")), key=lambda rep: rep.sum_rate)
    d = paired_estimate(semi.samples, jac2.samples)
    notes.append(f"C=2 {semi.strategy}-jac={d.mean:+.4f}")
    if d.mean < 3 * d.se:
        failures.append("semi-coherent does not beat JAC at C=2")
    jac10, nc10 = run(10.0, "ecf_jac"), run(10.0, "noncoherent")
    notes.append(f"C=10 nc-jac={nc10.sum_rate - jac10.sum_rate:+.4f}")
    if nc10.sum_rate < jac10.sum_rate - 3 * math.hypot(nc10.se, jac10.se):
        failures.append("non-coherent below JAC at C=10")
    ok = not failures and _check_runtime(start, 900)
    verdict(6, "dominance chain and crossovers", ok, "; ".join(failures or notes))


# --------------------------------------------------------------------------
# 7. JAC approaches joint compression as the channel turns line-of-sight


def test_criterion_07_rician_convergence(verdict):
    start = time.perf_counter()
    spec = preset("fig6")
    gaps = {}
    for k in (0.0, 10.0):
        jac = evaluate_point(spec, k, "ecf_jac", 0, keep_samples=True).report
        joint = evaluate_point(spec, k, "ecf_joint", 0, keep_samples=True).report
        gaps[k] = paired_estimate(jac.samples, joint.samples)
    g0, g10 = gaps[0.0], gaps[10.0]
    shrink = g0.mean - g10.mean
    ok = shrink > 3 * math.hypot(g0.se, g10.se) and _check_runtime(start, 600)
    verdict(7, "JAC-joint gap shrinks with K", ok, f"gap K=0 {g0.mean:.4f}+-{g0.se:.4f}, K=10 {g10.mean:.4f}+-{g10.se:.4f}")


# --------------------------------------------------------------------------
# 8. Inter-cell gain: interference first hurts, then helps


def test_criterion_08_intercell_nonmonotone(verdict):
    start = time.perf_counter()
    spec = preset("fig5")
    # every sweep point reuses the seed, so the difference is measured on paired samples
    reps = {a: evaluate_point(spec, a, "ecf_jac", 0, keep_samples=True).report for a in spec.values}
    low = min(reps, key=lambda a: reps[a].sum_rate)
    d = paired_estimate(reps[1.0].samples, reps[low].samples)
    unpaired = math.hypot(reps[1.0].se, reps[low].se)
    ok = low != 1.0 and d.mean >= 3 * d.se and _check_runtime(start, 600)
    verdict(
        8,
        "inter-cell non-monotonicity",
        ok,
        f"rate(1.0)-min(alpha={low:g}) = {d.mean:.4f}, paired SE {d.se:.4f} (unpaired {unpaired:.4f})",
    )


# --------------------------------------------------------------------------
# 9 and 10 share one single-link sweep written through the CLI


@pytest.fixture(scope="module")
def fig2_sweep(tmp_path_factory):
    out = tmp_path_factory.mktemp("fig2") / "serial.csv"
    start = time.perf_counter()
    assert cli.main(["run", "--preset", "fig2", "--trials", "10000", "--seed", "1", "-o", str(out)]) == 0
    return out, time.perf_counter() - start


def test_criterion_09_cutset(verdict, fig2_sweep):
    path, elapsed = fig2_sweep
    rows = list(csv.DictReader(path.open()))
    bound = {r["sweep_value"]: r for r in rows if r["strategy"] == "cutset"}
    worst, where = -math.inf, ""
    for r in rows:
        b = bound[r["sweep_value"]]
        excess = (float(r["rate"]) - float(b["rate"])) / max(math.hypot(float(r["se"]), float(b["se"])), 1e-12)
        if excess > worst:
            worst, where = excess, f"{r['strategy']} at C={r['sweep_value']}"
    ok = worst <= 3 and elapsed <= 300
    verdict(9, "cut-set bound", ok, f"largest excess {worst:.2f} SE ({where})")


def test_criterion_10_determinism(verdict, fig2_sweep, tmp_path):
    serial, _ = fig2_sweep
    start = time.perf_counter()
    parallel = tmp_path / "parallel.csv"
    assert cli.main(["run", "--preset", "fig2", "--trials", "10000", "--seed", "1", "--jobs", "8", "-o", str(parallel)]) == 0
    same = serial.read_bytes() == parallel.read_bytes()
    ok = same and _check_runtime(start, 300)
    verdict(10, "1 vs 8 workers byte-identical", ok, f"{len(serial.read_bytes())} bytes, identical={same}")
