"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line verdict that the terminal summary prints.
"""

import gc
import json
import os

import numpy as np
import pytest

from lrlace import spectral
from lrlace.cli import main
from lrlace.convbounds import Regime, canonical_tuple, verify_bound
from lrlace.convolution import audit_assumption_Dn
from lrlace.green import (GreenMethod, GreenSpec, audit_green_asymptotics, audit_green_upper_bound,
                          green_function, resolvent_residual)
from lrlace.kernels import LongRangeParams, build_kernel, nearest_neighbor_kernel
from lrlace.lace import LaceModel, effective_step, extract_pi, reconstruct_green, verify_green_identity
from lrlace.lattice import BoxSpec, LatticeField
from lrlace.models import (PercConfig, bubble_triangle, critical_green_spectrum, percolation_two_point,
                           periodize, saw_enumerate, saw_two_point)

VARIANTS = ["DirectPowerLaw", "CompoundZeta"]


def _critical(params, M):
    D, _ = build_kernel(params, BoxSpec(params.d, M))
    consts = spectral.estimate_v(None, params)
    S = green_function(D, GreenSpec(1.0, GreenMethod.FourierInversion, params), consts, consume=True)
    return S, consts


def test_criterion_01_resolvent(acceptance):
    worst = 0.0
    for d, alpha, L in [(3, 1.5, 3.0), (4, 2.0, 5.0)]:
        for variant in VARIANTS:
            params = LongRangeParams(d, alpha, L, variant)
            D, _ = build_kernel(params, BoxSpec(d, 64))
            for p in (0.0, 0.5, 0.9):
                S = green_function(D, GreenSpec(p, GreenMethod.FourierInversion, params))
                worst = max(worst, resolvent_residual(S, D, p)["relative"])
            del D, S
            gc.collect()
    ok = worst <= 1e-10
    acceptance(1, ok, f"max relative resolvent residual {worst:.2e} (<= 1e-10)")
    assert ok


def test_criterion_02_geometric_sum(acceptance):
    worst = 0.0
    for variant in VARIANTS:
        params = LongRangeParams(3, 1.5, 3.0, variant)
        D, _ = build_kernel(params, BoxSpec(3, 32))
        for p in (0.1, 0.5, 0.9):
            S = green_function(D, GreenSpec(p, GreenMethod.FourierInversion, params))
            worst = max(worst, abs(S.total() * (1 - p) - 1))
    ok = worst < 1e-6
    acceptance(2, ok, f"max |(1-p) sum S_p - 1| = {worst:.2e} (< 1e-6)")
    assert ok


def test_criterion_03_upper_bound(acceptance):
    params = LongRangeParams(4, 2.0, 5.0)
    S, _ = _critical(params, 96)
    rep = audit_green_upper_bound(S, params)
    del S
    gc.collect()
    m = rep.metrics
    acceptance(3, rep.passed, f"outer trend slope {m['trend_slope']:.4f} (<= 0.02), "
                              f"constant {m['constant']:.3g}, all-shell slope {m['full_window_slope']:.4f}")
    assert rep.passed


def test_criterion_04_asymptotics(acceptance):
    parts, ok = [], True
    for d in (4, 3):
        params = LongRangeParams(d, 2.0, 3.0)
        S, consts = _critical(params, 128)
        table = audit_green_asymptotics(S, consts, params)
        del S
        gc.collect()
        m = table.report.metrics
        ok = ok and table.report.passed
        parts.append(f"d={d}: final mean {m['final_window_mean']:.3f}, decreasing={m['deviation_decreasing']}, "
                     f"control drift {m['control_drift']:.3f} plateau={m['control_plateau']}")
    acceptance(4, ok, "; ".join(parts))
    assert ok


def test_criterion_05_assumption_audits(acceptance):
    parts, ok = [], True
    for variant in VARIANTS:
        for L in (5.0, 10.0):
            params = LongRangeParams(4, 2.0, L, variant)
            D, _ = build_kernel(params, BoxSpec(4, 64))
            hat = spectral.audit_assumption_hatD(D, params).report
            dn = audit_assumption_Dn(D, params, n_max=32)
            del D
            gc.collect()
            ok = ok and hat.passed and dn.passed
            parts.append(f"{variant[:6]} L={L:g}: hatD {hat.status}, Dn {dn.status} "
                         f"(sup growth {dn.metrics['sup_growth']:.3f}, x growth {dn.metrics['x_growth']:.3f})")
    nn_params = LongRangeParams(4, 2.0, 1.0, "NearestNeighbor")
    nn = audit_assumption_Dn(nearest_neighbor_kernel(BoxSpec(4, 16)), nn_params, n_max=32)
    ok = ok and not nn.passed
    parts.append(f"nearest-neighbour control {nn.status} (tail form {nn.metrics['tail_form']:.1e})")
    acceptance(5, ok, "; ".join(parts))
    assert ok


def test_criterion_06_convolution_bounds(acceptance):
    parts, ok = [], True
    for regime in Regime:
        rep = verify_bound(canonical_tuple(regime, L=2.0))
        ok = ok and rep.status == "PASS"
        parts.append(f"{regime.value}: C={rep.empirical_C:.3g} slope={rep.trend_slope:.3f} "
                     f"shift={rep.L_check['relative_shift']:.3f} {rep.status}")
    control = verify_bound(canonical_tuple(Regime.A1_eq_d_A2_eq_1, L=2.0), with_loglog=False, check_L=False)
    ok = ok and control.status == "FAIL"
    parts.append(f"loglog dropped: slope={control.trend_slope:.3f} {control.status}")
    acceptance(6, ok, "; ".join(parts))
    assert ok


def test_criterion_07_sandwich(acceptance):
    params = LongRangeParams(2, 1.0, 1.0)
    D, _ = build_kernel(params, BoxSpec(2, 8))
    box = BoxSpec(2, 8, torus=True)
    series = saw_enumerate(D, 5, box)
    tp = saw_two_point(series, 0.5)
    saw_ok = all(tp.checks[k] for k in ("coefficients_below_rw", "below_rw", "lower", "upper"))
    p = 0.5
    perc = percolation_two_point(D, PercConfig(box, p, 10_000, seed=2024))
    Dt = periodize(D, 8)
    S = green_function(Dt, GreenSpec(p, GreenMethod.FourierInversion, params))
    excess = float(np.max(perc.field.values - S.full() - 3 * perc.stderr))
    perc_ok = excess <= 0
    ok = saw_ok and perc_ok
    acceptance(7, ok, f"SAW N=5 checks {tp.checks}; percolation max(G - S - 3 sigma) = {excess:.3g}")
    assert ok


def test_criterion_08_lace_round_trip(acceptance):
    params = LongRangeParams(2, 1.0, 1.0)
    D, _ = build_kernel(params, BoxSpec(2, 8))
    box = BoxSpec(2, 8, torus=True)
    Dt = periodize(D, 8)
    p = 0.5
    G = saw_two_point(saw_enumerate(D, 4, box), p).field
    ex = extract_pi(G, Dt, p, LaceModel.SAW)
    round_trip = float(np.max(np.abs(reconstruct_green(ex, Dt).values - G.values)))
    S = green_function(Dt, GreenSpec(p, GreenMethod.FourierInversion, params))
    rw = extract_pi(S, Dt, p)
    rw_dev = (rw.Pi - LatticeField.delta(rw.Pi.box, symmetric=rw.Pi.symmetric)).abs_total()
    eff = effective_step(ex.Pi, Dt, p)
    ident = verify_green_identity(G, ex, eff, params)
    m = ident.metrics
    ok = round_trip <= 1e-10 and rw_dev <= 1e-12 and ident.passed
    acceptance(8, ok, f"round trip {round_trip:.1e}, RW |Pi - delta|_1 {rw_dev:.1e}, identity "
                      f"{m['max_relative_deviation']:.1e}, chi {m['chi_direct']:.6f} vs {m['chi_lace']:.6f}")
    assert ok


def _spectrum(d, M):
    D, _ = build_kernel(LongRangeParams(d, 2.0, 1.0), BoxSpec(d, M))
    return critical_green_spectrum(D)


def test_criterion_09_bubble_triangle(acceptance):
    b4 = bubble_triangle(_spectrum(4, 32), _spectrum(4, 64)).bubble_change
    t6 = bubble_triangle(_spectrum(6, 8), _spectrum(6, 16)).triangle_change
    b3 = bubble_triangle(_spectrum(3, 32), _spectrum(3, 64)).bubble_change
    ok = b4 < 0.05 and t6 < 0.05 and b3 > 0.20
    acceptance(9, ok, f"d=4 bubble change {b4:.2%}, d=6 triangle change {t6:.2%}, d=3 bubble growth {b3:.1%}")
    assert ok


def test_criterion_10_delta_decay(acceptance):
    vals = {}
    for L in (5.0, 10.0):
        params = LongRangeParams(6, 2.0, L)
        D, _ = build_kernel(params, BoxSpec(6, 20))
        vals[L] = spectral.compute_delta_m(D, 3, params)
        del D
        gc.collect()
    ratio = vals[5.0] / vals[10.0]
    ok = ratio >= 3
    acceptance(10, ok, f"delta_3(L=5) / delta_3(L=10) = {ratio:.1f} (>= 3)")
    assert ok


def test_criterion_11_determinism(acceptance, tmp_path, monkeypatch):
    for name in list(os.environ):
        if name.startswith("LRLACE_"):
            monkeypatch.delenv(name)
    cfg = tmp_path / "run.cfg"
    cfg.write_text("d = 3\nalpha = 2.0\nL = 3.0\nM = 16\np = 0.5\nconv_d = 2\ntuples = 3,0,2,0\n"
                   "check_L = false\nmodel = percolation\nmodel_M = 4\nsamples = 200\n")
    mismatched = []
    for command in ("kernel", "green", "convbound", "model"):
        runs = []
        for i in range(2):
            out = tmp_path / f"{command}{i}"
            assert main([command, "--config", str(cfg), "--out", str(out), "--seed", "99"]) in (0, 1)
            runs.append({f: (out / f).read_bytes() for f in sorted(os.listdir(out)) if "." in f})
        if runs[0] != runs[1]:
            mismatched.append(command)
    ok = not mismatched
    acceptance(11, ok, "all commands byte-identical on rerun" if ok else f"differences in {mismatched}")
    assert ok
