"""``lrlace`` command line: kernel, green, convbound, model and audit-all."""

from __future__ import annotations

import argparse
import io
import json
import logging
import os
import sys

import numpy as np

from .. import __version__
from .. import convbounds as cb
from .. import green as gr
from .. import lace, models, spectral
from ..kernels import LongRangeParams, build_kernel, kernel_audit
from ..lattice import BoxSpec, LatticeField
from ..reports import _clean
from .cache import FieldCache
from .config import RunConfig, describe, load_config
from .errors import EXIT_AUDIT, EXIT_OK, CliError, PreconditionError

LOGGER = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# output

class Output:
    """Writes JSON and CSV files stamped with the config hash and version."""

    def __init__(self, directory: str, cfg: RunConfig, command: str):
        self.directory = directory
        self.cfg = cfg
        self.command = command
        self.written = []
        os.makedirs(directory, exist_ok=True)

    def _path(self, name: str) -> str:
        return os.path.join(self.directory, name)

    def _write(self, name: str, text: str):
        path = self._path(name)
        tmp = path + ".tmp"
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
        self.written.append(name)

    def json(self, name: str, result: dict):
        doc = dict(artifact_version=__version__, command=self.command, config_hash=self.cfg.hash(),
                   config=self.cfg.as_dict(), result=_clean(result))
        self._write(name, json.dumps(doc, sort_keys=True, indent=1) + "\n")

    def csv(self, name: str, body: str):
        head = (f"# artifact_version={__version__}\n# command={self.command}\n"
                f"# config_hash={self.cfg.hash()}\n")
        self._write(name, head + body)


# --------------------------------------------------------------------------
# shared pieces

def _params(cfg: RunConfig, d=None, L=None) -> LongRangeParams:
    return LongRangeParams(cfg["d"] if d is None else d, cfg["alpha"], cfg["L"] if L is None else L,
                           variant=cfg["variant"], profile=cfg["profile"], t_max=cfg["t_max"])


def _kernel(cfg: RunConfig, out_dir: str, params: LongRangeParams | None = None, M: int | None = None,
            symmetric: bool | None = None) -> tuple:
    """Kernel from the cache or freshly built; returns ``(D, source)``."""
    params = _params(cfg) if params is None else params
    M = cfg["M"] if M is None else M
    symmetric = cfg["symmetric"] if symmetric is None else symmetric
    key = f"{params.key()};M={M};symmetric={symmetric}"
    cache = FieldCache(cfg["cache_dir"] or os.path.join(out_dir, "cache")) if cfg["cache"] else None
    if cache is not None:
        D = cache.load("kernel", key, "build_kernel")
        if D is not None:
            return D, "cache"
    D, tail = build_kernel(params, BoxSpec(params.d, M), symmetric=symmetric)
    if cache is not None:
        cache.store(D, "kernel", key, "build_kernel")
    return D, "built"


def _axis_table(S: LatticeField, window: float) -> str:
    R = gr.trusted_window(S.box, window)
    buf = io.StringIO()
    buf.write("x_norm,direction_id,S\n")
    for dir_id, direction in enumerate(gr._directions(S.box.d)):
        step = int(max(direction))
        for t in range(0, R // step + 1):
            x = np.asarray(direction) * t
            buf.write(f"{float(np.linalg.norm(x))!r},{dir_id},{S.at(x)!r}\n")
    return buf.getvalue()


# --------------------------------------------------------------------------
# commands

def cmd_kernel(cfg: RunConfig, out: Output) -> list:
    params = _params(cfg)
    D, source = _kernel(cfg, out.directory)
    reports = [kernel_audit(D)]
    if params.variant.value != "NearestNeighbor":
        reports.append(spectral.audit_assumption_hatD(D, params).report)
    out.json("kernel.json", dict(source=source, params=params.key(), M=D.box.M,
                                 reports=[r.to_dict() for r in reports]))
    return [r.status for r in reports]


def cmd_green(cfg: RunConfig, out: Output) -> list:
    params = _params(cfg)
    try:
        spec = gr.GreenSpec(cfg["p"], cfg["method"], params)
    except ValueError as exc:
        raise PreconditionError(str(exc)) from None
    D, _ = _kernel(cfg, out.directory, symmetric=True if cfg["p"] == 1.0 else None)
    consts = spectral.estimate_v(None, params) if cfg["p"] == 1.0 else None
    S = gr.green_function(D, spec, consts=consts)
    result = dict(p=cfg["p"], method=spec.method.value, meta=S.meta)
    statuses = []
    if cfg["p"] < 1.0:
        res = gr.resolvent_residual(S, D, cfg["p"], cfg["window"])
        chi = S.total()
        result.update(resolvent=res, susceptibility=chi, geometric_target=1.0 / (1.0 - cfg["p"]))
        ok = res["relative"] < 1e-10 and abs(chi * (1.0 - cfg["p"]) - 1.0) < 1e-6
        statuses.append("PASS" if ok else "FAIL")
    if cfg["p"] > 0.0:
        up = gr.audit_green_upper_bound(S, params, window=cfg["window"])
        result["upper_bound"] = up.to_dict()
        statuses.append(up.status)
    if cfg["p"] == 1.0 and params.alpha == 2:
        table = gr.audit_green_asymptotics(S, consts, params, tolerance=cfg["tolerance"],
                                           window=cfg["window"], r_min=cfg["r_min"])
        result["asymptotics"] = table.report.to_dict()
        out.csv("asymptotics.csv", table.to_csv())
        statuses.append(table.report.status)
    out.csv("green_axis.csv", _axis_table(S, cfg["window"]))
    out.json("green.json", result)
    return statuses


def _tuple_list(cfg: RunConfig) -> list:
    tuples = []
    for i, (a1, a2, b1, b2) in enumerate(cfg["tuples"]):
        try:
            t = cb.ExponentTuple(a1, a2, b1, b2, cfg["conv_d"], cfg["conv_L"])
            cb.classify_regime(t)
        except ValueError as exc:
            raise PreconditionError(f"tuple {i} ({a1},{a2},{b1},{b2}) rejected: {exc}") from None
        tuples.append(t)
    return tuples


def cmd_convbound(cfg: RunConfig, out: Output) -> list:
    tuples = _tuple_list(cfg)
    samples = list(cfg["x_samples"]) or None
    summary = []
    for i, t in enumerate(tuples):
        rep = cb.verify_bound(t, samples, check_L=cfg["check_L"], with_loglog=cfg["loglog"])
        out.csv(f"convbound_{i}.csv", rep.to_csv())
        summary.append(dict(index=i, regime=rep.regime.value, empirical_C=rep.empirical_C,
                            trend_slope=rep.trend_slope, status=rep.status, L_check=rep.L_check,
                            tuple=[t.a1, t.a2, t.b1, t.b2]))
    out.json("convbound.json", dict(tuples=summary))
    return [s["status"] for s in summary]


def _ising_volume(d: int, n: int) -> np.ndarray:
    R = 1
    while (2 * R + 1) ** d < n:
        R += 1
    box = BoxSpec(d, R)
    sites = np.stack(np.unravel_index(np.arange(box.n_sites), box.shape), axis=1) - R
    order = np.lexsort(tuple(sites[:, ::-1].T) + ((sites**2).sum(axis=1),))
    return sites[order[:n]]


def cmd_model(cfg: RunConfig, out: Output) -> list:
    d, M = cfg["model_d"], cfg["model_M"]
    params = _params(cfg, d=d, L=cfg["model_L"])
    p = cfg["model_p"]
    D, _ = _kernel(cfg, out.directory, params=params, M=M, symmetric=False)
    torus = BoxSpec(d, M, torus=True)
    model = cfg["model"]
    result = dict(model=model, p=p)
    statuses = []
    if model == "saw":
        series = models.saw_enumerate(D, cfg["N"], torus)
        tp = models.saw_two_point(series, p)
        Dt = series.kernel
        budget = tp.checks["truncation_fraction"] + 1e-10
        result["checks"] = tp.checks
        statuses.append("PASS" if all(v for k, v in tp.checks.items() if k != "truncation_fraction") else "FAIL")
        lace_model = lace.LaceModel.SAW
    elif model == "percolation":
        tp = models.percolation_two_point(D, models.PercConfig(torus, p, cfg["samples"], cfg["seed"]))
        Dt = models.periodize(D, M)
        budget = float(np.max(tp.stderr)) * 3 + 1e-10
        lace_model = lace.LaceModel.PercIsing
    elif model == "ising":
        vol = _ising_volume(d, cfg["ising_sites"])
        ising = models.IsingConfig.from_kernel(D, p, cfg["beta"], vol)
        corr = models.ising_two_point_exact(ising)
        body = "site,value\n" + "".join(f"{' '.join(map(str, s))},{float(v)!r}\n" for s, v in zip(vol, corr))
        out.csv("two_point.csv", body)
        result.update(sites=len(vol), beta=cfg["beta"], min_correlation=float(corr.min()))
        out.json("model.json", result)
        return ["PASS" if corr.min() >= 0 else "FAIL"]
    else:
        raise PreconditionError(f"unknown model {model!r}")
    out.csv("two_point.csv", tp.to_csv())
    ex = lace.extract_pi(tp.field, Dt, p, lace_model)
    eff = lace.effective_step(ex.Pi, Dt, p)
    ident = lace.verify_green_identity(tp.field, ex, eff, params, budget=budget)
    out.csv("pi.csv", models.TwoPoint(ex.Pi).to_csv())
    result.update(pi_hat_zero=ex.pi_hat_zero, margin=ex.margin, effective_step=eff.report.to_dict(),
                  green_identity=ident.to_dict(), susceptibility=models.susceptibility(tp.field),
                  pi_decay=lace.pi_decay_slope(ex.Pi, d))
    statuses += [eff.report.status, ident.status]
    out.json("model.json", result)
    return statuses


COMMANDS = {"kernel": cmd_kernel, "green": cmd_green, "convbound": cmd_convbound, "model": cmd_model}


def cmd_audit_all(cfg: RunConfig, out: Output) -> list:
    statuses, summary = [], {}
    for name, fn in COMMANDS.items():
        sub = Output(os.path.join(out.directory, name), cfg, name)
        st = fn(cfg, sub)
        summary[name] = st
        statuses += st
    out.json("audit_all.json", dict(statuses=summary))
    return statuses


# --------------------------------------------------------------------------
# entry point

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lrlace", description="Long-range lattice walks and lace-expansion checks.",
                                 epilog="config keys (key = value, env LRLACE_<KEY>):\n" + describe(),
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("command", choices=list(COMMANDS) + ["audit-all"])
    ap.add_argument("--config", metavar="PATH")
    ap.add_argument("--out", metavar="DIR", default="lrlace-out")
    ap.add_argument("--strict", action="store_true", help="exit 1 when any audit FAILs")
    ap.add_argument("--threads", type=int, metavar="N")
    ap.add_argument("--seed", metavar="U64")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _limit_threads(n: int | None):
    if n is None:
        return None
    if n < 1:
        raise CliError("--threads must be positive")
    from threadpoolctl import threadpool_limits

    # numba kernels here are serial; only the BLAS/FFT pools need a cap
    return threadpool_limits(n)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, seed=args.seed)
        limiter = _limit_threads(args.threads)
        out = Output(args.out, cfg, args.command)
        fn = cmd_audit_all if args.command == "audit-all" else COMMANDS[args.command]
        try:
            statuses = fn(cfg, out)
        except (ValueError, ArithmeticError) as exc:
            raise PreconditionError(f"{args.command}: {exc}") from None
        finally:
            if limiter is not None:
                limiter.restore_original_limits()
    except CliError as exc:
        print(f"lrlace: error: {exc}", file=sys.stderr)
        return exc.exit_code
    failed = [s for s in statuses if s != "PASS"]
    print(f"{args.command}: {len(statuses) - len(failed)} PASS, {len(failed)} FAIL -> {args.out}")
    if failed and args.strict:
        return EXIT_AUDIT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

