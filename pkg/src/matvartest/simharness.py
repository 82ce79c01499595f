"""Seeded replication engine for the size, power, multiple-testing, and
estimator-error experiments.

An experiment is described by a plain-dict config (usually loaded from
JSON), validated into an :class:`ExperimentConfig`, and executed by one
of the ``run_*`` drivers. Replication r draws its data from the stream
``child_seed(config.seed, r)``, so per-replication records are
bit-identical no matter how many worker processes share the load, and a
report can be regenerated exactly from (config, seed) alone.

Reports serialize as a JSON summary (config echo, aggregates, wall
time) plus a CSV of per-replication records; :func:`load_report` reads
the pair back and recomputes the aggregates from the records, refusing
to return a report whose stored aggregates do not match.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .covmodel import (
    CovMatrix,
    child_seed,
    gen_autocorr,
    gen_banded,
    gen_block,
    gen_equicorr,
    gen_identity,
    gen_sparse_pair,
    sample_matnorm,
)
from .errors import ConfigError, MatvarError
from .quadfunc import (
    DELTA_DEFAULT,
    IID_LAMBDA_DEFAULT,
    estimate_Ap,
    iid_threshold_cov,
    true_Ap,
    true_Bn,
)
from .indtest import mc_critical, run_test
from .corrtest import (
    _tune_details,
    bh_threshold,
    corrected_stats,
    evaluate,
    naive_stats,
    sandwich_stats,
)

KINDS = ("size", "power", "mtc", "quadfunc-error")
MTC_METHODS = ("sandwich-clime", "sandwich-true", "naive", "corrected")

_GENERATOR_PARAMS = {
    "identity": (),
    "autocorr": ("rho",),
    "banded": (),
    "block": ("block", "offdiag"),
    "equicorr": ("rho",),
    "sparse-pair": ("kappa",),
}


def resolve_generator(spec: dict, dim: int, scale_p: int | None = None) -> CovMatrix:
    """Build the covariance named by `spec` at dimension `dim`.

    spec is {"name": ..., <params>}. The sparse-pair generator needs
    the variable count for its entry scale; pass it as scale_p.
    Validation problems raise ConfigError.
    """
    if not isinstance(spec, dict) or "name" not in spec:
        raise ConfigError("generator spec must be a dict with a 'name' key")
    name = spec["name"]
    if name not in _GENERATOR_PARAMS:
        known = ", ".join(sorted(_GENERATOR_PARAMS))
        raise ConfigError(f"unknown generator {name!r}; known: {known}")
    extra = set(spec) - {"name"} - set(_GENERATOR_PARAMS[name])
    if extra:
        raise ConfigError(
            f"generator {name!r} does not take parameter(s) "
            f"{', '.join(sorted(extra))}"
        )
    try:
        if name == "identity":
            return gen_identity(dim)
        if name == "autocorr":
            return gen_autocorr(dim, float(spec["rho"]))
        if name == "banded":
            return gen_banded(dim)
        if name == "block":
            return gen_block(dim, int(spec.get("block", 10)),
                             float(spec.get("offdiag", 0.5)))
        if name == "equicorr":
            return gen_equicorr(dim, float(spec["rho"]))
        if scale_p is None:
            raise ConfigError("sparse-pair needs the variable count p")
        kappa = spec["kappa"]
        if isinstance(kappa, (list, tuple)):
            raise ConfigError(
                "kappa lists are only valid as a power-experiment sweep"
            )
        return gen_sparse_pair(dim, scale_p, float(kappa))
    except KeyError as exc:
        raise ConfigError(f"generator {name!r} is missing parameter {exc}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"generator {name!r}: {exc}") from None


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description.

    kind: one of size | power | mtc | quadfunc-error. sigma and psi are
    generator specs ({"name": ..., params}); for power experiments the
    psi spec may carry a list-valued kappa, which runs the whole sweep
    on shared per-replication seeds. methods applies to mtc only,
    lambda_grid to the sandwich-clime method, iid_lambda to
    quadfunc-error.
    """

    kind: str
    n: int
    p: int
    sigma: dict = field(repr=False)
    psi: dict = field(repr=False)
    reps: int
    alpha: float = 0.05
    seed: int = 0
    delta: float = DELTA_DEFAULT
    mode: str = "limiting"
    mc_reps: int = 2000
    methods: tuple[str, ...] = MTC_METHODS
    lambda_grid: tuple[float, ...] | None = None
    iid_lambda: float = IID_LAMBDA_DEFAULT

    _KEYS = ("kind", "n", "p", "sigma", "psi", "reps", "alpha", "seed",
             "delta", "mode", "mc_reps", "methods", "lambda_grid",
             "iid_lambda")

    @staticmethod
    def from_dict(d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(d) - set(ExperimentConfig._KEYS)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        missing = {"kind", "n", "p", "sigma", "psi", "reps"} - set(d)
        if missing:
            raise ConfigError(f"missing config key(s): {', '.join(sorted(missing))}")

        kind = d["kind"]
        if kind not in KINDS:
            raise ConfigError(f"kind must be one of {', '.join(KINDS)}; got {kind!r}")

        def _int(key, lo, default=None):
            v = d.get(key, default)
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigError(f"{key} must be an integer")
            if v < lo:
                raise ConfigError(f"{key} must be at least {lo}, got {v}")
            return v

        n = _int("n", 3)
        p = _int("p", 2)
        reps = _int("reps", 1)
        seed = _int("seed", 0, default=0)
        mc_reps = _int("mc_reps", 1, default=2000)

        alpha = d.get("alpha", 0.05)
        if not isinstance(alpha, (int, float)) or isinstance(alpha, bool) \
                or not (0.0 < float(alpha) < 1.0):
            raise ConfigError(f"alpha must be a number in (0, 1), got {alpha!r}")
        delta = d.get("delta", DELTA_DEFAULT)
        if not isinstance(delta, (int, float)) or isinstance(delta, bool) \
                or float(delta) <= 0.0:
            raise ConfigError(f"delta must be a positive number, got {delta!r}")
        iid_lambda = d.get("iid_lambda", IID_LAMBDA_DEFAULT)
        if not isinstance(iid_lambda, (int, float)) or isinstance(iid_lambda, bool) \
                or float(iid_lambda) <= 0.0:
            raise ConfigError(f"iid_lambda must be positive, got {iid_lambda!r}")
        mode = d.get("mode", "limiting")
        if mode not in ("limiting", "monte-carlo"):
            raise ConfigError(f"mode must be 'limiting' or 'monte-carlo', got {mode!r}")

        methods = d.get("methods", list(MTC_METHODS))
        if isinstance(methods, str):
            methods = [methods]
        if not isinstance(methods, (list, tuple)) or not methods:
            raise ConfigError("methods must be a nonempty list")
        for m in methods:
            if m not in MTC_METHODS:
                raise ConfigError(
                    f"unknown method {m!r}; known: {', '.join(MTC_METHODS)}"
                )
        if len(set(methods)) != len(methods):
            raise ConfigError("methods contains duplicates")

        grid = d.get("lambda_grid")
        if grid is not None:
            if not isinstance(grid, (list, tuple)) or not grid:
                raise ConfigError("lambda_grid must be a nonempty list of numbers")
            vals = []
            for g in grid:
                if not isinstance(g, (int, float)) or isinstance(g, bool) or g < 0:
                    raise ConfigError(f"lambda_grid entries must be >= 0, got {g!r}")
                vals.append(float(g))
            if len(set(vals)) != len(vals):
                raise ConfigError("lambda_grid entries must be distinct")
            grid = tuple(sorted(vals))

        sigma = d["sigma"]
        psi = d["psi"]
        # a list-valued kappa marks a power sweep; validate each level
        sweep = _kappa_sweep(kind, psi)
        if sweep is not None:
            for k in sweep:
                resolve_generator({**psi, "kappa": k}, n, scale_p=p)
        else:
            resolve_generator(psi, n, scale_p=p)
        resolve_generator(sigma, p)

        psi_name = psi.get("name")
        if kind == "size" and psi_name != "identity":
            raise ConfigError("size experiments require an identity psi")
        if kind == "power" and psi_name == "identity":
            raise ConfigError("power experiments need a non-identity psi")
        if kind == "mtc" and sigma.get("name") not in ("banded", "block"):
            raise ConfigError(
                "mtc experiments need a sparse sigma (banded or block) so "
                "the true null set follows from its zero pattern"
            )

        return ExperimentConfig(
            kind=kind, n=n, p=p, sigma=dict(sigma), psi=dict(psi),
            reps=reps, alpha=float(alpha), seed=seed, delta=float(delta),
            mode=mode, mc_reps=mc_reps, methods=tuple(methods),
            lambda_grid=grid, iid_lambda=float(iid_lambda),
        )

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "n": self.n, "p": self.p,
            "sigma": dict(self.sigma), "psi": dict(self.psi),
            "reps": self.reps, "alpha": self.alpha, "seed": self.seed,
            "delta": self.delta, "mode": self.mode, "mc_reps": self.mc_reps,
            "methods": list(self.methods),
            "lambda_grid": None if self.lambda_grid is None
            else list(self.lambda_grid),
            "iid_lambda": self.iid_lambda,
        }


def _kappa_sweep(kind: str, psi_spec) -> list[float] | None:
    if not isinstance(psi_spec, dict):
        raise ConfigError("psi must be a generator spec object")
    kappa = psi_spec.get("kappa")
    if not isinstance(kappa, (list, tuple)):
        return None
    if kind != "power":
        raise ConfigError("a kappa list is only valid for power experiments")
    if not kappa:
        raise ConfigError("kappa sweep must not be empty")
    out = []
    for k in kappa:
        if not isinstance(k, (int, float)) or isinstance(k, bool):
            raise ConfigError(f"kappa levels must be numbers, got {k!r}")
        out.append(float(k))
    return out


_RECORD_COLUMNS = {
    "size": ("rep", "statistic", "centered", "critical_value", "reject"),
    "power": ("rep", "kappa", "statistic", "centered", "critical_value",
              "reject"),
    "mtc": ("rep", "method", "lambda", "t_hat", "rejections", "fdp",
            "power"),
    "quadfunc-error": ("rep", "ap_hat", "ap_iid", "fro2_hat", "fro2_iid",
                       "err_adaptive", "err_iid"),
}
_INT_COLUMNS = {"rep", "reject", "rejections"}
_STR_COLUMNS = {"method"}


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    records: list[dict]
    aggregates: dict
    wall_time_s: float

    def write_json(self, path_or_buf) -> None:
        payload = {
            "schema": "v1",
            "config": self.config.to_dict(),
            "aggregates": self.aggregates,
            "wall_time_s": self.wall_time_s,
        }
        if hasattr(path_or_buf, "write"):
            json.dump(payload, path_or_buf, indent=2)
        else:
            with open(path_or_buf, "w", encoding="utf-8") as fh:
                json.dump(payload, fh, indent=2)

    def write_records_csv(self, path_or_buf) -> None:
        cols = _RECORD_COLUMNS[self.config.kind]
        close = False
        if hasattr(path_or_buf, "write"):
            fh = path_or_buf
        else:
            fh = open(path_or_buf, "w", encoding="utf-8", newline="")
            close = True
        try:
            wr = csv.writer(fh)
            wr.writerow(cols)
            for rec in self.records:
                row = []
                for c in cols:
                    v = rec[c]
                    if v is None:
                        row.append("")
                    elif c in _INT_COLUMNS:
                        row.append(str(int(v)))
                    elif c in _STR_COLUMNS:
                        row.append(v)
                    else:
                        row.append(format(float(v), ".17g"))
                wr.writerow(row)
        finally:
            if close:
                fh.close()


def _aggregate(config: ExperimentConfig, records: list[dict]) -> dict:
    kind = config.kind
    if kind == "size":
        k = sum(r["reject"] for r in records)
        return {"reps": config.reps, "rejections": int(k),
                "rejection_rate": k / config.reps}
    if kind == "power":
        kappas = sorted({r["kappa"] for r in records if r["kappa"] is not None})
        if not kappas:
            k = sum(r["reject"] for r in records)
            return {"reps": config.reps, "rejections": int(k),
                    "rejection_rate": k / config.reps}
        by = []
        for kap in kappas:
            sub = [r for r in records if r["kappa"] == kap]
            k = sum(r["reject"] for r in sub)
            by.append({"kappa": kap, "reps": len(sub), "rejections": int(k),
                       "rejection_rate": k / len(sub)})
        return {"reps": config.reps, "by_kappa": by}
    if kind == "mtc":
        out = []
        for m in config.methods:
            sub = [r for r in records if r["method"] == m]
            fdp = np.array([r["fdp"] for r in sub])
            pw = np.array([r["power"] for r in sub])
            rej = np.array([r["rejections"] for r in sub], dtype=np.float64)
            out.append({
                "method": m,
                "reps": len(sub),
                "mean_fdp": float(fdp.mean()),
                "sd_fdp": float(fdp.std(ddof=1)) if len(sub) > 1 else 0.0,
                "mean_power": float(pw.mean()),
                "sd_power": float(pw.std(ddof=1)) if len(sub) > 1 else 0.0,
                "mean_rejections": float(rej.mean()),
            })
        return {"methods": out}
    # quadfunc-error
    sigma = resolve_generator(config.sigma, config.p)
    fro2 = sigma.fro2()
    a_true = true_Ap(sigma)
    ea = np.array([r["err_adaptive"] for r in records])
    ei = np.array([r["err_iid"] for r in records])
    qa = np.quantile(ea, [0.25, 0.5, 0.75])
    qi = np.quantile(ei, [0.25, 0.5, 0.75])
    ap = np.array([r["ap_hat"] for r in records])
    api = np.array([r["ap_iid"] for r in records])
    return {
        "true_fro2": fro2,
        "true_ap": a_true,
        "adaptive": {"q25": float(qa[0]), "q50": float(qa[1]),
                     "q75": float(qa[2]), "mean": float(ea.mean())},
        "iid": {"q25": float(qi[0]), "q50": float(qi[1]),
                "q75": float(qi[2]), "mean": float(ei.mean())},
        "median_ap_adaptive": float(np.median(ap)),
        "median_ap_iid": float(np.median(api)),
    }


# ---------------------------------------------------------------------------
# worker-side machinery
#
# The payload (covariances with warmed square-root caches, critical
# values, truth masks) is shipped to each worker once through the pool
# initializer; tasks are then tiny index tuples. Records depend only on
# (payload, replication index), never on worker identity, which is what
# makes the output invariant to the worker count.

_CTX: dict | None = None


def _set_ctx(payload: dict) -> None:
    global _CTX
    _CTX = payload


def _fan_out(fn, payload: dict, tasks: list, threads: int) -> list:
    workers = max(1, min(threads, len(tasks)))
    if workers == 1:
        _set_ctx(payload)
        try:
            return [fn(t) for t in tasks]
        finally:
            _set_ctx(None)
    chunk = max(1, math.ceil(len(tasks) / (4 * workers)))
    with ProcessPoolExecutor(
        max_workers=workers, initializer=_set_ctx, initargs=(payload,)
    ) as ex:
        return list(ex.map(fn, tasks, chunksize=chunk))


def _test_task(task):
    rep, ik = task
    c = _CTX
    x = sample_matnorm(0.0, c["sigma"], c["psis"][ik],
                       seed=child_seed(c["seed"], rep))
    res = run_test(x, alpha=c["alpha"], delta=c["delta"], mode=c["mode"],
                   critical_value=c["crit"])
    return (res.statistic, res.centered, res.critical_value, int(res.reject))


def _mtc_task(rep):
    c = _CTX
    x = sample_matnorm(0.0, c["sigma"], c["psi"],
                       seed=child_seed(c["seed"], rep))
    p = x.p
    out = []
    for m in c["methods"]:
        lam = None
        if m == "sandwich-clime":
            lam, _, stats, _ = _tune_details(x, c["grid"])
        elif m == "sandwich-true":
            stats = sandwich_stats(x, c["gamma_true"])
        elif m == "naive":
            stats = naive_stats(x)
        else:
            stats = corrected_stats(x, c["bn_true"])
        t_hat, rej = bh_threshold(stats, c["alpha"])
        fdp, power = evaluate(rej, c["null_mask"], p)
        out.append((m, lam, t_hat, len(rej), fdp, power))
    return out


def _quad_task(rep):
    c = _CTX
    x = sample_matnorm(0.0, c["sigma"], c["psi"],
                       seed=child_seed(c["seed"], rep))
    est = estimate_Ap(x, delta=c["delta"])
    s1, ap_iid = iid_threshold_cov(x, lam=c["iid_lambda"])
    fro2_iid = float(np.sum(s1 * s1))
    t = c["true_fro2"]
    return (est.ap_hat, ap_iid, est.sigma_fro2_hat, fro2_iid,
            abs(est.sigma_fro2_hat - t) / t, abs(fro2_iid - t) / t)


def _check_kind(config: ExperimentConfig, kind: str) -> None:
    if config.kind != kind:
        raise ConfigError(
            f"config kind is {config.kind!r}; this driver runs {kind!r}"
        )


def _run_test_kind(config: ExperimentConfig, threads: int) -> ExperimentReport:
    t0 = time.perf_counter()
    sigma = resolve_generator(config.sigma, config.p)
    sweep = _kappa_sweep(config.kind, config.psi)
    if sweep is None:
        psis = [resolve_generator(config.psi, config.n, scale_p=config.p)]
    else:
        psis = [
            resolve_generator({**config.psi, "kappa": k}, config.n,
                              scale_p=config.p)
            for k in sweep
        ]
    sigma.sqrt()
    for ps in psis:
        if not ps.is_identity():
            ps.sqrt()

    if config.mode == "monte-carlo":
        crit = mc_critical(config.n, config.p, config.mc_reps, config.alpha,
                           config.seed, delta=config.delta)
    else:
        crit = None

    payload = {"sigma": sigma, "psis": psis, "seed": config.seed,
               "alpha": config.alpha, "delta": config.delta,
               "mode": config.mode, "crit": crit}
    tasks = [(rep, ik) for ik in range(len(psis)) for rep in range(config.reps)]
    rows = _fan_out(_test_task, payload, tasks, threads)

    records = []
    for (rep, ik), (stat, cent, cv, rej) in zip(tasks, rows):
        rec = {"rep": rep, "statistic": stat, "centered": cent,
               "critical_value": cv, "reject": rej}
        if config.kind == "power":
            rec["kappa"] = None if sweep is None else sweep[ik]
            rec = {k: rec[k] for k in _RECORD_COLUMNS["power"]}
        records.append(rec)
    report = ExperimentReport(config, records, _aggregate(config, records),
                              time.perf_counter() - t0)
    return report


def run_size(config: ExperimentConfig, threads: int = 1) -> ExperimentReport:
    """Null rejection rate of the independence test."""
    _check_kind(config, "size")
    return _run_test_kind(config, threads)


def run_power(config: ExperimentConfig, threads: int = 1) -> ExperimentReport:
    """Rejection rate under a dependent-sample psi, optionally swept
    over sparse-pair kappa levels on shared replication seeds."""
    _check_kind(config, "power")
    return _run_test_kind(config, threads)


def run_mtc(config: ExperimentConfig, threads: int = 1) -> ExperimentReport:
    """FDP and power of the requested multiple-testing methods.

    The truth behind FDP/power is sigma's exact zero pattern, which is
    why the config layer insists on a sparse generator.
    """
    _check_kind(config, "mtc")
    t0 = time.perf_counter()
    sigma = resolve_generator(config.sigma, config.p)
    psi = resolve_generator(config.psi, config.n, scale_p=config.p)
    sigma.sqrt()
    if not psi.is_identity():
        psi.sqrt()
    null_mask = sigma.values == 0.0

    payload = {
        "sigma": sigma, "psi": psi, "seed": config.seed,
        "alpha": config.alpha, "methods": config.methods,
        "null_mask": null_mask,
        "grid": None if config.lambda_grid is None
        else np.asarray(config.lambda_grid),
    }
    if "sandwich-true" in config.methods:
        payload["gamma_true"] = np.linalg.inv(psi.values)
    if "corrected" in config.methods:
        payload["bn_true"] = true_Bn(psi)

    tasks = list(range(config.reps))
    rows = _fan_out(_mtc_task, payload, tasks, threads)
    records = []
    for rep, row in zip(tasks, rows):
        for (m, lam, t_hat, nrej, fdp, power) in row:
            records.append({"rep": rep, "method": m, "lambda": lam,
                            "t_hat": t_hat, "rejections": nrej,
                            "fdp": fdp, "power": power})
    return ExperimentReport(config, records, _aggregate(config, records),
                            time.perf_counter() - t0)


def run_quadfunc_error(config: ExperimentConfig, threads: int = 1) -> ExperimentReport:
    """Relative error of the quadratic-functional estimators against
    the generator's exact value, adaptive threshold vs iid threshold."""
    _check_kind(config, "quadfunc-error")
    t0 = time.perf_counter()
    sigma = resolve_generator(config.sigma, config.p)
    psi = resolve_generator(config.psi, config.n, scale_p=config.p)
    sigma.sqrt()
    if not psi.is_identity():
        psi.sqrt()

    payload = {"sigma": sigma, "psi": psi, "seed": config.seed,
               "delta": config.delta, "iid_lambda": config.iid_lambda,
               "true_fro2": sigma.fro2()}
    tasks = list(range(config.reps))
    rows = _fan_out(_quad_task, payload, tasks, threads)
    records = [
        {"rep": rep, "ap_hat": a, "ap_iid": ai, "fro2_hat": f,
         "fro2_iid": fi, "err_adaptive": ea, "err_iid": ei}
        for rep, (a, ai, f, fi, ea, ei) in zip(tasks, rows)
    ]
    return ExperimentReport(config, records, _aggregate(config, records),
                            time.perf_counter() - t0)


_RUNNERS = {
    "size": run_size,
    "power": run_power,
    "mtc": run_mtc,
    "quadfunc-error": run_quadfunc_error,
}


def run_experiment(config: ExperimentConfig, threads: int = 1) -> ExperimentReport:
    """Dispatch on config.kind."""
    return _RUNNERS[config.kind](config, threads)


def _parse_cell(col: str, text: str):
    if text == "":
        return None
    if col in _STR_COLUMNS:
        return text
    if col in _INT_COLUMNS:
        return int(text)
    return float(text)


def load_report(json_path, csv_path) -> ExperimentReport:
    """Read a report back and verify its aggregates against the records.

    Raises DataError (via ConfigError) on schema problems and
    MatvarError when the stored aggregates cannot be reproduced from
    the per-replication records.
    """
    with open(json_path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("schema") != "v1":
        raise ConfigError(f"unsupported report schema {payload.get('schema')!r}")
    config = ExperimentConfig.from_dict(payload["config"])

    cols = _RECORD_COLUMNS[config.kind]
    records = []
    with open(csv_path, "r", encoding="utf-8", newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header is None or tuple(header) != cols:
            raise ConfigError(
                f"records header {header} does not match kind {config.kind!r}"
            )
        for row in rd:
            if len(row) != len(cols):
                raise ConfigError(f"record row has {len(row)} fields, "
                                  f"expected {len(cols)}")
            records.append({c: _parse_cell(c, v) for c, v in zip(cols, row)})

    fresh = _aggregate(config, records)
    if not _same_tree(fresh, payload["aggregates"]):
        raise MatvarError(
            "stored aggregates do not match the per-replication records"
        )
    return ExperimentReport(config, records, fresh,
                            float(payload.get("wall_time_s", 0.0)))


def _same_tree(a, b) -> bool:
    if isinstance(a, dict) and isinstance(b, dict):
        return set(a) == set(b) and all(_same_tree(a[k], b[k]) for k in a)
    if isinstance(a, (list, tuple)) and isinstance(b, (list, tuple)):
        return len(a) == len(b) and all(_same_tree(x, y) for x, y in zip(a, b))
    if isinstance(a, float) or isinstance(b, float):
        return float(a) == float(b)
    return a == b
