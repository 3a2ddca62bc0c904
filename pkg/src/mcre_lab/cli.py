"""Command-line experiment runner.

    mcre-lab run <config.toml> [--threads N] [--out DIR] [--seed S]
    mcre-lab plot <result-dir>

Exit codes: 0 ok, 2 configuration error, 3 model assumption failure,
4 a built-in check of the experiment failed.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import numpy as np
import tomli
import tomli_w
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import counterexample, limits, mixing, queueing
from .laws import make_law
from .mcre import DriftData, contractivity_rate, drift_verify, write_tail_csv
from .plotting import emit_plots
from .process import IID, FiniteMarkov, MovingSum, Scripted
from .rng import derive_stream, replicate

EXIT_OK, EXIT_CONFIG, EXIT_ASSUMPTION, EXIT_CHECK = 0, 2, 3, 4


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class LawCfg(Strict):
    dist: Literal["finite", "point", "expon", "uniform", "gamma", "truncexpon"]
    values: Optional[list[float]] = None
    probs: Optional[list[float]] = None
    value: Optional[float] = None
    rate: Optional[float] = None
    low: Optional[float] = None
    high: Optional[float] = None
    shape: Optional[float] = None
    upper: Optional[float] = None

    @model_validator(mode="after")
    def _required(self):
        need = {"finite": ["values"], "point": ["value"], "gamma": ["shape"], "truncexpon": ["upper"]}
        missing = [k for k in need.get(self.dist, []) if getattr(self, k) is None]
        if missing:
            raise ValueError(f"dist {self.dist!r} requires {', '.join(missing)}")
        return self

    def build(self):
        return make_law(self.model_dump(exclude_none=True))


class IIDCfg(Strict):
    kind: Literal["iid"]
    law: LawCfg


class MarkovCfg(Strict):
    kind: Literal["markov"]
    values: list[float]
    matrix: list[list[float]]
    init: Optional[list[float]] = None


class MovingSumCfg(Strict):
    kind: Literal["moving_sum"]
    order: int = Field(ge=1)
    base: LawCfg


class ScriptedCfg(Strict):
    kind: Literal["scripted"]
    laws: list[LawCfg]


EnvCfg = Annotated[Union[IIDCfg, MarkovCfg, MovingSumCfg, ScriptedCfg], Field(discriminator="kind")]


def build_env(cfg):
    if cfg.kind == "iid":
        return IID(cfg.law.build())
    if cfg.kind == "markov":
        return FiniteMarkov(cfg.values, cfg.matrix, cfg.init)
    if cfg.kind == "moving_sum":
        return MovingSum(cfg.order, cfg.base.build())
    return Scripted([law.build() for law in cfg.laws])


class QueueCfg(Strict):
    service: EnvCfg
    arrival: LawCfg
    M: float = float("inf")
    t_grid: list[float] = list(queueing.DEFAULT_T_GRID)
    t_bar: Optional[float] = None
    r: Optional[float] = None
    beta_bar: Optional[float] = None
    lambda_n: int = 50
    lambda_j_max: int = 0
    loynes_depth: int = 1000

    def build(self) -> queueing.QueueModel:
        return queueing.QueueModel(service=build_env(self.service), arrival=self.arrival.build(), M=self.M,
                                   t_grid=tuple(self.t_grid), t_bar=self.t_bar, r=self.r, beta_bar=self.beta_bar,
                                   lambda_n=self.lambda_n, lambda_j_max=self.lambda_j_max,
                                   loynes_depth=self.loynes_depth)


class Base(Strict):
    master_seed: int = 0
    output_root: Optional[str] = None
    block_size: int = 10_000


class MixingTableCfg(Base):
    kind: Literal["mixing-table"]
    environment: EnvCfg
    max_gap: int = Field(default=5, ge=1)
    block_len: int = Field(default=1, ge=1)
    j_range: list[int] = [0]


class TransferCfg(Base):
    kind: Literal["transfer-bound"]
    values: list[float] = [0.0, 1.0]
    matrix: list[list[float]]
    p: list[list[float]]
    x0: int = 0
    horizon: int = Field(default=5, ge=1)


class DriftCfg(Base):
    kind: Literal["drift"]
    queue: QueueCfg
    t: float = Field(gt=0)
    s_grid: list[float]
    w_grid: list[float]
    replicas: int = 100_000


class CoefficientTable(Strict):
    kind: Literal["table"]
    gamma: list[float]
    K: Optional[list[float]] = None


class QueueCoefficients(Strict):
    kind: Literal["queue"]
    arrival: LawCfg
    t: float = Field(gt=0)


class ContractivityCfg(Base):
    kind: Literal["contractivity"]
    environment: EnvCfg
    coefficients: Annotated[Union[CoefficientTable, QueueCoefficients], Field(discriminator="kind")]
    n_max: int = Field(default=20, ge=1)
    j_max: int = Field(default=0, ge=0)
    replicas: int = 100_000
    method: Literal["auto", "exact", "mc"] = "auto"


class CouplingCfg(Base):
    kind: Literal["coupling"]
    queue: QueueCfg
    horizon: int = 100
    replicas: int = 100_000
    fit_max: Optional[int] = None
    tv_at: list[int] = [10, 25, 50]
    beta_grid: list[float] = []


class SumsCfg(Base):
    queue: QueueCfg
    replicas: int = 2000
    n: int = 5000
    n_grid: Optional[list[int]] = None
    block_size: int = 500


class LLNCfg(SumsCfg):
    kind: Literal["lln"]
    n: int = 10_000
    ratio_target: float = 0.1


class CLTCfg(SumsCfg):
    kind: Literal["clt"]
    a_factors: list[float] = [0.5, 1.0, 2.0]


class FCLTCfg(SumsCfg):
    kind: Literal["fclt"]
    t_points: int = 50
    n_paths: int = 50


class QueueSuiteCfg(Base):
    kind: Literal["queue-suite"]
    queue: QueueCfg
    replicas: int = 20_000
    floor_n: list[int] = [100, 300, 1000]
    floor_replicas: int = 2000
    loynes_samples: int = 10_000
    borovkov_n: list[int] = [1, 2, 5, 10, 25, 50]


class FelsmannCfg(Base):
    kind: Literal["felsmann"]
    epsilon: float = Field(default=0.0, ge=0.0, lt=0.25)
    n_max: int = Field(default=40, ge=1)
    replicas: int = 1_000_000
    mc_n: int = 10
    block_size: int = 100_000


class BorovkovCfg(Base):
    kind: Literal["borovkov"]
    queue: QueueCfg
    n_grid: list[int] = [1, 2, 5, 10, 25, 50, 100]
    replicas: int = 100_000
    depth: Optional[int] = None


class ExperimentConfig(Strict):
    experiment: Annotated[Union[MixingTableCfg, TransferCfg, DriftCfg, ContractivityCfg, CouplingCfg, LLNCfg,
                                CLTCfg, FCLTCfg, QueueSuiteCfg, FelsmannCfg, BorovkovCfg],
                          Field(discriminator="kind")]


# ---------------------------------------------------------------------------
# helpers


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_rows(path: Path, header: list[str], rows: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            if isinstance(row, dict):
                row = [row.get(h) for h in header]
            w.writerow([_fmt(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else None
    return obj


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True))


def _simulate_sums(cfg, model, threads, stream_base=0):
    """Waiting-time ensemble ``W_1..W_n`` over replica blocks."""
    def block(rng, size):
        return queueing.simulate_queue(model, cfg.n, rng, size).W[:, 1:]
    parts = replicate(block, cfg.replicas, cfg.master_seed, stream_base, cfg.block_size, threads)
    return limits.PartialSumEnsemble.from_values(np.concatenate(parts))


def _check_assumptions(model, seed):
    rep = queueing.assumption_report(model, derive_stream(seed, 900_000))
    return rep


# ---------------------------------------------------------------------------
# experiments; each returns (exit code, message)


def run_mixing(cfg: MixingTableCfg, out: Path, threads: int):
    spec = build_env(cfg.environment)
    table = mixing.alpha_table(spec, cfg.max_gap, cfg.block_len, cfg.j_range)
    table.to_csv(out / "alpha_table.csv")
    rows = [{"n": n, "sup_alpha": table.sup_alpha(n), "cesaro": mixing.cesaro_mixing(table, n)}
            for n in range(1, cfg.max_gap + 1)]
    write_rows(out / "mixing.csv", ["n", "sup_alpha", "cesaro"], rows)
    return EXIT_OK, "alpha table written"


def run_transfer(cfg: TransferCfg, out: Path, threads: int):
    toy = mixing.ThresholdToy(FiniteMarkov(cfg.values, cfg.matrix), np.array(cfg.p), cfg.x0)
    rows = toy.soundness_table(cfg.horizon)
    write_rows(out / "transfer.csv", ["n", "r", "alpha_x", "bound", "ok"], rows)
    bad = [r for r in rows if not r["ok"]]
    return (EXIT_CHECK, f"{len(bad)} transfer-bound violations") if bad else (EXIT_OK, "no violations")


def run_drift(cfg: DriftCfg, out: Path, threads: int):
    model = cfg.queue.build()
    gamma, K = queueing.queue_drift_coeffs(model, cfg.t)
    drift = DriftData(V=queueing.lyapunov(cfg.t), gamma=gamma, K=K, lift_K=False)
    rows = drift_verify(queueing.queue_kernel(model), drift, cfg.s_grid, cfg.w_grid, cfg.replicas,
                        derive_stream(cfg.master_seed, 0))
    write_rows(out / "drift.csv", ["y", "x", "estimate", "stderr", "bound", "violation"], rows)
    bad = sum(r["violation"] for r in rows)
    return (EXIT_CHECK, f"{bad} drift violations") if bad else (EXIT_OK, "drift condition holds on the grid")


def run_contractivity(cfg: ContractivityCfg, out: Path, threads: int):
    spec = build_env(cfg.environment)
    co = cfg.coefficients
    if co.kind == "table":
        alphabet = spec.alphabet
        if len(co.gamma) != len(alphabet) or (co.K is not None and len(co.K) != len(alphabet)):
            raise ConfigError(f"coefficient tables must list one value per alphabet symbol {alphabet.tolist()}")
        g = np.asarray(co.gamma)
        k = np.ones(len(alphabet)) if co.K is None else np.asarray(co.K)
        drift = DriftData(V=lambda x: x, gamma=lambda y: g[spec.symbol_index(y)], K=lambda y: k[spec.symbol_index(y)])
    else:
        from .laws import laplace_transform
        lz = laplace_transform(co.arrival.build(), co.t)
        fn = lambda y: np.exp(co.t * np.asarray(y, dtype=float)) * lz  # noqa: E731
        drift = DriftData(V=queueing.lyapunov(co.t), gamma=fn, K=fn)
    res = contractivity_rate(spec, drift, cfg.n_max, cfg.j_max, cfg.replicas, derive_stream(cfg.master_seed, 0),
                             cfg.method)
    rows = []
    for a, j in enumerate(res["j"]):
        for i, n in enumerate(res["n"]):
            rows.append([j, n, res["roots"][a, i], res["log_se"][a, i]])
    write_rows(out / "contractivity_table.csv", ["j", "n", "root", "log_se"], rows)
    write_rows(out / "contractivity.csv", ["n", "sup_over_j"], list(zip(res["n"], res["sup_over_j"])))
    write_json(out / "report.json", {"method": res["method"], "last_sup": res["sup_over_j"][-1]})
    return EXIT_OK, f"sup root at n={cfg.n_max}: {res['sup_over_j'][-1]:.6g}"


def run_coupling(cfg: CouplingCfg, out: Path, threads: int):
    model = cfg.queue.build()
    report = _check_assumptions(model, cfg.master_seed)
    write_json(out / "assumptions.json", report.to_dict())
    if not report.ok:
        return EXIT_ASSUMPTION, "assumption failed: " + ", ".join(report.failed)
    res = queueing.queue_coupling_experiment(model, cfg.horizon, cfg.replicas, cfg.master_seed, threads,
                                             fit_max=cfg.fit_max, record_at=cfg.tv_at, beta_grid=cfg.beta_grid,
                                             report=report, block_size=cfg.block_size)
    write_tail_csv(out / "coupling_tail.csv", res["n"], res["p"], res["stderr"], res["bound_fit"])
    from .mcre import tv_bound_report
    result = res["result"]
    tv = tv_bound_report(result, cfg.tv_at, pairs=result.recorded)
    write_rows(out / "tv.csv", ["n", "p_tau_gt_n", "stderr", "bound", "bound_se", "tv", "tv_noise", "tv_ok"], tv)
    summary = {k: res[k] for k in ("fit_sqrt", "fit_cube", "sqrt_dominates", "better_fit", "censoring_rate",
                                   "boundary_hit", "median_tau")}
    summary["beta_grid"] = res.get("beta_grid", [])
    write_json(out / "report.json", summary)
    ok = all(r["tv_ok"] for r in tv)
    return (EXIT_OK, "coupling tail written") if ok else (EXIT_CHECK, "TV exceeds the coupling bound")


def run_lln(cfg: LLNCfg, out: Path, threads: int):
    model = cfg.queue.build()
    ens = _simulate_sums(cfg, model, threads)
    grid = cfg.n_grid or [n for n in (10, 100, 1000, 10_000, 100_000) if n <= cfg.n]
    rep = limits.lln_report(ens, grid)
    write_rows(out / "lln.csv", ["n", "l1", "stderr"], rep["rows"])
    ratio = rep["rows"][-1]["l1"] / rep["rows"][0]["l1"]
    rep["ratio_last_first"] = ratio
    rep["ratio_ok"] = ratio <= cfg.ratio_target
    write_json(out / "report.json", rep)
    ok = rep["decreasing"] and rep["ratio_ok"]
    return (EXIT_OK, f"ratio {ratio:.4f}") if ok else (EXIT_CHECK, f"L1 trend check failed (ratio {ratio:.4f})")


def run_clt(cfg: CLTCfg, out: Path, threads: int):
    model = cfg.queue.build()
    ens = _simulate_sums(cfg, model, threads)
    grid = cfg.n_grid or limits.log_grid(cfg.n, 8)[2:]
    sig = limits.sigma_max(ens, grid)
    scaled = ens.S[:, cfg.n] / np.sqrt(cfg.n)
    rows = limits.coverage_check(scaled, [f * sig for f in cfg.a_factors], sig)
    write_rows(out / "coverage.csv", ["a", "empirical", "stderr", "bound", "ok"], rows)
    weak = limits.weak_approach_report(scaled)
    weak["sigma_max"] = sig
    weak["variance_stability"] = limits.variance_stabilizes(ens, grid)
    write_json(out / "report.json", weak)
    ok = all(r["ok"] for r in rows) and weak["ks_p"] >= 0.01
    return (EXIT_OK, "coverage within bounds") if ok else (EXIT_CHECK, "coverage or normality check failed")


def run_fclt(cfg: FCLTCfg, out: Path, threads: int):
    model = cfg.queue.build()
    ens = _simulate_sums(cfg, model, threads)
    res = limits.fclt_ensemble(ens, np.linspace(1.0 / cfg.t_points, 1.0, cfg.t_points))
    res.to_csv(out / "fclt_paths.csv", cfg.n_paths)
    write_rows(out / "fclt_variance.csv", ["t", "var"], res.diagnostics["var_curve_vs_t"])
    d = res.diagnostics
    write_json(out / "report.json", dict(d, dependence=mixing.alpha_summability(model.service)))
    ok = (0.95 <= d["var_B1"] <= 1.05 and 0.45 <= d["var_Bmid"] <= 0.55
          and abs(d["corr_mid_increment"]) <= 0.05 and d["ks_p_B1"] >= 0.01)
    return (EXIT_OK, "FCLT diagnostics within tolerance") if ok else (EXIT_CHECK, "FCLT diagnostics out of tolerance")


def run_queue_suite(cfg: QueueSuiteCfg, out: Path, threads: int):
    model = cfg.queue.build()
    report = _check_assumptions(model, cfg.master_seed)
    write_json(out / "assumptions.json", report.to_dict())
    if not report.ok:
        return EXIT_ASSUMPTION, "assumption failed: " + ", ".join(report.failed)
    write_rows(out / "lambda.csv", ["t", "lambda", "stderr"], report.values.get("lambda_grid", []))
    checks = []
    try:
        r_star = queueing.fisher_radius(model)
    except ValueError as exc:
        r_star = None
        checks.append(f"variance floor skipped: {exc}")
    if r_star is not None:
        rows = [queueing.variance_floor(model, n, cfg.floor_replicas, derive_stream(cfg.master_seed, 100 + i), r_star)
                for i, n in enumerate(cfg.floor_n)]
        write_rows(out / "variance_floor.csv", ["n", "floor", "variance", "stderr", "ok"], rows)
        if not all(r["ok"] for r in rows):
            checks.append("variance floor")
    w, hit = queueing.loynes_sample(model, cfg.loynes_samples, cfg.master_seed, 200, threads=threads,
                                    block_size=cfg.block_size)
    bor = queueing.borovkov_rate(model, cfg.borovkov_n, cfg.replicas, derive_stream(cfg.master_seed, 300))
    write_rows(out / "borovkov.csv", ["n", "estimate", "stderr"], bor)
    write_json(out / "report.json", {"loynes_mean": float(w.mean()), "loynes_boundary_hit": hit,
                                     "fisher_radius": r_star, "notes": checks})
    if "variance floor" in checks:
        return EXIT_CHECK, "variance floor exceeded the empirical variance"
    return EXIT_OK, "queue suite complete"


def run_felsmann(cfg: FelsmannCfg, out: Path, threads: int):
    rep = counterexample.felsmann_report(cfg.epsilon, cfg.n_max, cfg.replicas, cfg.mc_n, cfg.master_seed, threads)
    counterexample.write_csv(rep["rows"], out / "felsmann.csv")
    write_json(out / "report.json", {k: v for k, v in rep.items() if k != "rows"})
    bad = [r["n"] for r in rep["rows"] if np.isfinite(r["mc"]) and abs(r["mc"] - r["a_n"]) > 4 * r["mc_se"]]
    if cfg.epsilon == 0.0:
        n = np.arange(1, cfg.n_max + 1)
        a = np.array([r["a_n"] for r in rep["rows"]])
        if np.max(np.abs(a / (0.5 * 1.5 ** n) - 1)) > 1e-12:
            bad.append("exact")
    if bad or not rep["roots_above_envelope"]:
        return EXIT_CHECK, f"checks failed at {bad}"
    return EXIT_OK, "products grow although the mean rate is below one"


def run_borovkov(cfg: BorovkovCfg, out: Path, threads: int):
    model = cfg.queue.build()
    rows = queueing.borovkov_rate(model, cfg.n_grid, cfg.replicas, derive_stream(cfg.master_seed, 0), cfg.depth)
    write_rows(out / "borovkov.csv", ["n", "estimate", "stderr"], rows)
    return EXIT_OK, "rate estimate written"


RUNNERS = {
    "mixing-table": run_mixing, "transfer-bound": run_transfer, "drift": run_drift,
    "contractivity": run_contractivity, "coupling": run_coupling, "lln": run_lln, "clt": run_clt,
    "fclt": run_fclt, "queue-suite": run_queue_suite, "felsmann": run_felsmann, "borovkov": run_borovkov,
}


class ConfigError(ValueError):
    pass


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except OSError as exc:
        raise ConfigError(str(exc)) from exc
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        lines = [f"{path}: invalid configuration"]
        for err in exc.errors():
            loc = ".".join(str(p) for p in err["loc"])
            lines.append(f"  {loc}: {err['msg']}")
        raise ConfigError("\n".join(lines)) from exc


def _toml_clean(obj):
    if isinstance(obj, dict):
        return {k: _toml_clean(v) for k, v in obj.items() if v is not None}
    if isinstance(obj, list):
        return [_toml_clean(v) for v in obj]
    if isinstance(obj, float) and not np.isfinite(obj):
        return "inf" if obj > 0 else "-inf"
    return obj


def _output_dir(root: Path, kind: str) -> Path:
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S%fZ")
    out = root / kind / stamp
    i = 0
    while out.exists():
        i += 1
        out = root / kind / f"{stamp}-{i}"
    out.mkdir(parents=True)
    return out


def run_experiment(config: ExperimentConfig, out_root=None, threads: int = 1, seed: int | None = None,
                   plots: bool = True) -> tuple[int, Path, str]:
    exp = config.experiment
    if seed is not None:
        exp.master_seed = int(seed)
    root = Path(out_root or exp.output_root or os.environ.get("MCRE_LAB_OUT", "results"))
    out = _output_dir(root, exp.kind)
    echo = _toml_clean(config.model_dump(mode="python"))
    echo["experiment"].pop("output_root", None)
    (out / "config.toml").write_text(tomli_w.dumps(echo))
    try:
        code, msg = RUNNERS[exp.kind](exp, out, threads)
    except queueing.AssumptionFailure as exc:
        code, msg = EXIT_ASSUMPTION, str(exc)
    except (ConfigError, TypeError, ValueError) as exc:
        code, msg = EXIT_CONFIG, f"{exp.kind}: {exc}"
    (out / "status.json").write_text(json.dumps({"exit_code": code, "message": msg,
                                                 "master_seed": exp.master_seed}, indent=2))
    if plots and code in (EXIT_OK, EXIT_CHECK):
        emit_plots(out)
    return code, out, msg


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="mcre-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment from a TOML config")
    run.add_argument("config")
    run.add_argument("--threads", type=int, default=1)
    run.add_argument("--out", default=None)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--no-plots", action="store_true")
    plot = sub.add_parser("plot", help="render figures for a result directory")
    plot.add_argument("result_dir")
    args = parser.parse_args(argv)

    if args.command == "plot":
        try:
            res = emit_plots(args.result_dir)
        except FileNotFoundError as exc:
            print(exc, file=sys.stderr)
            return EXIT_CONFIG
        print(res["status"])
        for f in res["files"]:
            print(f)
        return EXIT_OK

    try:
        config = load_config(args.config)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    code, out, msg = run_experiment(config, args.out, max(1, args.threads), args.seed, not args.no_plots)
    stream = sys.stdout if code == EXIT_OK else sys.stderr
    print(f"{msg}\nresults: {out}", file=stream)
    return code


if __name__ == "__main__":
    sys.exit(main())
