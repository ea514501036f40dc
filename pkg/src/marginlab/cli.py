"""Command-line front end.

Commands: gen, check, margin, train, analyze, repro. Every command writes
its outputs to files and prints exactly one JSON manifest of output paths on
stdout; diagnostics go to stderr. Exit codes: 0 success, 1 validation or
precondition failure, 2 convergence failure or tainted run.

Experiments are driven by a JSON config document (see ExperimentConfig);
parse -> serialize -> parse is the identity. MARGINLAB_THREADS caps ensemble
parallelism.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import analysis as ana
from . import data as dat
from . import optim as opt
from . import scenarios
from .margin import ConvergenceError, MarginResult, max_margin
from .model import ModelKind, MultiNeuronNet
from .optim import ConstantStep, PolynomialStep

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


class TaintedRunError(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    """One experiment: dataset, model, algorithm, schedule, analyses.

    dataset: {"generator": "separable"|"combes"|"example1"|"example2", ...params}
             or {"path": "file.csv"}
    transform: optional {"augment": bool, "leaky_lambda": float}
    model: {"kind": "relu"} | {"kind": "leaky", "lambda": x} | {"kind": "linear"}
    schedule: {"eta": x} for gd / gd-net, {"alpha": a} for sgd / sgd-net
    init: {"w0": [...]} or {"mode": "zeros"|"first-pos"|"neg-mean"|"random",
           "scale": s, "seed": k}
    net: {"v": [...], "W0": [[...]]} for the net algorithms
    """

    dataset: dict
    algorithm: str
    schedule: dict
    T: int
    out_dir: str
    model: dict = field(default_factory=lambda: {"kind": "relu"})
    transform: dict = field(default_factory=dict)
    seeds: list = field(default_factory=list)
    stride: int = 0
    init: dict = field(default_factory=lambda: {"mode": "neg-mean", "scale": 1.0})
    net: dict = field(default_factory=dict)
    analysis: list = field(default_factory=list)
    reference_step: int | None = None
    weights_sidecar: bool = False
    schema_version: int = SCHEMA_VERSION

    _FIELDS = (
        "dataset", "algorithm", "schedule", "T", "out_dir", "model",
        "transform", "seeds", "stride", "init", "net", "analysis",
        "reference_step", "weights_sidecar", "schema_version",
    )

    def validate(self) -> None:
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}")
        if self.algorithm not in ("gd", "sgd", "gd-net", "sgd-net"):
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if self.T < 1:
            raise ConfigError("T must be >= 1")
        if self.stride < 0:
            raise ConfigError("stride must be >= 0")
        if self.algorithm in ("gd", "gd-net"):
            if "eta" not in self.schedule or "alpha" in self.schedule:
                raise ConfigError("gd algorithms need a constant schedule {'eta': x}")
            if not float(self.schedule["eta"]) > 0:
                raise ConfigError("eta must be > 0")
        else:
            if "alpha" not in self.schedule or "eta" in self.schedule:
                raise ConfigError(
                    "sgd algorithms need a polynomial schedule {'alpha': a}"
                )
            a = float(self.schedule["alpha"])
            if not 0.5 < a < 1.0:
                raise ConfigError(f"alpha must be in (0.5, 1), got {a}")
            if not self.seeds:
                raise ConfigError("sgd algorithms need a non-empty seeds list")
        kind = self.model.get("kind", "relu")
        if kind not in ("relu", "leaky", "linear"):
            raise ConfigError(f"unknown model kind {kind!r}")
        if kind == "leaky":
            lam = self.model.get("lambda")
            if lam is None or not 0.0 < float(lam) < 1.0:
                raise ConfigError("leaky model needs 'lambda' in (0, 1)")
        if self.algorithm.endswith("-net") and not self.net:
            raise ConfigError("net algorithms need a 'net' section")
        bad = [k for k in self.analysis
               if k not in ("regime", "rates", "variance", "partitions")]
        if bad:
            raise ConfigError(f"unknown analysis requests {bad}")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self._FIELDS}

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        unknown = set(doc) - set(cls._FIELDS)
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        missing = [k for k in ("dataset", "algorithm", "schedule", "T", "out_dir")
                   if k not in doc]
        if missing:
            raise ConfigError(f"missing required config keys {missing}")
        cfg = cls(**doc)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str) -> "ExperimentConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(doc)

    def save(self, path: str) -> None:
        dat._atomic_write_text(
            path, json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"
        )


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, frozenset):
        return sorted(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, float) and math.isinf(obj):
        return "inf" if obj > 0 else "-inf"
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return _jsonable(
            {f.name: getattr(obj, f.name) for f in dataclasses.fields(obj)
             if f.name not in ("trace", "members")}
        )
    if hasattr(obj, "__str__") and obj.__class__.__module__.startswith("marginlab"):
        return str(obj)
    return obj


def _write_json(path: str, doc: dict) -> None:
    dat._atomic_write_text(path, json.dumps(_jsonable(doc), indent=2) + "\n")


def _build_dataset(spec: dict, transform: dict) -> dat.Dataset:
    if "path" in spec:
        ds = dat.load(spec["path"])
    else:
        gen = spec.get("generator")
        if gen == "separable":
            ds = dat.gen_separable(
                int(spec["n_pos"]), int(spec["n_neg"]), int(spec["dim"]),
                float(spec.get("min_margin", 0.1)), int(spec.get("seed", 0)),
            )
        elif gen == "combes":
            ds = dat.gen_combes(
                int(spec["n_pos"]), int(spec["n_neg"]), int(spec["dim"]),
                int(spec.get("seed", 0)),
            )
        elif gen == "example1":
            ds = dat.gen_example1()
        elif gen == "example2":
            ds = dat.gen_example2()
        else:
            raise ConfigError(f"unknown dataset generator {gen!r}")
    if transform.get("augment"):
        ds = dat.augment(ds)
    lam = transform.get("leaky_lambda")
    if lam is not None:
        ds = dat.leaky_transform(ds, float(lam))
    return ds


def _build_kind(spec: dict) -> ModelKind:
    kind = spec.get("kind", "relu")
    if kind == "relu":
        return ModelKind.relu()
    if kind == "linear":
        return ModelKind.linear()
    return ModelKind.leaky(float(spec["lambda"]))


def _build_w0(spec: dict, ds: dat.Dataset) -> np.ndarray:
    if "w0" in spec:
        w0 = np.asarray(spec["w0"], dtype=np.float64)
        if w0.shape != (ds.dim,):
            raise ConfigError(f"w0 has shape {w0.shape}, dataset dim is {ds.dim}")
        return w0
    return opt.init_weights(
        ds, spec.get("mode", "neg-mean"),
        float(spec.get("scale", 1.0)), int(spec.get("seed", 0)),
    )


def _build_net(spec: dict, ds: dat.Dataset) -> MultiNeuronNet:
    v = np.asarray(spec["v"], dtype=np.float64)
    W0 = np.asarray(spec["W0"], dtype=np.float64)
    if W0.shape != (ds.dim, v.shape[0]):
        raise ConfigError(
            f"W0 shape {W0.shape} does not match (dim, K) = ({ds.dim}, {v.shape[0]})"
        )
    return MultiNeuronNet(W0, v)


# ---------------------------------------------------------------------------
# Commands. Each returns (exit_code, manifest_dict).


def cmd_gen(args) -> tuple[int, dict]:
    spec = {"generator": args.generator}
    if args.generator in ("separable", "combes"):
        spec.update(n_pos=args.n_pos, n_neg=args.n_neg, dim=args.dim,
                    seed=args.seed)
        if args.generator == "separable":
            spec["min_margin"] = args.min_margin
    transform = {}
    if args.augment:
        transform["augment"] = True
    if args.leaky is not None:
        transform["leaky_lambda"] = args.leaky
    ds = _build_dataset(spec, transform)
    dat.save(ds, args.out)
    return 0, {"dataset": args.out}


def cmd_check(args) -> tuple[int, dict]:
    ds = dat.load(args.data)
    report = dat.check_combes(ds)
    out = args.out or (os.path.splitext(args.data)[0] + ".check.json")
    _write_json(out, {
        "schema_version": SCHEMA_VERSION,
        "combes_ok": report.combes_ok,
        "violating_pairs": list(report.violating_pairs),
        "separable": report.separable,
        "separability_witness": report.separability_witness,
    })
    return 0, {"report": out}


def _margin_doc(res: MarginResult) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "direction": res.direction,
        "gamma": res.gamma,
        "dual_q": res.dual_q,
        "duality_gap": res.duality_gap,
        "iterations": res.iterations,
        "certified": res.certified,
    }


def cmd_margin(args) -> tuple[int, dict]:
    ds = dat.load(args.data)
    if args.set == "positives":
        points = ds.points[ds.pos_indices]
    elif args.set == "signed":
        points = ds.signed_points()
    else:
        raise ConfigError(f"unknown point set {args.set!r}")
    res = max_margin(points, tol=args.tol, max_iter=args.max_iter)
    out = args.out or (os.path.splitext(args.data)[0] + ".margin.json")
    _write_json(out, _margin_doc(res))
    return 0, {"report": out}


def _regime_doc(report: ana.RegimeReport) -> dict:
    return {
        "regime": report.regime,
        "subset": report.subset,
        "target_direction": report.target_direction,
        "stabilization_step": report.stabilization_step,
        "final_direction_error": report.final_direction_error,
        "region_flip_count": report.region_flip_count,
        "membership": report.membership,
        "note": report.note,
    }


def _single_neuron_report(cfg, ds, kind, traj, ens) -> dict:
    doc: dict = {"schema_version": SCHEMA_VERSION, "algorithm": cfg.algorithm,
                 "tainted": traj.tainted if traj else ens.tainted}
    lstar = ds.n_neg / ds.n
    if "regime" in cfg.analysis or not cfg.analysis:
        if traj is not None:
            doc["regime"] = _regime_doc(ana.classify_trajectory(traj, ds))
        else:
            regimes = [ana.classify_trajectory(m, ds) for m in ens.members]
            doc["member_regimes"] = [r.regime for r in regimes]
            doc["regime"] = _regime_doc(regimes[0])
    if "rates" in cfg.analysis:
        rates = []
        if traj is not None:
            rep = ana.classify_trajectory(traj, ds)
            if rep.target_direction is not None:
                series = ana.direction_error_series(traj, rep.target_direction)
                rates.append(ana.fit_rate(series, "loglog_over_log"))
        else:
            wplus = max_margin(ds.points[ds.pos_indices]).direction
            loss_series = [
                (int(t), v - lstar)
                for t, v in zip(ens.ts, ens.mean_loss_avg_w)
                if v - lstar > 0
            ]
            alpha = cfg.schedule["alpha"]
            rates.append(ana.fit_rate(loss_series, "poly_log", alpha=alpha))
            derr = ana.ensemble_direction_error_series(ens, wplus)
            sq = [(t, e * e) for t, e in derr]
            rates.append(ana.fit_rate(sq, "inv_log"))
            growth = ana.norm_growth(ens)
            lo, floor, ok = ana.norm_growth_passes(growth)
            doc["norm_growth"] = {"min_ratio": lo, "floor": floor, "passes": ok}
        doc["rates"] = rates
    if "variance" in cfg.analysis:
        target = ens if ens is not None else traj
        doc["variance"] = ana.verify_variance_bound(target, ds)
    return doc


def cmd_train(args) -> tuple[int, dict]:
    cfg = ExperimentConfig.load(args.config)
    if args.out:
        cfg.out_dir = args.out
    os.makedirs(cfg.out_dir, exist_ok=True)
    ds = _build_dataset(cfg.dataset, cfg.transform)
    kind = _build_kind(cfg.model)
    files: list[str] = []

    ds_path = os.path.join(cfg.out_dir, "dataset.csv")
    dat.save(ds, ds_path)
    files.append(ds_path)
    cfg_path = os.path.join(cfg.out_dir, "config.json")
    cfg.save(cfg_path)
    files.append(cfg_path)

    tainted = False
    report_doc: dict = {}
    if cfg.algorithm in ("gd", "sgd"):
        w0 = _build_w0(cfg.init, ds)
        dir_global = None
        try:
            res = max_margin(ds.points[ds.pos_indices])
            if res.certified:
                dir_global = res.direction
        except ConvergenceError:
            pass
        if cfg.algorithm == "gd":
            traj = opt.run_gd(ds, kind, w0, ConstantStep(float(cfg.schedule["eta"])),
                              cfg.T, cfg.stride)
            ens = None
            members = [traj]
        else:
            sched = PolynomialStep(float(cfg.schedule["alpha"]))
            if len(cfg.seeds) == 1:
                traj = opt.run_sgd(ds, kind, w0, sched, cfg.T,
                                   int(cfg.seeds[0]), cfg.stride)
                ens = None
                members = [traj]
            else:
                ens = opt.run_sgd_ensemble(ds, kind, w0, sched, cfg.T,
                                           cfg.seeds, cfg.stride)
                traj = None
                members = list(ens.members)
                ens_path = os.path.join(cfg.out_dir, "ensemble.json")
                opt.save_ensemble_json(ens, ens_path)
                files.append(ens_path)
        for m in members:
            tag = f"seed{m.rng_seed}" if m.rng_seed is not None else "gd"
            path = os.path.join(cfg.out_dir, f"trajectory_{tag}.csv")
            files.extend(
                opt.save_trajectory_csv(m, path, dir_global=dir_global,
                                        weights_sidecar=cfg.weights_sidecar)
            )
            tainted = tainted or m.tainted
        if tainted:
            # clamped exponents invalidate any rate analysis; record the fact
            report_doc = {"schema_version": SCHEMA_VERSION,
                          "algorithm": cfg.algorithm, "tainted": True,
                          "note": "analysis refused: exponent clamp fired"}
        elif cfg.analysis:
            report_doc = _single_neuron_report(cfg, ds, kind, traj, ens)
    else:
        net0 = _build_net(cfg.net, ds)
        if cfg.algorithm == "gd-net":
            ntraj = opt.run_gd_net(ds, net0, float(cfg.schedule["eta"]),
                                   cfg.T, cfg.stride)
        else:
            sched = PolynomialStep(float(cfg.schedule["alpha"]))
            ntraj = opt.run_sgd_net(ds, net0, sched, cfg.T,
                                    int(cfg.seeds[0]), cfg.stride)
        tainted = ntraj.tainted
        report_doc = {"schema_version": SCHEMA_VERSION, "algorithm": cfg.algorithm,
                      "tainted": tainted,
                      "pattern_change_steps": ntraj.pattern_change_steps[:100]}
        if "partitions" in cfg.analysis and not tainted:
            if cfg.reference_step is not None:
                ref = cfg.reference_step
            elif ntraj.pattern_change_steps.size:
                ref = int(ntraj.pattern_change_steps[-1]) + 1
            else:
                ref = 1
            report_doc["partitions"] = ana.verify_partition_claims(ntraj, ds, ref)

    if report_doc:
        rep_path = os.path.join(cfg.out_dir, "report.json")
        _write_json(rep_path, report_doc)
        files.append(rep_path)

    manifest = {"out_dir": cfg.out_dir, "files": files}
    return (2 if tainted else 0), manifest


def cmd_analyze(args) -> tuple[int, dict]:
    table = opt.load_trajectory_csv(args.trajectory)
    requests = [r.strip() for r in args.requests.split(",") if r.strip()]
    doc: dict = {"schema_version": SCHEMA_VERSION,
                 "trajectory": args.trajectory,
                 "tainted": bool(table.overflow.any())}
    if bool(table.overflow.any()):
        raise TaintedRunError("trajectory file is tainted by overflow records")
    if "regime" in requests:
        labels = [str(r) for r in table.regions]
        flips = sum(1 for a, b in zip(labels, labels[1:]) if a != b)
        half = table.ts[-1] / 2
        late = [lbl for t, lbl in zip(table.ts, labels) if t >= half]
        late_flips = sum(1 for a, b in zip(late, late[1:]) if a != b)
        stabilized = late_flips < ana.DEFAULT_FLIP_THRESHOLD
        doc["regime"] = {
            "recorded_flips": flips,
            "recorded_flips_final_half": late_flips,
            "stabilized": stabilized,
            "final_region": labels[-1],
            "note": "recorded-step granularity only; per-step flip counts "
                    "are available in-process",
        }
    if "rates" in requests:
        rates = []
        for name, col in (("dir_err_global", table.dir_err_global),
                          ("dir_err_target", table.dir_err_target)):
            series = [(int(t), float(v)) for t, v in zip(table.ts, col)
                      if not math.isnan(v) and v > 0]
            if len(series) >= 4:
                fit = ana.fit_rate(series, "loglog_over_log")
                rates.append({"series": name, "fit": fit})
        doc["rates"] = rates
    if "variance" in requests:
        keep = table.ts >= 2
        ratios = table.var_sum[keep] / np.log(table.ts[keep].astype(float))
        half = max(2, math.ceil(ratios.size * 0.5))
        window = ratios[-half:]
        doc["variance"] = {
            "sup_ratio": float(window.max()),
            "median_ratio": float(np.median(window)),
            "passes": bool(window.max() <= 2.0 * np.median(window)),
        }
    _write_json(args.out, doc)
    return 0, {"report": args.out}


# ---------------------------------------------------------------------------
# Canned reproductions


def _repro_example(name: str, out_dir: str, quick: bool) -> tuple[int, dict]:
    T = 2000 if quick else 100_000
    if name == "example1":
        dataset = {"generator": "example1"}
        init = {"w0": list(scenarios.EXAMPLE1_W0)}
        expect = "local_max_margin"
    else:
        dataset = {"generator": "example2"}
        init = {"w0": list(scenarios.EXAMPLE2_W0)}
        expect = "oscillation"
    ds = _build_dataset(dataset, {})
    eta = opt.default_gd_stepsize(ds)
    cfg = ExperimentConfig(
        dataset=dataset, algorithm="gd", schedule={"eta": eta}, T=T,
        out_dir=out_dir, init=init, analysis=["regime", "rates"]
        if name == "example1" else ["regime"],
    )
    cfg_path = os.path.join(out_dir, "config.json")
    os.makedirs(out_dir, exist_ok=True)
    cfg.save(cfg_path)
    code, manifest = cmd_train(argparse.Namespace(config=cfg_path, out=None))
    with open(os.path.join(out_dir, "report.json"), encoding="utf-8") as fh:
        report = json.load(fh)
    achieved = report.get("regime", {}).get("regime")
    report["claim"] = {"expected_regime": expect, "achieved_regime": achieved,
                       "ok": achieved == expect}
    _write_json(os.path.join(out_dir, "report.json"), report)
    if not report["claim"]["ok"]:
        print(f"repro {name}: expected {expect}, got {achieved}", file=sys.stderr)
        return 2, manifest
    return code, manifest


def _repro_combes_sgd(out_dir: str, quick: bool) -> tuple[int, dict]:
    T = 20_000 if quick else 1_000_000
    seeds = list(range(1, 6)) if quick else list(range(1, 21))
    cfg = ExperimentConfig(
        dataset={"generator": "combes", "n_pos": 4, "n_neg": 4, "dim": 4,
                 "seed": 1},
        algorithm="sgd", schedule={"alpha": 0.6}, T=T, out_dir=out_dir,
        seeds=seeds, init={"mode": "neg-mean", "scale": 0.5},
        analysis=["regime", "rates", "variance"],
    )
    os.makedirs(out_dir, exist_ok=True)
    cfg_path = os.path.join(out_dir, "config.json")
    cfg.save(cfg_path)
    return cmd_train(argparse.Namespace(config=cfg_path, out=None))


def _repro_leaky(out_dir: str, quick: bool) -> tuple[int, dict]:
    """SGD on the leaky model vs SGD on the linear model over the scaled data:
    identical seeds must give trajectories matching step for step."""
    T = 2000 if quick else 10_000
    lam = 0.25
    seed = 11
    os.makedirs(out_dir, exist_ok=True)
    ds = dat.gen_combes(4, 4, 3, seed=3)
    star = dat.leaky_transform(ds, lam)
    w0 = opt.init_weights(ds, "first-pos")
    sched = PolynomialStep(0.6)
    leaky = opt.run_sgd(ds, ModelKind.leaky(lam), w0, sched, T, seed)
    linear = opt.run_sgd(star, ModelKind.linear(), w0, sched, T, seed)
    worst = 0.0
    for a, b in zip(leaky.records, linear.records):
        denom = max(np.linalg.norm(a.w), 1e-300)
        worst = max(worst, float(np.linalg.norm(a.w - b.w)) / denom)
    files = []
    for tag, traj in (("leaky", leaky), ("linear_transformed", linear)):
        path = os.path.join(out_dir, f"trajectory_{tag}.csv")
        files.extend(opt.save_trajectory_csv(traj, path))
    ok = worst <= 1e-12
    _write_json(os.path.join(out_dir, "report.json"), {
        "schema_version": SCHEMA_VERSION,
        "claim": {"max_relative_deviation": worst, "tolerance": 1e-12, "ok": ok},
        "lambda": lam, "T": T, "seed": seed,
    })
    files.append(os.path.join(out_dir, "report.json"))
    if not ok:
        print(f"repro leaky: deviation {worst:.3e} exceeds 1e-12", file=sys.stderr)
        return 2, {"out_dir": out_dir, "files": files}
    return 0, {"out_dir": out_dir, "files": files}


def _repro_multi_neuron(out_dir: str, quick: bool) -> tuple[int, dict]:
    T = 3000 if quick else 100_000
    os.makedirs(out_dir, exist_ok=True)
    ds, net = scenarios.two_cone_instance(seed=0)
    ds_path = os.path.join(out_dir, "dataset.csv")
    dat.save(ds, ds_path)
    eta = opt.default_gd_stepsize(ds)
    gd = opt.run_gd_net(ds, net, eta, T)
    sgd = opt.run_sgd_net(ds, net, PolynomialStep(0.6), T, seed=5)
    ref = T // 10
    reports = {}
    ok = True
    for tag, ntraj in (("gd", gd), ("sgd", sgd)):
        rep = ana.verify_partition_claims(ntraj, ds, ref)
        reports[tag] = rep
        ok = ok and rep.disjointness_ok and rep.labels_uniform_ok \
            and rep.v_signs_ok and rep.recursion_ok
    _write_json(os.path.join(out_dir, "report.json"), {
        "schema_version": SCHEMA_VERSION,
        "reference_step": ref,
        "gd": reports["gd"],
        "sgd": reports["sgd"],
        "claim": {"ok": ok},
    })
    files = [ds_path, os.path.join(out_dir, "report.json")]
    return (0 if ok else 2), {"out_dir": out_dir, "files": files}


def cmd_repro(args) -> tuple[int, dict]:
    name = args.name
    out_dir = args.out or f"repro_{name.replace('-', '_')}"
    if name in ("example1", "example2"):
        return _repro_example(name, out_dir, args.quick)
    if name == "combes-sgd":
        return _repro_combes_sgd(out_dir, args.quick)
    if name == "leaky":
        return _repro_leaky(out_dir, args.quick)
    if name == "multi-neuron":
        return _repro_multi_neuron(out_dir, args.quick)
    raise ConfigError(f"unknown repro scenario {name!r}")


# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="marginlab",
        description="Implicit-bias experiments for ReLU-family classifiers "
                    "under exponential loss.",
    )
    p.add_argument("--quiet", action="store_true", help="suppress diagnostics")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a dataset CSV")
    g.add_argument("--generator", required=True,
                   choices=["separable", "combes", "example1", "example2"])
    g.add_argument("--n-pos", type=int, default=4)
    g.add_argument("--n-neg", type=int, default=4)
    g.add_argument("--dim", type=int, default=3)
    g.add_argument("--min-margin", type=float, default=0.1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--augment", action="store_true")
    g.add_argument("--leaky", type=float, default=None,
                   help="scale negative samples by this factor")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    c = sub.add_parser("check", help="two-cone condition + separability report")
    c.add_argument("--data", required=True)
    c.add_argument("--out")
    c.set_defaults(func=cmd_check)

    m = sub.add_parser("margin", help="certified max-margin direction")
    m.add_argument("--data", required=True)
    m.add_argument("--set", choices=["positives", "signed"], default="positives")
    m.add_argument("--tol", type=float, default=1e-8)
    m.add_argument("--max-iter", type=int, default=10**6)
    m.add_argument("--out")
    m.set_defaults(func=cmd_margin)

    t = sub.add_parser("train", help="run an experiment from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--out", help="override the config's out_dir")
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("analyze", help="re-analyze a trajectory CSV")
    a.add_argument("--trajectory", required=True)
    a.add_argument("--requests", default="regime,rates,variance")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_analyze)

    r = sub.add_parser("repro", help="run a canned experiment")
    r.add_argument("name", choices=["example1", "example2", "combes-sgd",
                                    "leaky", "multi-neuron"])
    r.add_argument("--out")
    r.add_argument("--quick", action="store_true",
                   help="reduced horizons for smoke testing (non-canonical)")
    r.set_defaults(func=cmd_repro)
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        code, manifest = args.func(args)
    except (ConfigError, dat.DatasetError, ana.AnalysisError, ValueError) as exc:
        if not args.quiet:
            print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        if not args.quiet:
            print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConvergenceError, TaintedRunError, dat.GenerationError) as exc:
        if not args.quiet:
            print(f"error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(manifest))
    return code


if __name__ == "__main__":
    sys.exit(main())
