"""End-to-end runs with every stage persisted under one output directory.

Stages and their artifacts (relative to ``out_dir``):

    generate   data/day{d}_quotes.csv, data/day{d}_trades.csv
    label      labels/h{H}/day{d}.csv
    featurize  features/h{H}.npz
    warmup     models/h{H}/{set}/{key}.ckpt, {key}_logreg.json, {key}_mle.json
    deploy     predictions/h{H}/{set}/{model}_day{d}.csv
    evaluate   metrics/{set}.csv, roc/{set}.csv, roc/{set}_daily_avg.csv
    backtest   backtest/h{H}/{model}_ledger.csv, ..._summary.json, backtest/sweep.csv

``H`` is the horizon in microseconds, ``set`` a feature-set tag (``all``,
a single clock, or ``noclient``) and ``key`` names a model stack such as
``all_B`` or ``c3_S`` in per-client mode. Each stage reads only what the
previous stages wrote, so any suffix of the pipeline can be re-run.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .baselines import LogRModel, fit_logreg
from .evaluation import (FPR_GRID, average_daily_roc, daily_auc, tpr_fpr, write_metrics,
                         write_roc)
from .features import (CLOCKS, FeatureMatrix, Standardizer, feature_columns, featurize,
                       global_ts, load_features, save_features)
from .labeler import Horizon, Labels, label_tape, read_labels, write_labels
from .market_data import (Side, SynthConfig, Tape, TapeError, generate_tape,
                          load_tape, preset, write_tape)
from .nnet import NumericalError
from .pulse import (AsyncEngine, MleLearner, PulseFilter, PulseLearner, read_prediction_log,
                    write_prediction_log)
from .strategy import DEFAULT_CUTOFFS, StrategyConfig, run_backtest, sweep, write_sweep
from .warmup import SubspaceModel, WarmupConfig, init_priors, run_warmup

DEFAULT_HORIZONS = (1, 5, 10, 20, 30, 40, 50, 60, 70)
MODELS = ("pulse", "logreg", "mle")
OUT_ENV = "TOXICFLOW_OUT"


class ConfigError(ValueError):
    """Invalid run configuration."""


class StageError(RuntimeError):
    """A stage failed; ``cause`` keeps the original exception."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class RunConfig:
    """Everything a run depends on; serialized verbatim into the manifest."""

    synth: dict | None = field(default_factory=lambda: {"preset": "default"})
    data: list[dict] | None = None   # [{"quotes": path, "trades": path}, ...] one per day
    tick: float = 1e-6               # price resolution when reading CSV tapes
    horizons: list[float] = field(default_factory=lambda: list(DEFAULT_HORIZONS))
    warmup_days: int | None = 1
    warmup_fraction: float | None = None
    warmup: dict = field(default_factory=dict)
    models: list[str] = field(default_factory=lambda: list(MODELS))
    per_client: bool = False
    clocks: list[str] = field(default_factory=lambda: list(CLOCKS))
    client_features: bool = True
    clock_sweep: bool = False
    logreg_l2: float = 1e-6
    cutoffs: list[float] = field(default_factory=lambda: [float(c) for c in DEFAULT_CUTOFFS])
    aversions: list[float] = field(default_factory=lambda: [0.0])
    ledger_cutoff: float = 0.5
    fee: float = 0.0
    seed: int = 0
    out_dir: str = "toxicflow_out"

    def validate(self) -> None:
        if (self.synth is None) == (self.data is None):
            raise ConfigError("give exactly one of 'synth' and 'data'")
        if not self.horizons or any(h <= 0 for h in self.horizons):
            raise ConfigError("horizons must be positive")
        if (self.warmup_days is None) == (self.warmup_fraction is None):
            raise ConfigError("give exactly one of 'warmup_days' and 'warmup_fraction'")
        if self.warmup_days is not None and self.warmup_days < 1:
            raise ConfigError("warmup_days must be >= 1")
        if self.warmup_fraction is not None and not 0 < self.warmup_fraction < 1:
            raise ConfigError("warmup_fraction must lie in (0, 1)")
        bad = set(self.models) - set(MODELS)
        if bad or not self.models:
            raise ConfigError(f"unknown models {sorted(bad)}")
        if not self.clocks or set(self.clocks) - set(CLOCKS):
            raise ConfigError(f"clocks must be a non-empty subset of {CLOCKS}")
        if any(not 0 <= c <= 1 for c in self.cutoffs) or not 0 <= self.ledger_cutoff <= 1:
            raise ConfigError("cutoffs must lie in [0, 1]")
        if any(a < 0 for a in self.aversions):
            raise ConfigError("aversions must be non-negative")
        try:
            self.warmup_config().validate()
            if self.synth is not None:
                self.synth_config().validate()
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e

    def synth_config(self) -> SynthConfig:
        d = dict(self.synth)
        name = d.pop("preset", None)
        d.setdefault("seed", self.seed)
        return preset(name, **d) if name else SynthConfig(**d)

    def warmup_config(self) -> WarmupConfig:
        d = dict(self.warmup)
        d.setdefault("seed", self.seed)
        return WarmupConfig.from_dict(d)

    def horizons_us(self) -> list[int]:
        return [Horizon.seconds(h).g for h in self.horizons]

    def feature_sets(self) -> dict[str, np.ndarray]:
        """Column indices per feature-set tag."""
        sets = {"all": feature_columns(tuple(self.clocks), self.client_features)}
        if self.clock_sweep:
            for c in CLOCKS:
                sets[c] = feature_columns((c,), self.client_features)
        return sets

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config fields {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError(str(e)) from e

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e

    def hash(self) -> str:
        blob = json.dumps(self.to_dict() | {"out_dir": None}, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


class Run:
    """Stage runner bound to a config and an output directory."""

    def __init__(self, cfg: RunConfig, out_dir: str | os.PathLike | None = None):
        cfg.validate()
        self.cfg = cfg
        self.out = Path(out_dir or os.environ.get(OUT_ENV) or cfg.out_dir)
        self.timings: dict[str, float] = {}

    # paths -----------------------------------------------------------------
    def p(self, *parts) -> Path:
        path = self.out.joinpath(*[str(x) for x in parts])
        path.parent.mkdir(parents=True, exist_ok=True)
        return path

    def _stage(self, name, fn, *args):
        t0 = time.perf_counter()
        try:
            out = fn(*args)
        except StageError:
            raise
        except Exception as e:  # surfaced with stage context
            raise StageError(name, e) from e
        self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - t0
        return out

    # stage: generate / ingest ------------------------------------------------
    def generate(self) -> None:
        self._stage("generate", self._generate)

    def _generate(self) -> None:
        if self.cfg.synth is None:
            return
        scfg = self.cfg.synth_config()
        for d in range(scfg.n_days):
            tape = generate_tape(scfg, d)
            write_tape(tape, self.p("data", f"day{d}_quotes.csv"),
                       self.p("data", f"day{d}_trades.csv"))
        scfg.to_json(self.p("data", "synth_config.json"))

    def tapes(self) -> list[Tape]:
        if self.cfg.data is not None:
            return [load_tape(e["quotes"], e["trades"], day_id=e.get("day_id", d),
                              tick=self.cfg.tick) for d, e in enumerate(self.cfg.data)]
        n = self.cfg.synth_config().n_days
        return [load_tape(self.out / "data" / f"day{d}_quotes.csv",
                          self.out / "data" / f"day{d}_trades.csv", day_id=d, tick=self.cfg.tick)
                for d in range(n)]

    # stage: label ----------------------------------------------------------------
    def label(self) -> None:
        self._stage("label", self._label)

    def _label(self) -> None:
        for tape in self.tapes():
            for g in self.cfg.horizons_us():
                write_labels(tape, label_tape(tape, g), self.p("labels", f"h{g}", f"day{tape.day_id}.csv"))

    def labels(self, tapes: list[Tape], g: int) -> list[Labels]:
        return [read_labels(self.out / "labels" / f"h{g}" / f"day{t.day_id}.csv", t) for t in tapes]

    # stage: featurize ----------------------------------------------------------
    def featurize(self) -> None:
        self._stage("featurize", self._featurize)

    def _featurize(self) -> None:
        tapes = self.tapes()
        for g in self.cfg.horizons_us():
            save_features(featurize(tapes, self.labels(tapes, g)), self.p("features", f"h{g}.npz"))

    def _stream(self, g: int):
        """Features, labels and the warmup mask for horizon ``g``, in trade order."""
        tapes = self.tapes()
        labs = self.labels(tapes, g)
        fm = load_features(self.out / "features" / f"h{g}.npz")
        y = np.concatenate([l.y for l in labs]).astype(int)
        cens = np.concatenate([l.censored for l in labs])
        gts = global_ts(fm.day_id, fm.ts)
        if self.cfg.warmup_days is not None:
            days = sorted({t.day_id for t in tapes})
            if self.cfg.warmup_days >= len(days):
                raise ConfigError("warmup_days leaves no deploy days")
            warm = fm.day_id < days[self.cfg.warmup_days]
        else:
            cut = gts[0] + self.cfg.warmup_fraction * (gts[-1] - gts[0])
            warm = gts <= cut
        if warm.all() or not warm.any():
            raise ConfigError("warmup split leaves an empty warmup or deploy set")
        return tapes, fm, y, cens, gts, warm

    def _keys(self, fm: FeatureMatrix) -> np.ndarray:
        side = np.where(fm.side == Side.BUY, "B", "S")
        owner = fm.client.astype(str) if self.cfg.per_client else np.full(len(fm), "all")
        return np.char.add(np.char.add(owner.astype(str), "_"), side)

    # stage: warmup -------------------------------------------------------------
    def warmup(self) -> None:
        self._stage("warmup", self._warmup)

    def _warmup(self) -> None:
        wcfg = self.cfg.warmup_config()
        for g in self.cfg.horizons_us():
            _, fm, y, _, _, warm = self._stream(g)
            keys = self._keys(fm)
            for tag, cols in self.cfg.feature_sets().items():
                for key in np.unique(keys[warm]):
                    m = warm & (keys == key)
                    X = fm.values[m][:, cols]
                    st = Standardizer.fit(X)
                    Xs = st.transform(X)
                    base = self.p("models", f"h{g}", tag, key)
                    if "pulse" in self.cfg.models:
                        res = run_warmup(Xs, y[m], wcfg, st)
                        res.model.save(f"{base}.ckpt")
                    if "logreg" in self.cfg.models:
                        lr = fit_logreg(Xs, y[m], l2=self.cfg.logreg_l2)
                        with open(f"{base}_logreg.json", "w") as fh:
                            json.dump({"w": lr.w.tolist(), "converged": lr.converged,
                                       "nll": lr.nll, "standardizer": st.to_dict()}, fh)
                    with open(f"{base}_mle.json", "w") as fh:
                        json.dump({"success": int(y[m].sum()), "total": int(m.sum())}, fh)

    # stage: deploy ------------------------------------------------------------
    def deploy(self) -> None:
        self._stage("deploy", self._deploy)

    def _deploy(self) -> None:
        for g in self.cfg.horizons_us():
            tapes, fm, y, _, gts, warm = self._stream(g)
            keys = self._keys(fm)
            dep = np.nonzero(~warm)[0]
            missing = set(keys[dep]) - set(keys[warm])
            if missing:
                raise TapeError(f"no warmup data for model stacks {sorted(missing)}")
            for tag, cols in self.cfg.feature_sets().items():
                self._deploy_set(g, tag, cols, fm, y, gts, keys, dep)

    def _deploy_set(self, g, tag, cols, fm, y, gts, keys, dep) -> None:
        mdir = self.out / "models" / f"h{g}" / tag
        preds = {m: np.empty(len(dep)) for m in self.cfg.models}
        versions = {m: np.zeros(len(dep), np.int64) for m in self.cfg.models}
        for key in np.unique(keys[dep]):
            idx = np.nonzero(keys[dep] == key)[0]
            rows = dep[idx]
            if "pulse" in self.cfg.models:
                model = SubspaceModel.load(mdir / f"{key}.ckpt")
                X = model.standardizer.transform(fm.values[rows][:, cols])
                eng = AsyncEngine(PulseLearner(PulseFilter(model, init_priors(model))), g)
                for k, r in enumerate(rows):
                    preds["pulse"][idx[k]], versions["pulse"][idx[k]] = \
                        eng.process_arrival(gts[r], X[k], y[r])
            if "logreg" in self.cfg.models:
                with open(mdir / f"{key}_logreg.json") as fh:
                    d = json.load(fh)
                lr = LogRModel(np.array(d["w"]), d["converged"], d["nll"])
                st = Standardizer.from_dict(d["standardizer"])
                preds["logreg"][idx] = lr.predict(st.transform(fm.values[rows][:, cols]))
            if "mle" in self.cfg.models:
                with open(mdir / f"{key}_mle.json") as fh:
                    d = json.load(fh)
                mle = MleLearner()
                mle.success, mle.total = d["success"], d["total"]
                eng = AsyncEngine(mle, g)
                for k, r in enumerate(rows):
                    p, v = eng.process_arrival(gts[r], None, y[r])
                    preds["mle"][idx[k]] = p
                    versions["mle"][idx[k]] = v - d["total"]
        for m in self.cfg.models:
            for day in np.unique(fm.day_id[dep]):
                sel = fm.day_id[dep] == day
                rows = dep[sel]
                write_prediction_log(self.p("predictions", f"h{g}", tag, f"{m}_day{day}.csv"),
                                     fm.ts[rows], fm.client[rows], fm.side[rows], g,
                                     preds[m][sel], versions[m][sel])

    def predictions(self, g: int, tag: str, model: str, days) -> list[np.ndarray]:
        return [read_prediction_log(self.out / "predictions" / f"h{g}" / tag / f"{model}_day{d}.csv")["p"]
                for d in days]

    # stage: evaluate ------------------------------------------------------------
    def evaluate(self) -> None:
        self._stage("evaluate", self._evaluate)

    def _evaluate(self) -> None:
        for tag in self.cfg.feature_sets():
            metric_rows, roc_rows, avg_rows = [], [], []
            for g in self.cfg.horizons_us():
                tapes, fm, y, cens, _, warm = self._stream(g)
                days = [int(d) for d in np.unique(fm.day_id[~warm])]
                dep = ~warm
                for m in self.cfg.models:
                    p = np.concatenate(self.predictions(g, tag, m, days))
                    yd, dd, cd = y[dep], fm.day_id[dep], cens[dep]
                    for day, a in daily_auc(p, yd, dd, cd).items():
                        metric_rows.append((day, m, g, a, int(np.sum((dd == day) & ~cd))))
                    keep = ~cd
                    for c in FPR_GRID:
                        tpr, fpr = tpr_fpr(p[keep], yd[keep], c)
                        if tpr is not None and fpr is not None:
                            roc_rows.append((m, g, c, fpr, tpr))
                    try:
                        curve = average_daily_roc(p, yd, dd, censored=cd)
                    except ValueError:
                        continue
                    avg_rows += [(m, g, f, t) for f, t in zip(FPR_GRID, curve)]
            write_metrics(self.p("metrics", f"{tag}.csv"), metric_rows)
            write_roc(self.p("roc", f"{tag}.csv"), roc_rows)
            with open(self.p("roc", f"{tag}_daily_avg.csv"), "w") as fh:
                fh.write("model,horizon_us,fpr,tpr\n")
                for m, g, f, t in avg_rows:
                    fh.write(f"{m},{g},{f!r},{t!r}\n")

    # stage: backtest ------------------------------------------------------------
    def backtest(self) -> None:
        self._stage("backtest", self._backtest)

    def _backtest(self) -> None:
        rows = []
        for g in self.cfg.horizons_us():
            tapes, fm, _, _, _, warm = self._stream(g)
            days = [int(d) for d in np.unique(fm.day_id[~warm])]
            dep_tapes = [t for t in tapes if t.day_id in days]
            first = np.nonzero(~warm)[0][0]
            # a fractional split can start deploy mid-day: keep only deploy trades
            if fm.day_id[first] == days[0] and warm[fm.day_id == days[0]].any():
                dep_tapes[0] = _tail(dep_tapes[0], int(np.sum(warm & (fm.day_id == days[0]))))
            for m in self.cfg.models:
                preds = self.predictions(g, "all", m, days)
                led = run_backtest(dep_tapes, preds, StrategyConfig(
                    self.cfg.ledger_cutoff, self.cfg.aversions[0], g, self.cfg.fee))
                led.write_csv(self.p("backtest", f"h{g}", f"{m}_ledger.csv"))
                led.write_summary(self.p("backtest", f"h{g}", f"{m}_summary.json"))
                rows += sweep(dep_tapes, preds, g, self.cfg.cutoffs, self.cfg.aversions,
                              model=m, fee=self.cfg.fee)
        write_sweep(self.p("backtest", "sweep.csv"), rows)

    # whole run -----------------------------------------------------------------
    def run_all(self) -> dict:
        for stage in (self.generate, self.label, self.featurize, self.warmup, self.deploy,
                      self.evaluate, self.backtest):
            stage()
        return self.write_manifest()

    def write_manifest(self) -> dict:
        artifacts = {}
        for path in sorted(self.out.rglob("*")):
            if path.is_file() and path.name != "manifest.json":
                artifacts[path.relative_to(self.out).as_posix()] = _sha256(path)
        versions = {"toxicflow": __version__, "numpy": np.__version__,
                    "scipy": scipy.__version__, "python": platform.python_version()}
        core = {"config_hash": self.cfg.hash(), "versions": versions, "artifacts": artifacts}
        manifest = {**core, "config": self.cfg.to_dict(),
                    "manifest_hash": hashlib.sha256(
                        json.dumps(core, sort_keys=True).encode()).hexdigest(),
                    "stage_seconds": self.timings}
        with open(self.p("manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
        return manifest


def _tail(tape: Tape, skip: int) -> Tape:
    """The tape with its first ``skip`` trades removed (quotes kept)."""
    return dataclasses.replace(tape, t_ts=tape.t_ts[skip:], client=tape.client[skip:],
                               side=tape.side[skip:], qty=tape.qty[skip:])


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def run_pipeline(cfg: RunConfig, out_dir=None) -> dict:
    """Run every stage and return the manifest."""
    return Run(cfg, out_dir).run_all()


def error_exit_code(exc: BaseException) -> int:
    """Map a failure to the CLI exit code (2 config, 3 data, 4 numerical)."""
    cause = exc.cause if isinstance(exc, StageError) else exc
    if isinstance(cause, ConfigError):
        return 2
    if isinstance(cause, (NumericalError, FloatingPointError)):
        return 4
    if isinstance(cause, (TapeError, OSError, KeyError)):
        return 3
    return 1
