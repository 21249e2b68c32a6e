"""Command-line driver.

Every stage reads its inputs from the output directory and writes its own
artifacts there, so any stage can be re-run on its own::

    tvstarima generate --out run/
    tvstarima pipeline --out run/ --set starima.lambda=2

Settings come from a flat ``key=value`` file (``--config``) and ``--set``
overrides, with keys namespaced per module (``isodata.k_max=3``).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import pipeline as pl
from . import starima as st
from .ccf import ccf_profile, select_ar_order
from .clustering import IsodataParams, SpeedCluster, SpeedClusterSet, isodata_1d
from .core_data import (
    FlowPanel,
    difference,
    load_csv,
    load_network,
    panels_from_series,
    smooth_panel,
    write_network,
    write_panels_csv,
)
from .errors import DataError, DependencyError, EstimationError, ParameterError, TvStarimaError
from .lags import UNDEFINED, LagMatrix
from .metrics import REPORT_HEADER, write_reports
from .partition import DayPartition, TimeRange, classify_periods
from .synth import SynthConfig, generate, default_regimes

logger = logging.getLogger("tvstarima")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_ESTIMATION = 0, 1, 2, 3

DEFAULTS: Dict[str, str] = {
    "paths.data": "",
    "paths.network": "",
    "input.slot_seconds": "30",
    "smooth.x_speed": "30",
    "smooth.x_flow": "4",
    "speed.source": "mean",
    "isodata.k_max": "3",
    "isodata.n_min": "5",
    "isodata.sigma2_max": "15",
    "isodata.d_min": "30",
    "isodata.max_iter": "10",
    "isodata.k_init": "2",
    "partition.delta": "8",
    "ccf.k_max": "10",
    "starima.lambda": "3",
    "starima.d": "1",
    "starima.q": "1",
    "starima.lag_mode": "speed_varying",
    "starima.ar_order_l0": "2",
    "starima.pacf_max_lag": "5",
    "starima.per_range": "true",
    "arima.order": "2,1,2",
    "forecast.horizon": "30",
    "seed": "0",
    "synth.n_stations": "4",
    "synth.spacing_feet": "8000",
    "synth.n_slots": "2880",
    "synth.fast_speed": "82",
    "synth.slow_speed": "34",
    "synth.jitter_sd": "2",
    "synth.profile": "two_peak",
    "synth.base_flow": "15",
    "synth.amplitude": "8",
    "synth.source_sd": "3",
    "synth.source_ar": "0.5",
    "synth.noise_sd": "0.3",
    "synth.blend": "0.9",
}

STAGES = ("generate", "smooth", "ccf", "cluster", "partition", "lags", "fit", "forecast", "evaluate", "pipeline")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# configuration


def parse_config_text(text: str) -> Dict[str, str]:
    out = {}
    for i, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {i}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


@dataclass
class Config:
    values: Dict[str, str]
    out: Path

    @classmethod
    def build(cls, out: Path, config_file: Optional[str], overrides: List[str]) -> "Config":
        values = dict(DEFAULTS)
        given = {}
        if config_file:
            try:
                given.update(parse_config_text(Path(config_file).read_text(encoding="utf-8")))
            except OSError as exc:
                raise UsageError(f"cannot read config: {exc}") from None
        given.update(parse_config_text("\n".join(overrides)))
        unknown = sorted(set(given) - set(DEFAULTS))
        if unknown:
            raise UsageError(f"unknown config key(s): {', '.join(unknown)}")
        values.update(given)
        return cls(values, out)

    def get(self, key: str) -> str:
        return self.values[key]

    def int(self, key: str) -> int:
        try:
            return int(self.values[key])
        except ValueError:
            raise UsageError(f"{key} must be an integer, got {self.values[key]!r}") from None

    def float(self, key: str) -> float:
        try:
            return float(self.values[key])
        except ValueError:
            raise UsageError(f"{key} must be a number, got {self.values[key]!r}") from None

    def bool(self, key: str) -> bool:
        v = self.values[key].lower()
        if v not in ("true", "false", "1", "0", "yes", "no"):
            raise UsageError(f"{key} must be true or false")
        return v in ("true", "1", "yes")

    def path(self, name: str) -> Path:
        return self.out / name

    def data_path(self) -> Path:
        return Path(self.values["paths.data"]) if self.values["paths.data"] else self.path("data.csv")

    def network_path(self) -> Path:
        return Path(self.values["paths.network"]) if self.values["paths.network"] else self.path("network.csv")

    def isodata(self) -> IsodataParams:
        return IsodataParams(
            k_max=self.int("isodata.k_max"),
            n_min=self.int("isodata.n_min"),
            sigma2_max=self.float("isodata.sigma2_max"),
            d_min=self.float("isodata.d_min"),
            max_iter=self.int("isodata.max_iter"),
            k_init=self.int("isodata.k_init"),
            seed=self.int("seed"),
        )

    def arima_order(self):
        try:
            p, d, q = (int(v) for v in self.values["arima.order"].split(","))
        except ValueError:
            raise UsageError("arima.order must look like p,d,q") from None
        return p, d, q


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise DependencyError(f"{path} is missing; run the '{stage}' stage first")
    return path


# ---------------------------------------------------------------------------
# artifact readers and writers


def _panel_to_dict(p: FlowPanel) -> dict:
    return {"stations": list(p.stations), "slot_seconds": p.slot_seconds, "start_slot": p.start_slot,
            "matrix": p.matrix.tolist()}


def _panel_from_dict(doc: dict) -> FlowPanel:
    return FlowPanel(tuple(doc["stations"]), float(doc["slot_seconds"]),
                     np.array(doc["matrix"], dtype=float), int(doc["start_slot"]))


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _read_json(path: Path, stage: str):
    return json.loads(_require(path, stage).read_text(encoding="utf-8"))


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_rows(path: Path, stage: str) -> List[dict]:
    with open(_require(path, stage), newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def load_smoothed(cfg: Config):
    doc = _read_json(cfg.path("smoothed.json"), "smooth")
    return _panel_from_dict(doc["flow"]), _panel_from_dict(doc["speed"])


def load_partition(cfg: Config) -> DayPartition:
    rows = _read_rows(cfg.path("partition.csv"), "partition")
    if not rows:
        raise DataError("partition.csv is empty")
    periods = []
    for row in rows:
        r, c, s = int(row["range_index"]), int(row["cluster_id"]), int(row["slot"])
        if r == len(periods):
            periods.append(TimeRange(c, s, s, float(row["mean_speed"])))
        else:
            p = periods[r]
            periods[r] = TimeRange(p.cluster_id, p.start, s, p.mean_speed)
    return DayPartition(tuple(periods), float(rows[0]["slot_seconds"]))


def load_lags(cfg: Config, network, mode: st.LagMode, lam: int, n_ranges: int) -> List[List[LagMatrix]]:
    rows = [r for r in _read_rows(cfg.path("lags.csv"), "lags") if r["lag_mode"] == mode.value]
    n_st = len(network)
    n_sets = n_ranges if mode is st.LagMode.SPEED_VARYING else 1
    tables = np.full((n_sets, lam, n_st, n_st), UNDEFINED, dtype=int)
    for r in rows:
        k, order = int(r["range"]), int(r["order"])
        if k < n_sets and 1 <= order <= lam:
            tables[k, order - 1, network.index(r["from"]), network.index(r["to"])] = int(r["lag_slots"])
    if lam and not rows:
        raise DependencyError(f"lags.csv has no {mode.value} lags; run the 'lags' stage first")
    source = {"speed_varying": "speed", "fixed_ccf": "ccf", "fixed_constant": "constant"}[mode.value]
    return [[LagMatrix(o + 1, tables[k, o], None, source) for o in range(lam)] for k in range(n_sets)] if lam else []


def build_spec(cfg: Config, flow: FlowPanel, mode: Optional[str] = None) -> st.StarimaSpec:
    ar = cfg.get("starima.ar_order_l0")
    d = cfg.int("starima.d")
    if ar == "pacf":
        z, _ = difference(flow.matrix, d)
        orders = tuple(select_ar_order(z[:, j], cfg.int("starima.pacf_max_lag")) for j in range(flow.n_stations))
        ar_order = orders
    else:
        ar_order = cfg.int("starima.ar_order_l0")
    return st.StarimaSpec(
        lam=cfg.int("starima.lambda"),
        d=d,
        q=cfg.int("starima.q"),
        lag_mode=st.LagMode(mode or cfg.get("starima.lag_mode")),
        ar_order_l0=ar_order,
    )


# ---------------------------------------------------------------------------
# stages


def stage_generate(cfg: Config) -> None:
    n_slots = cfg.int("synth.n_slots")
    config = SynthConfig(
        n_stations=cfg.int("synth.n_stations"),
        spacing_feet=cfg.float("synth.spacing_feet"),
        regimes=default_regimes(n_slots, cfg.float("synth.fast_speed"), cfg.float("synth.slow_speed"),
                                   cfg.float("synth.jitter_sd")),
        n_slots=n_slots,
        profile=cfg.get("synth.profile"),
        base_flow=cfg.float("synth.base_flow"),
        amplitude=cfg.float("synth.amplitude"),
        source_sd=cfg.float("synth.source_sd"),
        source_ar=cfg.float("synth.source_ar"),
        noise_sd=cfg.float("synth.noise_sd"),
        blend=cfg.float("synth.blend"),
        tau_seconds=cfg.float("input.slot_seconds"),
        seed=cfg.int("seed"),
    )
    network, flow, speed, truth = generate(config)
    write_panels_csv(cfg.data_path(), flow, speed)
    write_network(cfg.network_path(), network)
    _write_json(cfg.path("truth.json"), {
        "regimes": [{"start": r.start, "stop": r.stop, "speed": r.speed} for r in truth.regimes],
        "adjacent_lags": {network.stations[n]: list(v) for n, v in truth.adjacent_lags.items()},
    })


def stage_smooth(cfg: Config) -> None:
    network = load_network(_require(cfg.network_path(), "generate"))
    _, series = load_csv(_require(cfg.data_path(), "generate"), network, cfg.float("input.slot_seconds"))
    flow, speed = panels_from_series(series, network)
    _write_json(cfg.path("smoothed.json"), {
        "flow": _panel_to_dict(smooth_panel(flow, cfg.int("smooth.x_flow"))),
        "speed": _panel_to_dict(smooth_panel(speed, cfg.int("smooth.x_speed"))),
    })


def stage_ccf(cfg: Config) -> None:
    network = load_network(_require(cfg.network_path(), "generate"))
    flow, _ = load_smoothed(cfg)
    rows = []
    for order in range(1, cfg.int("starima.lambda") + 1):
        for n in range(len(network)):
            m = network.upstream_neighbor(n, order)
            if m is None:
                continue
            prof = ccf_profile(flow.matrix[:, m], flow.matrix[:, n], cfg.int("ccf.k_max"))
            for k, c in zip(prof.lags, prof.correlations):
                rows.append((network.stations[m], network.stations[n], int(k), repr(float(c))))
    _write_rows(cfg.path("ccf.csv"), ("from", "to", "lag", "correlation"), rows)


def stage_cluster(cfg: Config) -> None:
    _, speed = load_smoothed(cfg)
    profile = pl.speed_profile(speed, cfg.get("speed.source"))
    clusters = isodata_1d(profile, cfg.isodata())
    _write_json(cfg.path("clusters.json"), {
        "speed_source": cfg.get("speed.source"),
        "slot_seconds": speed.slot_seconds,
        "speeds": profile.tolist(),
        "clusters": [{"center": c.center, "members": sorted(c.members)} for c in clusters],
    })


def stage_partition(cfg: Config) -> None:
    doc = _read_json(cfg.path("clusters.json"), "cluster")
    clusters = SpeedClusterSet(tuple(SpeedCluster(c["center"], frozenset(c["members"])) for c in doc["clusters"]))
    part = classify_periods(clusters, doc["speeds"], cfg.int("partition.delta"), doc["slot_seconds"])
    rows = []
    for i, r in enumerate(part):
        for s in range(r.start, r.end + 1):
            rows.append((s, part.slot_seconds, r.cluster_id, i, part.label(i), repr(r.mean_speed)))
    _write_rows(cfg.path("partition.csv"),
                ("slot", "slot_seconds", "cluster_id", "range_index", "range_label", "mean_speed"), rows)


def stage_lags(cfg: Config) -> None:
    network = load_network(_require(cfg.network_path(), "generate"))
    flow, _ = load_smoothed(cfg)
    part = load_partition(cfg)
    lam = cfg.int("starima.lambda")
    rows = []
    for mode in st.LagMode:
        for k, mats in enumerate(pl.lag_schedule(mode, network, part, flow, lam, cfg.int("ccf.k_max"))):
            for lm in mats:
                for m, n, lag in lm.pairs():
                    rows.append((mode.value, k, lm.order, network.stations[m], network.stations[n], lag, lm.source))
    _write_rows(cfg.path("lags.csv"), ("lag_mode", "range", "order", "from", "to", "lag_slots", "lag_source"), rows)


def _fit(cfg: Config, mode: Optional[str] = None):
    network = load_network(_require(cfg.network_path(), "generate"))
    flow, _ = load_smoothed(cfg)
    part = load_partition(cfg)
    spec = build_spec(cfg, flow, mode)
    lags = load_lags(cfg, network, spec.lag_mode, spec.lam, len(part))
    weights = st.build_weights(network, spec.lam)
    train = ~pl.holdout_mask(flow, part, cfg.int("forecast.horizon"))
    shared = st.fit(flow, spec, weights, lags, part, rows=train)
    if not cfg.bool("starima.per_range"):
        return shared
    return st.fit_per_range(flow, spec, weights, lags, part, train, fallback=shared)


def stage_fit(cfg: Config) -> None:
    model = _fit(cfg)
    doc = model.to_dict()
    if isinstance(model, st.StarimaModel):
        doc["kind"] = "shared"
    _write_json(cfg.path("model.json"), doc)


def stage_forecast(cfg: Config) -> None:
    """Forecast the final held-out block of the day from the slots before it."""
    model = st.model_from_dict(_read_json(cfg.path("model.json"), "fit"))
    flow, _ = load_smoothed(cfg)
    part = load_partition(cfg)
    horizon = cfg.int("forecast.horizon")
    origin = flow.start_slot + flow.n_slots - horizon
    history = flow.window(flow.start_slot, origin)
    pred = st.forecast(model, history, horizon, part)
    actual = flow.window(origin, origin + horizon)
    rows = []
    for t in range(horizon):
        for j, s in enumerate(flow.stations):
            rows.append((origin + t, s, repr(float(pred.matrix[t, j])), repr(float(actual.matrix[t, j]))))
    _write_rows(cfg.path("forecast.csv"), ("slot", "station", "forecast", "actual"), rows)


def stage_evaluate(cfg: Config) -> None:
    network = load_network(_require(cfg.network_path(), "generate"))
    flow, _ = load_smoothed(cfg)
    part = load_partition(cfg)
    _require(cfg.path("lags.csv"), "lags")
    spec = build_spec(cfg, flow)
    comp = pl.compare_models(flow, network, part, spec, cfg.int("forecast.horizon"),
                             cfg.bool("starima.per_range"), cfg.int("ccf.k_max"), cfg.arima_order())
    rows = []
    for name in pl.MODEL_NAMES:
        write_reports(cfg.path(f"eval_{name}.csv"), comp.reports[name])
        rows.extend((name,) + r.row() for r in comp.reports[name])
    _write_rows(cfg.path("comparison.csv"), ("model",) + REPORT_HEADER, rows)


def stage_pipeline(cfg: Config, synth: bool = False) -> None:
    if synth:
        stage_generate(cfg)
    for stage in (stage_smooth, stage_ccf, stage_cluster, stage_partition, stage_lags,
                  stage_fit, stage_forecast, stage_evaluate):
        logger.info("running %s", stage.__name__[6:])
        stage(cfg)


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=".", help="artifact directory (default: current directory)")
    common.add_argument("--config", help="flat key=value settings file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one setting; repeatable")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")
    parser = argparse.ArgumentParser(prog="tvstarima", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    for name in STAGES:
        p = sub.add_parser(name, parents=[common], help=f"run the {name} stage")
        if name == "pipeline":
            p.add_argument("--synth", action="store_true", help="generate a synthetic corridor first")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        cfg = Config.build(out, args.config, args.overrides)
        if args.command == "pipeline":
            stage_pipeline(cfg, args.synth)
        else:
            globals()[f"stage_{args.command}"](cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ParameterError as exc:
        print(f"invalid setting: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EstimationError as exc:
        print(f"estimation failed: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except (TvStarimaError, ValueError, LookupError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
