"""
Command-line interface.

Every subcommand accepts ``--manifest`` (a JSON run manifest), ``--seed``
and ``--out``.  Values given on the command line win over the manifest.
``pipeline`` runs synth -> train -> calibrate -> run -> evaluate ->
montecarlo from one manifest.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import CueSchedule, SynthConfig, generate_synthetic
from .decoder import DecoderConfig, run_stream
from .errors import ConfigurationError, GaitBCIError
from .evaluation import (SessionReport, calibrate, evaluate_session, fit_null,
                         monte_carlo_p)
from .io import (dumps_trace, load_cues, load_recording, loads_trace, save_cues, save_recording,
                 write_text)
from .plant import PlantConfig, PlantLog, RoGOPlant, gyro
from .training import PredictionModel, TrainConfig, train

log = logging.getLogger("gaitbci")

GYRO_FS = 100.0


class StageError(Exception):
    def __init__(self, stage: str, msg: str):
        super().__init__(f"{stage}: {msg}")
        self.stage = stage


@dataclass
class Manifest:
    """Run manifest; every section is optional."""

    out: str = "gaitbci-run"
    seeds: dict = field(default_factory=dict)
    synth: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    decoder: dict = field(default_factory=dict)
    plant: dict = field(default_factory=dict)
    montecarlo: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)

    SEED_DEFAULTS = {"train": 1, "calibration": 2, "session": 3, "montecarlo": 4}
    # paths keys: training_recording, train_cues, calibration_recording,
    # calibration_cues, session_recording, session_cues, model, trace, plant_log, report

    @classmethod
    def load(cls, path) -> "Manifest":
        path = Path(path)
        try:
            d = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigurationError(f"cannot read manifest {path}: {e}") from None
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"{sorted(unknown)[0]}: unknown manifest section")
        m = cls(**d)
        # paths are relative to the manifest
        m.paths = {k: str((path.parent / v).resolve()) for k, v in m.paths.items()}
        m.validate()
        return m

    def seed(self, stage: str) -> int:
        return int(self.seeds.get(stage, self.SEED_DEFAULTS[stage]))

    def validate(self) -> None:
        """Every referenced file must exist and every section must parse."""
        for k, p in self.paths.items():
            if not Path(p).exists():
                raise ConfigurationError(f"paths.{k}: {p} does not exist")
        SynthConfig.from_dict({**self.synth, "seed": 0}).validate()
        TrainConfig.from_dict(self.train)
        DecoderConfig.from_dict(self.decoder)
        PlantConfig.from_dict(self.plant)
        for k in self.montecarlo:
            if k not in ("n", "max_lag"):
                raise ConfigurationError(f"montecarlo.{k}: unknown field")


def _read_json(path, what: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigurationError(f"cannot read {what} {path}: {e}") from None


def _write_json(path, obj) -> None:
    write_text(path, json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _outdir(args, default: str) -> Path:
    out = Path(args.out or (args.manifest_obj.out if args.manifest_obj else default))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _seed(args, stage: str) -> int:
    if args.seed is not None:
        return args.seed
    if args.manifest_obj is not None:
        return args.manifest_obj.seed(stage)
    return Manifest.SEED_DEFAULTS[stage]


def _path(args, attr: str, key: str, required: bool = True):
    v = getattr(args, attr, None)
    if v is None and args.manifest_obj is not None:
        v = args.manifest_obj.paths.get(key)
    if v is None and required:
        raise ConfigurationError(f"--{attr.replace('_', '-')} is required (or paths.{key} in the manifest)")
    return v


def _section(args, name: str, flag_path: str | None) -> dict:
    if flag_path:
        return _read_json(flag_path, f"{name} config")
    if args.manifest_obj is not None:
        return dict(getattr(args.manifest_obj, name))
    return {}


def _decoder_cfg(args) -> DecoderConfig:
    d = _section(args, "decoder", getattr(args, "decoder", None))
    if "decoder" in d:       # a calibration.json
        d = d["decoder"]
    return DecoderConfig.from_dict(d)


def _plant_cfg(args) -> PlantConfig:
    return PlantConfig.from_dict(_section(args, "plant", getattr(args, "plant", None)))


# -- subcommands ---------------------------------------------------------------

def cmd_synth(args) -> dict:
    d = _section(args, "synth", args.config)
    if args.seed is not None or args.manifest_obj is not None or "seed" not in d:
        d["seed"] = _seed(args, args.stage_seed)
    cfg = SynthConfig.from_dict(d)
    cfg.validate()
    cue_path = _path(args, "cues", f"{args.stage_seed}_cues", required=False)
    cues = load_cues(cue_path) if cue_path else (
        CueSchedule.session() if args.protocol == "session" else CueSchedule.training())
    out = _outdir(args, ".")
    rec = generate_synthetic(cfg, cues)
    path = out / args.name
    save_recording(path, rec)
    save_cues(out / (Path(args.name).stem + ".cues"), cues)
    print(f"wrote {path} ({rec.n_channels} channels, {rec.duration:g} s at {rec.fs:g} Hz)")
    return {"recording": path}


def cmd_train(args) -> dict:
    rec = load_recording(_path(args, "recording", "training_recording"))
    cues = load_cues(_path(args, "cues", "train_cues"))
    d = _section(args, "train", args.config)
    if args.seed is not None:
        d["seed"] = args.seed
    model = train(rec, cues, TrainConfig.from_dict(d))
    out = _outdir(args, ".")
    path = out / "model.json"
    model.save(path)
    mean, sd = model.cv_accuracy
    print(f"band [{model.band[0]:g}, {model.band[1]:g}) Hz, {len(model.retained_channels)} channels, "
          f"10-fold CV accuracy {mean:.3f} +/- {sd:.3f}")
    print(f"wrote {path}")
    return {"model": path}


def cmd_calibrate(args) -> dict:
    model = PredictionModel.load(_path(args, "model", "model"))
    rec = load_recording(_path(args, "recording", "calibration_recording"))
    cues = load_cues(_path(args, "cues", "calibration_cues"))
    cfg = _decoder_cfg(args)
    trace = run_stream(rec, model, cfg)
    phases = cues.state_at(trace.times - 1e-9)
    res = calibrate(trace.posteriors, phases)
    out = _outdir(args, ".")
    write_text(out / "calibration_histogram.txt", res.dumps())
    write_text(out / "calibration_trace.txt", dumps_trace(trace))
    dec = cfg.with_thresholds(res.t_idle, res.t_walk)
    _write_json(out / "calibration.json", {"decoder": dec.to_dict(), "swapped": res.swapped})
    print(f"suggested T_I = {res.t_idle:.3f}, T_W = {res.t_walk:.3f}")
    print(f"wrote {out / 'calibration.json'}")
    return {"calibration": out / "calibration.json"}


def cmd_run(args) -> dict:
    model = PredictionModel.load(_path(args, "model", "model"))
    rec = load_recording(_path(args, "recording", "session_recording"))
    cfg = _decoder_cfg(args)
    plant_cfg = _plant_cfg(args)
    plant = RoGOPlant(plant_cfg, rec.t0)
    trace = run_stream(rec, model, cfg, plant)
    out = _outdir(args, ".")
    write_text(out / "trace.txt", dumps_trace(trace))
    write_text(out / "plant_log.txt", plant.log.dumps())
    save_recording(out / "gyro.gbr", gyro(plant.log, GYRO_FS, rec.t0 + rec.duration, plant_cfg).to_recording())
    n_walk = len(plant.log.walking_intervals(rec.t0 + rec.duration))
    print(f"{len(trace)} decisions, {n_walk} walking episodes")
    print(f"wrote {out / 'trace.txt'}, {out / 'plant_log.txt'}, {out / 'gyro.gbr'}")
    return {"trace": out / "trace.txt", "plant_log": out / "plant_log.txt"}


def cmd_evaluate(args) -> dict:
    cues = load_cues(_path(args, "cues", "session_cues"))
    timeline = None
    plant_log = None
    if args.timeline:
        timeline = np.loadtxt(args.timeline, dtype=np.int8, ndmin=1)
    else:
        plant_log = PlantLog.loads(Path(_path(args, "plant_log", "plant_log")).read_text())
    trace_path = _path(args, "trace", "trace", required=False)
    trace = loads_trace(Path(trace_path).read_text()) if trace_path else None
    max_lag = args.max_lag if args.max_lag is not None else 30.0
    rep = evaluate_session(cues, plant_log, trace, timeline, max_lag=max_lag)
    out = _outdir(args, ".")
    write_text(out / "report.json", rep.dumps())
    _print_report(rep)
    print(f"wrote {out / 'report.json'}")
    return {"report": out / "report.json"}


def cmd_montecarlo(args) -> dict:
    cues = load_cues(_path(args, "cues", "session_cues"))
    trace = loads_trace(Path(_path(args, "trace", "trace")).read_text())
    rep = SessionReport.loads(Path(_path(args, "report", "report")).read_text())
    cfg = _decoder_cfg(args)
    plant_cfg = _plant_cfg(args)
    mc_cfg = dict(args.manifest_obj.montecarlo) if args.manifest_obj else {}
    n = args.n if args.n is not None else int(mc_cfg.get("n", 10_000))
    if trace.raw is None:
        raise ConfigurationError("trace has no single-window posteriors to fit the null to")
    null = fit_null(trace.raw)
    mc = monte_carlo_p(cues, null, cfg, plant_cfg, rep.xcorr_max, trace.times, n=n,
                       seed=_seed(args, "montecarlo"), step=rep.step, max_lag=rep.max_lag)
    out = _outdir(args, ".")
    lo, counts = mc.histogram()
    write_text(out / "null_histogram.txt", "# gaitbci null max-correlation histogram v1\n# bin_lo count\n"
               + "".join(f"{b:.2f} {c}\n" for b, c in zip(lo, counts)))
    _write_json(out / "montecarlo.json", {
        "format": "gaitbci-montecarlo", "version": 1, "n": mc.n, "seed": mc.seed,
        "observed": mc.observed, "p_value": mc.p_value, "null_max": float(mc.null_max.max()),
        "null_model": null.to_dict()})
    rep = rep.with_monte_carlo(mc)
    write_text(out / "report.json", rep.dumps())
    print(f"null: alpha={null.alpha:.4f} beta={null.beta:.4f} mu={null.mu:.4f}")
    print(f"p = {mc.p_value:g} over {mc.n} trials; null max correlation {mc.null_max.max():.3f}")
    return {"montecarlo": out / "montecarlo.json"}


def _print_report(rep: SessionReport) -> None:
    print("cross-correlation (lag s) | omissions | false alarms (mean duration s)")
    print(rep.table_row())


def cmd_pipeline(args) -> dict:
    m = args.manifest_obj or Manifest()
    out = Path(args.out or m.out)
    out.mkdir(parents=True, exist_ok=True)
    base = args.seed

    def ns(**kw):
        d = dict(manifest_obj=m, seed=None, out=str(out), config=None, cues=None, recording=None,
                 model=None, decoder=None, plant=None, trace=None, report=None, plant_log=None,
                 timeline=None, max_lag=None, n=None, protocol="training", name="x.gbr",
                 stage_seed="train", verbose=args.verbose)
        d.update(kw)
        return argparse.Namespace(**d)

    def seed(stage):
        return m.seed(stage) + (base if base is not None else 0)

    _stage("synth", cmd_synth, ns(seed=seed("train"), name="training.gbr", protocol="training",
                                   stage_seed="train"))
    _stage("synth", cmd_synth, ns(seed=seed("calibration"), name="calibration.gbr", protocol="session",
                                   stage_seed="calibration"))
    _stage("synth", cmd_synth, ns(seed=seed("session"), name="session.gbr", protocol="session",
                                   stage_seed="session"))
    _stage("train", cmd_train, ns(recording=str(out / "training.gbr"), cues=str(out / "training.cues")))
    _stage("calibrate", cmd_calibrate, ns(model=str(out / "model.json"), recording=str(out / "calibration.gbr"),
                                           cues=str(out / "calibration.cues")))
    cal = str(out / "calibration.json")
    _stage("run", cmd_run, ns(model=str(out / "model.json"), recording=str(out / "session.gbr"), decoder=cal))
    _stage("evaluate", cmd_evaluate, ns(cues=str(out / "session.cues"), plant_log=str(out / "plant_log.txt"),
                                         trace=str(out / "trace.txt")))
    _stage("montecarlo", cmd_montecarlo, ns(cues=str(out / "session.cues"), trace=str(out / "trace.txt"),
                                             report=str(out / "report.json"), decoder=cal,
                                             seed=seed("montecarlo")))
    rep = SessionReport.loads((out / "report.json").read_text())
    print()
    _print_report(rep)
    print(f"p = {rep.p_value:g} (n = {rep.n_mc})")
    return {"report": out / "report.json"}


def _stage(name, fn, args):
    try:
        return fn(args)
    except (GaitBCIError, OSError, ValueError, TypeError, KeyError) as e:
        raise StageError(name, str(e)) from e


# -- argument parsing ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--manifest", help="JSON run manifest")
    common.add_argument("--seed", type=int, help="override the stage seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="gaitbci", description="BCI-controlled gait orthosis pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic EEG recording")
    s.add_argument("--config", help="SynthConfig JSON")
    s.add_argument("--cues", help="cue schedule file (default: 10 min of 30 s cues)")
    s.add_argument("--protocol", choices=["training", "session"], default="training",
                   help="built-in cue schedule when --cues is absent")
    s.add_argument("--name", default="recording.gbr", help="output file name (.gbr binary, else text)")
    s.add_argument("--stage", dest="stage_seed", choices=["train", "calibration", "session"], default="train",
                   help="which manifest seed and cue path to use")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", parents=[common], help="fit a prediction model")
    s.add_argument("--recording")
    s.add_argument("--cues")
    s.add_argument("--config", help="TrainConfig JSON")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("calibrate", parents=[common], help="suggest decoder thresholds")
    s.add_argument("--model")
    s.add_argument("--recording")
    s.add_argument("--cues")
    s.add_argument("--decoder", help="DecoderConfig JSON")
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("run", parents=[common], help="closed-loop session against the simulated orthosis")
    s.add_argument("--model")
    s.add_argument("--recording")
    s.add_argument("--decoder", help="DecoderConfig JSON or calibration.json")
    s.add_argument("--plant", help="PlantConfig JSON")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("evaluate", parents=[common], help="score a session")
    s.add_argument("--cues")
    s.add_argument("--plant-log", dest="plant_log")
    s.add_argument("--timeline", help="0/1 per line at the 0.25 s grid instead of a plant log")
    s.add_argument("--trace", help="decoder trace, for the diagnostic decoder correlation")
    s.add_argument("--max-lag", dest="max_lag", type=float)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("montecarlo", parents=[common], help="empirical p-value under the AR null")
    s.add_argument("--cues")
    s.add_argument("--trace")
    s.add_argument("--report")
    s.add_argument("--decoder", help="DecoderConfig JSON or calibration.json")
    s.add_argument("--plant", help="PlantConfig JSON")
    s.add_argument("--n", type=int)
    s.set_defaults(func=cmd_montecarlo)

    s = sub.add_parser("pipeline", parents=[common], help="run every stage from one manifest")
    s.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    stage = args.command
    try:
        args.manifest_obj = Manifest.load(args.manifest) if args.manifest else None
        if stage == "pipeline":
            cmd_pipeline(args)
        else:
            _stage(stage, args.func, args)
    except StageError as e:
        print(f"gaitbci {e.stage}: error: {e.__cause__}", file=sys.stderr)
        return 1
    except (GaitBCIError, OSError, ValueError) as e:
        print(f"gaitbci {stage}: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
