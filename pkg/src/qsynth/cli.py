"""Command-line experiment runner.

Every command reads a flat ``key = value`` configuration (file and/or
``--set`` overrides), derives all randomness from one root seed, and writes
its artifacts together with ``run_config.txt`` so the run can be repeated
with ``qsynth <command> --config <dir>/run_config.txt``.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import baselines, downstream, metrics, preprocess, qgan_train, toy
from .errors import ConfigError, DataError, FitFailure, InvalidArgumentError, QSynthError, TrainingError
from .seeding import child_seed

COMMANDS = ("preprocess", "train-qsynth", "train-gan", "smote", "audit", "downstream", "scaling", "toy")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_TRAINING = 0, 2, 3, 4

_TRAIN_FIELDS = {f.name: f.default for f in fields(qgan_train.TrainConfig)}

# key -> default; the default's type decides how string values are parsed
GENERAL = {
    "seed": 0,
    "input": "",
    "out": "qsynth-out",
    "k_features": 10,
    "out_dim": 4,
    "scale_eps": 1e-8,
    "train_frac": 0.7,
    "n_samples": 2000,
    "smote_k": 5,
    "qnn_qubits": 6,
    "qnn_layers": 3,
    "qnn_head_hidden": 8,
    "qnn_lr": 1e-3,
    "qnn_epochs": 30,
    "qnn_batch_size": 64,
    "classifiers": "qnn,ann,logreg",
    "augmenters": "smote,gan,qsynth",
    "ratios": "0,0.1,0.25,0.5,1.0",
    "synthetic_only": True,
    "modes": "balanced,imbalanced",
    "real": "",
    "synthetic": "",
    "generator": "",
    "qsynth_checkpoint": "",
    "gan_checkpoint": "",
    "toy_n": 2000,
    "toy_modes": 8,
    "toy_radius": 0.5,
    "toy_spread": 0.15,
}
DEFAULTS = {**GENERAL, **{k: v for k, v in _TRAIN_FIELDS.items() if k != "seed"}}

COMMAND_DEFAULTS = {"toy": {"epochs": 60, "n_layers": 4}}

# not part of the provenance record: where results go does not change them
_LOCATION_KEYS = ("out",)


# ---------------------------------------------------------------------------
# configuration


def _parse_value(key, text):
    default = DEFAULTS[key]
    text = text.strip()
    try:
        if key == "latent_dim":
            return None if text.lower() in ("", "none") else int(text)
        if key == "disc_hidden":
            return tuple(int(v) for v in text.replace("(", "").replace(")", "").split(",") if v.strip())
        if isinstance(default, bool):
            if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return text.lower() in ("true", "1", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"invalid value for {key}: {text!r}") from exc


def _format_value(value):
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def parse_assignments(lines, source):
    out = {}
    for number, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{number}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


def resolve_config(command, config_file=None, overrides=()):
    """Defaults, then command defaults, then the config file, then ``--set`` overrides."""
    values = dict(DEFAULTS)
    values.update(COMMAND_DEFAULTS.get(command, {}))
    raw = {}
    if config_file:
        path = Path(config_file)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        raw.update(parse_assignments(path.read_text().splitlines(), str(path)))
    raw.update(parse_assignments(overrides, "--set"))
    file_command = raw.pop("command", None)
    if file_command is not None and file_command != command:
        raise ConfigError(f"config was written for {file_command!r}, not {command!r}")
    unknown = sorted(set(raw) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown configuration key(s): {', '.join(unknown)}")
    for key, text in raw.items():
        values[key] = _parse_value(key, text)
    return values


def train_config(cfg) -> qgan_train.TrainConfig:
    try:
        return qgan_train.TrainConfig(**{k: cfg[k] for k in _TRAIN_FIELDS if k != "seed"},
                                      seed=child_seed(cfg["seed"], "train"))
    except InvalidArgumentError as exc:
        raise ConfigError(str(exc)) from exc


def qnn_config(cfg) -> downstream.QnnConfig:
    try:
        return downstream.QnnConfig(cfg["qnn_qubits"], cfg["qnn_layers"], cfg["qnn_head_hidden"], cfg["qnn_lr"],
                                    cfg["qnn_epochs"], cfg["qnn_batch_size"])
    except InvalidArgumentError as exc:
        raise ConfigError(str(exc)) from exc


def _list(cfg, key):
    return [v.strip() for v in cfg[key].split(",") if v.strip()]


def provenance(command, cfg):
    return {"command": command, "seed": cfg["seed"],
            "config": {k: _format_value(v) for k, v in sorted(cfg.items()) if k not in _LOCATION_KEYS}}


def write_run_config(out: Path, command, cfg):
    lines = [f"command = {command}"] + [f"{k} = {_format_value(v)}" for k, v in sorted(cfg.items())
                                        if k not in _LOCATION_KEYS]
    (out / "run_config.txt").write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# artifact helpers


def write_json(path: Path, doc):
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def write_matrix(path: Path, rows, prefix="u"):
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    header = ",".join(f"{prefix}{j}" for j in range(rows.shape[1]))
    np.savetxt(path, rows, delimiter=",", header=header, comments="", fmt="%.17g")


def read_matrix(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"sample file not found: {path}")
    try:
        with open(path) as fh:
            first = fh.readline()
        skip = 0 if _is_numeric_row(first) else 1
        data = np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2)
    except ValueError as exc:
        raise DataError(f"{path}: malformed sample file ({exc})") from exc
    if not np.all(np.isfinite(data)):
        raise DataError(f"{path}: non-finite values")
    return data


def _is_numeric_row(line):
    try:
        [float(v) for v in line.strip().split(",")]
        return True
    except ValueError:
        return False


def _report_doc(report, command, cfg, **extra):
    return {**report.to_dict(), "provenance": provenance(command, cfg), **extra}


# ---------------------------------------------------------------------------
# shared stages


class Prepared:
    """ULB table split once, preprocessing fit on the training rows only."""

    def __init__(self, cfg):
        if not cfg["input"]:
            raise ConfigError("this command needs input=<ULB CSV path>")
        table = preprocess.load_ulb_csv(cfg["input"])
        self.train_idx, self.test_idx = downstream.split_indices(table.labels, cfg["seed"], cfg["train_frac"])
        train_table = preprocess.LabeledTable(table.features[self.train_idx], table.labels[self.train_idx],
                                              table.feature_names)
        self.model, self.minority = preprocess.fit(train_table, cfg["k_features"], cfg["out_dim"],
                                                   cfg["scale_eps"])
        self.bounded = preprocess.transform(self.model, table.features)
        # training minority rows keep their exact (unclipped) fitted values
        train_pos = self.train_idx[table.labels[self.train_idx] == 1]
        self.bounded[train_pos] = self.minority
        self.labels = table.labels

    def split(self) -> downstream.DownstreamSplit:
        tr, te = self.train_idx, self.test_idx
        return downstream.DownstreamSplit(self.bounded[tr], self.labels[tr], self.bounded[te], self.labels[te])


def _train_generator(kind, data, cfg, out):
    tc = train_config(cfg)
    trainer = qgan_train.train if kind == "qsynth" else baselines.classical_gan_train
    result = trainer(data, tc)
    qgan_train.save_checkpoint(result, out / f"{kind}_checkpoint.json")
    qgan_train.write_history_csv(result.history, out / f"{kind}_history.csv")
    return result.generator


def _load_or_train(kind, data, cfg, out):
    path = cfg[f"{kind}_checkpoint"]
    if path:
        return _load_generator(path)
    return _train_generator(kind, data, cfg, out)


def _load_generator(path):
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    try:
        return qgan_train.load_checkpoint(path).generator
    except (json.JSONDecodeError, KeyError, InvalidArgumentError) as exc:
        raise DataError(f"{path}: unreadable checkpoint ({exc})") from exc


def _samples(generator, cfg, name, n=None):
    return qgan_train.generate_samples(generator, cfg["n_samples"] if n is None else n,
                                       child_seed(cfg["seed"], f"sample/{name}"))


def _smote_pool(minority, cfg, n):
    sc = baselines.SmoteConfig(n, cfg["smote_k"], child_seed(cfg["seed"], "smote"))
    return baselines.smote_generate(minority, sc).samples


def _audit(real, synth, cfg, command, out, name="fidelity.json"):
    report = metrics.fidelity_report(real, synth, seed=child_seed(cfg["seed"], "eval"))
    write_json(out / name, _report_doc(report, command, cfg))
    return report


# ---------------------------------------------------------------------------
# commands


def cmd_preprocess(cfg, out):
    prep = Prepared(cfg)
    write_json(out / "preprocess_model.json", {**prep.model.to_dict(), "provenance": provenance("preprocess", cfg)})
    write_matrix(out / "minority_bounded.csv", prep.minority)
    write_json(out / "split.json", {"train": prep.train_idx.tolist(), "test": prep.test_idx.tolist(),
                                    "provenance": provenance("preprocess", cfg)})


def _cmd_train(kind, command):
    def run(cfg, out):
        prep = Prepared(cfg)
        gen = _train_generator(kind, prep.minority, cfg, out)
        synth = _samples(gen, cfg, kind)
        write_matrix(out / f"{kind}_samples.csv", synth)
        _audit(prep.minority, synth, cfg, command, out)
    return run


def cmd_smote(cfg, out):
    prep = Prepared(cfg)
    synth = _smote_pool(prep.minority, cfg, cfg["n_samples"])
    write_matrix(out / "smote_samples.csv", synth)
    _audit(prep.minority, synth, cfg, "smote", out)


def cmd_audit(cfg, out):
    if not cfg["real"]:
        raise ConfigError("audit needs real=<sample CSV>")
    real = read_matrix(cfg["real"])
    if cfg["synthetic"]:
        synth = read_matrix(cfg["synthetic"])
    elif cfg["generator"]:
        synth = _samples(_load_generator(cfg["generator"]), cfg, "audit")
    else:
        raise ConfigError("audit needs synthetic=<sample CSV> or generator=<checkpoint>")
    if real.shape[1] != synth.shape[1]:
        raise DataError(f"real has {real.shape[1]} columns, synthetic has {synth.shape[1]}")
    _audit(real, synth, cfg, "audit", out)


def _augmenter_pools(prep, cfg, out, names):
    n1 = len(prep.minority)
    pools = {}
    for name in names:
        if name == "smote":
            pools[name] = _smote_pool(prep.minority, cfg, n1)
        elif name in ("gan", "qsynth"):
            gen = _load_or_train(name, prep.minority, cfg, out)
            pools[name] = _samples(gen, cfg, name, n1)
        else:
            raise ConfigError(f"unknown augmenter {name!r}")
    return pools


def cmd_downstream(cfg, out):
    qc = qnn_config(cfg)
    classifiers = _list(cfg, "classifiers")
    unknown = sorted(set(classifiers) - set(downstream.CLASSIFIERS))
    if unknown:
        raise ConfigError(f"unknown classifier(s): {', '.join(unknown)}")
    prep = Prepared(cfg)
    pools = _augmenter_pools(prep, cfg, out, _list(cfg, "augmenters"))
    rows = downstream.downstream_grid(prep.split(), pools, classifiers, child_seed(cfg["seed"], "downstream"), qc)
    downstream.write_rows_csv(rows, out / "downstream.csv")
    downstream.write_rows_json(rows, out / "downstream.json", provenance("downstream", cfg))


def cmd_scaling(cfg, out):
    try:
        ratios = tuple(float(v) for v in _list(cfg, "ratios"))
        plan = downstream.ScalingPlan(ratios, cfg["synthetic_only"], tuple(_list(cfg, "modes")), "qnn",
                                      child_seed(cfg["seed"], "downstream"), qnn_config(cfg))
    except (ValueError, InvalidArgumentError) as exc:
        raise ConfigError(f"invalid scaling plan: {exc}") from exc
    prep = Prepared(cfg)
    n1 = len(prep.minority)
    gen = _load_or_train("qsynth", prep.minority, cfg, out)
    need = int(np.ceil(max(ratios + (1.0,)) * n1))
    rows = downstream.scaling_experiment(prep.split(), _samples(gen, cfg, "qsynth", need), plan)
    downstream.write_rows_csv(rows, out / "scaling.csv")
    downstream.write_rows_json(rows, out / "scaling.json", provenance("scaling", cfg))


def cmd_toy(cfg, out):
    data = toy.ring_mixture(cfg["toy_n"], child_seed(cfg["seed"], "toy/data"), cfg["toy_modes"],
                            cfg["toy_radius"], cfg["toy_spread"])
    tc = train_config(cfg)
    result = qgan_train.train(data, tc)
    qgan_train.save_checkpoint(result, out / "qsynth_checkpoint.json")
    qgan_train.write_history_csv(result.history, out / "qsynth_history.csv")
    synth = _samples(result.generator, cfg, "qsynth", cfg["toy_n"])
    write_matrix(out / "toy_real.csv", data)
    write_matrix(out / "qsynth_samples.csv", synth)
    hist = result.history
    summary = {"initial_loss_g": hist[0].loss_g if hist else None,
               "final_loss_g": hist[-1].loss_g if hist else None}
    report = metrics.fidelity_report(data, synth, seed=child_seed(cfg["seed"], "eval"))
    write_json(out / "fidelity.json", _report_doc(report, "toy", cfg, training=summary))


HANDLERS = {
    "preprocess": cmd_preprocess,
    "train-qsynth": _cmd_train("qsynth", "train-qsynth"),
    "train-gan": _cmd_train("gan", "train-gan"),
    "smote": cmd_smote,
    "audit": cmd_audit,
    "downstream": cmd_downstream,
    "scaling": cmd_scaling,
    "toy": cmd_toy,
}


# ---------------------------------------------------------------------------
# entry point


def _error_kind(exc):
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG, "config-error"
    if isinstance(exc, FitFailure):
        return EXIT_DATA, "fit-failure"
    if isinstance(exc, (DataError, InvalidArgumentError)):
        return EXIT_DATA, "data-error"
    if isinstance(exc, TrainingError):
        return EXIT_TRAINING, "training-error"
    return EXIT_DATA, "error"


def build_parser():
    parser = argparse.ArgumentParser(prog="qsynth", description="Hybrid quantum-classical fraud augmentation.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="flat key = value configuration file")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration key (repeatable)")
    parser.add_argument("--seed", type=int, help="shorthand for --set seed=N")
    parser.add_argument("--input", help="shorthand for --set input=PATH")
    parser.add_argument("--out", help="shorthand for --set out=DIR")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = list(args.overrides)
    for key in ("seed", "input", "out"):
        if getattr(args, key) is not None:
            overrides.append(f"{key}={getattr(args, key)}")
    try:
        cfg = resolve_config(args.command, args.config, overrides)
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        write_run_config(out, args.command, cfg)
        HANDLERS[args.command](cfg, out)
    except QSynthError as exc:
        code, kind = _error_kind(exc)
        message = " ".join(str(exc).split())
        print(json.dumps({"error": kind, "code": code, "message": message}), file=sys.stderr)
        return code
    print(json.dumps({"status": "ok", "command": args.command, "out": str(out)}))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
