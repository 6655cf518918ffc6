"""Operator command line: generate / train / evaluate / gradcheck / inspect.

All commands take a JSON run config (schema-validated, unknown keys
rejected) and write artifacts atomically under the config's output_dir
(overridable through the STFNET_OUT environment variable). Exit codes:
0 success, 2 config error, 4 failed verification, 3 data error.
"""

import argparse
import glob
import io
import json
import os
import sys

import jsonschema
import numpy as np

from . import autograd as ag
from . import data as data_mod
from . import model as model_mod
from . import transform
from .errors import ConfigError, ParseError, STFNetError
from .numeric import ComplexTensor, read_tensor, write_tensor, write_text_atomic

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_CHECK = 4

_BLOCK_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["window_set"],
    "properties": {
        "window_set": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
        "op": {"enum": ["filter", "conv"]},
        "out_features": {"type": "integer", "minimum": 1},
        "interleave": {"type": "boolean"},
        "pool": {"type": ["string", "null"]},
        "interp": {"enum": ["linear", "spectral"]},
        "tau_base": {"type": ["integer", "null"]},
        "kernel_size": {"type": "integer", "minimum": 1},
    },
}

RUN_CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["model", "data", "output_dir"],
    "properties": {
        "output_dir": {"type": "string"},
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind", "classes"],
            "properties": {
                "kind": {"enum": ["stfnet", "mlp"]},
                "classes": {"type": "integer", "minimum": 2},
                "hidden": {"type": "integer", "minimum": 1},
                "sensors": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["features", "blocks"],
                        "properties": {
                            "features": {"type": "integer", "minimum": 1},
                            "blocks": {"type": "array", "items": _BLOCK_SCHEMA},
                        },
                    },
                },
                "merged": {"type": "array", "items": _BLOCK_SCHEMA},
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "batch": {"type": "integer", "minimum": 1},
                "epochs": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer"},
                "stop_at_accuracy": {"type": ["number", "null"]},
            },
        },
        "data": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "path": {"type": "string"},
                "normalize": {"type": "boolean"},
                "generator": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind", "n_per_class", "classes"],
                    "properties": {
                        "kind": {"enum": ["toneband", "transient", "mixedres"]},
                        "n_per_class": {"type": "integer", "minimum": 1},
                        "classes": {"type": "integer", "minimum": 2},
                        "t_len": {"type": "integer", "minimum": 2},
                        "features": {"type": "integer", "minimum": 1},
                        "fs": {"type": "number", "exclusiveMinimum": 0},
                        "snr_db": {"type": ["number", "null"]},
                        "seed": {"type": "integer"},
                        "grid_tau": {"type": "integer", "minimum": 2},
                        "burst_len": {"type": "integer", "minimum": 2},
                        "n_groups": {"type": "integer", "minimum": 1},
                    },
                },
            },
        },
        "eval": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": ["holdout", "leave-one-group-out"]},
                "test_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            },
        },
        "gradcheck": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "batch": {"type": "integer", "minimum": 1, "maximum": 4},
                "step": {"type": "number", "exclusiveMinimum": 0},
                "tolerance": {"type": "number", "exclusiveMinimum": 0},
            },
        },
    },
}


def load_config(path: str, seed_override=None) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    try:
        jsonschema.validate(cfg, RUN_CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"{path}: {exc.message} (at {'/'.join(map(str, exc.path))})") from exc
    if seed_override is not None:
        cfg.setdefault("train", {})["seed"] = seed_override
    out_env = os.environ.get("STFNET_OUT")
    if out_env:
        cfg["output_dir"] = out_env
    return cfg


def _model_spec(cfg: dict) -> model_mod.ModelSpec:
    return model_mod.ModelSpec.from_json(cfg["model"])


def _load_dataset(cfg: dict) -> data_mod.Dataset:
    section = cfg.get("data", {})
    if "generator" in section:
        return data_mod.generate_from_config(section["generator"])
    if "path" in section:
        return data_mod.Dataset.load(section["path"])
    raise ConfigError("data section needs either 'path' or 'generator'")


def save_checkpoint(directory: str, spec: model_mod.ModelSpec, store: ag.ParamStore) -> None:
    os.makedirs(directory, exist_ok=True)
    manifest = {"model": spec.to_json(), "params": {}}
    for idx, (name, p) in enumerate(store.items()):
        fname = f"p{idx:04d}.bin"
        manifest["params"][name] = {
            "file": fname,
            "kind": p.kind,
            "constraint": p.constraint,
        }
        if p.kind == "complex":
            write_tensor(os.path.join(directory, fname), p.tensor())
        else:
            write_tensor(os.path.join(directory, fname), p.value)
    write_text_atomic(
        os.path.join(directory, "manifest.json"), json.dumps(manifest, sort_keys=True, indent=1)
    )


def load_checkpoint(directory: str):
    try:
        with open(os.path.join(directory, "manifest.json")) as fh:
            manifest = json.load(fh)
    except FileNotFoundError as exc:
        raise ParseError(f"{directory}: missing manifest.json") from exc
    spec = model_mod.ModelSpec.from_json(manifest["model"])
    store = ag.ParamStore()
    for name, entry in manifest["params"].items():
        t = read_tensor(os.path.join(directory, entry["file"]))
        value = t.as_array() if isinstance(t, ComplexTensor) else t
        store.add(name, value, entry["kind"], entry.get("constraint", "none"))
    return spec, store


def _metrics_csv(rows) -> str:
    out = io.StringIO()
    out.write("epoch,split,loss,accuracy,macro_f1\n")
    for row in rows:
        out.write(
            f"{row['epoch']},{row['split']},{row['loss']:.10g},"
            f"{row['accuracy']:.10g},{row['macro_f1']:.10g}\n"
        )
    return out.getvalue()


def _emit(payload: dict, as_json: bool) -> None:
    if as_json:
        print(json.dumps(payload, sort_keys=True))


def cmd_generate(cfg: dict, args) -> int:
    section = cfg.get("data", {})
    if "generator" not in section:
        raise ConfigError("generate needs a data.generator section")
    ds = data_mod.generate_from_config(section["generator"])
    out_dir = os.path.join(cfg["output_dir"], "dataset")
    ds.save(out_dir)
    print(f"wrote {ds.n} samples ({ds.t_len} x {ds.features}, {ds.classes} classes) to {out_dir}",
          file=sys.stderr)
    _emit({"dataset": out_dir, "samples": ds.n, "classes": ds.classes}, args.json)
    return EXIT_OK


def cmd_train(cfg: dict, args) -> int:
    spec = _model_spec(cfg)
    ds = _load_dataset(cfg)
    tcfg = model_mod.TrainConfig.from_json(cfg.get("train", {}))
    eval_cfg = cfg.get("eval", {"mode": "holdout"})
    normalize = cfg.get("data", {}).get("normalize", False)
    out_dir = cfg["output_dir"]
    if eval_cfg.get("mode", "holdout") == "holdout":
        result, metrics = model_mod.train_holdout(
            spec, ds, tcfg, eval_cfg.get("test_fraction", 0.2), normalize
        )
        rows = result.rows
    else:
        result, metrics, rows = model_mod.train_leave_one_group_out(
            spec, ds, tcfg, normalize, jobs=args.jobs
        )
    save_checkpoint(os.path.join(out_dir, "checkpoint"), spec, result.store)
    metrics["config"] = {"train": cfg.get("train", {}), "eval": eval_cfg}
    write_text_atomic(
        os.path.join(out_dir, "metrics.json"), json.dumps(metrics, sort_keys=True, indent=1)
    )
    write_text_atomic(os.path.join(out_dir, "metrics.csv"), _metrics_csv(rows))
    print(f"training done; artifacts in {out_dir}", file=sys.stderr)
    _emit({"output_dir": out_dir, "metrics": metrics}, args.json)
    return EXIT_OK


def cmd_evaluate(cfg: dict, args) -> int:
    if not args.checkpoint:
        raise ConfigError("evaluate needs --checkpoint")
    spec, store = load_checkpoint(args.checkpoint)
    ds = _load_dataset(cfg)
    eval_cfg = cfg.get("eval", {"mode": "holdout"})
    normalize = cfg.get("data", {}).get("normalize", False)
    tcfg = model_mod.TrainConfig.from_json(cfg.get("train", {}))
    if eval_cfg.get("mode", "holdout") == "holdout":
        _, te_idx = data_mod.split_holdout(ds, eval_cfg.get("test_fraction", 0.2), tcfg.seed)
        x, y = ds.x[te_idx], ds.y[te_idx]
        if normalize:
            x, _ = data_mod.normalize_arrays(x)
        metrics = {"mode": "holdout", **model_mod._eval_split(spec, store, x, y)}
    else:
        folds = []
        for g in sorted(int(v) for v in np.unique(ds.groups)):
            mask = ds.groups == g
            x, y = ds.x[mask], ds.y[mask]
            if normalize:
                x, _ = data_mod.normalize_arrays(x)
            fold = model_mod._eval_split(spec, store, x, y)
            folds.append({"group": g, **fold})
        acc_mean, acc_ci = model_mod.mean_ci95([f["accuracy"] for f in folds])
        f1_mean, f1_ci = model_mod.mean_ci95([f["macro_f1"] for f in folds])
        metrics = {
            "mode": "leave-one-group-out",
            "folds": folds,
            "accuracy": {"mean": acc_mean, "ci95": acc_ci},
            "macro_f1": {"mean": f1_mean, "ci95": f1_ci},
        }
    out_path = os.path.join(cfg["output_dir"], "metrics.json")
    write_text_atomic(out_path, json.dumps(metrics, sort_keys=True, indent=1))
    print(f"evaluation written to {out_path}", file=sys.stderr)
    _emit(metrics, args.json)
    return EXIT_OK


def cmd_gradcheck(cfg: dict, args) -> int:
    spec = _model_spec(cfg)
    ds = _load_dataset(cfg)
    gc_cfg = cfg.get("gradcheck", {})
    batch = min(gc_cfg.get("batch", 2), 4)
    step = gc_cfg.get("step", 1e-5)
    tol = gc_cfg.get("tolerance", 1e-4)
    tcfg = model_mod.TrainConfig.from_json(cfg.get("train", {}))
    store = model_mod.init_params(spec, ds.t_len, seed=tcfg.seed)
    # Nonzero merge weights so the attention path is exercised away from
    # its softmax-uniform point.
    rng = np.random.default_rng(tcfg.seed + 17)
    for name, p in store.items():
        if ".wm" in name:
            p.value = p.value + rng.normal(0, 0.3, p.value.shape) + 1j * rng.normal(
                0, 0.3, p.value.shape
            )
    x = ds.x[:batch]
    y = ds.y[:batch]

    def build_loss(tape, leaves):
        logits = model_mod.model_forward_tape(tape, tape.leaf(x), spec, leaves)
        return ag.cross_entropy(tape, logits, y)

    report = ag.gradcheck(build_loss, store, step=step, tol=tol)
    out_path = os.path.join(cfg["output_dir"], "gradcheck.json")
    write_text_atomic(out_path, json.dumps(report, sort_keys=True, indent=1))
    worst = max(v["max_rel_err"] for v in report["params"].values())
    status = "passed" if report["passed"] else "FAILED"
    print(f"gradcheck {status}: worst relative error {worst:.3g} (report: {out_path})",
          file=sys.stderr)
    _emit(report, args.json)
    return EXIT_OK if report["passed"] else EXIT_CHECK


def cmd_inspect(cfg: dict, args) -> int:
    out_dir = os.path.join(cfg["output_dir"], "inspect")
    os.makedirs(out_dir, exist_ok=True)
    payload = {"output_dir": out_dir}
    if args.checkpoint:
        spec, store = load_checkpoint(args.checkpoint)
        summary = {}
        for name, p in store.items():
            arr = p.value
            norm = float(np.sqrt(np.sum(np.abs(arr) ** 2)))
            summary[name] = {"kind": p.kind, "shape": list(arr.shape), "l2": norm}
        write_text_atomic(
            os.path.join(out_dir, "params.json"), json.dumps(summary, sort_keys=True, indent=1)
        )
        payload["params"] = os.path.join(out_dir, "params.json")
        window_set = _first_window_set(spec)
    else:
        spec = _model_spec(cfg)
        window_set = _first_window_set(spec)
    ds = _load_dataset(cfg)
    i = args.sample
    if not 0 <= i < ds.n:
        raise ConfigError(f"--sample {i} out of range (dataset has {ds.n})")
    if window_set is None:
        raise ConfigError("inspect needs a spectral model to define window widths")
    holo = transform.multi_stft(ds.x[i], window_set, ds.fs)
    reps_info = []
    for rep in holo.reps:
        stem = os.path.join(out_dir, f"rep_tau{rep.tau}")
        write_tensor(stem + ".bin", rep.data)
        sidecar = {"tau": rep.tau, "fs": rep.fs, "M": rep.chunks, "K": rep.bins}
        write_text_atomic(stem + ".json", json.dumps(sidecar, sort_keys=True))
        lines = ["chunk,bin,frequency_hz,feature,re,im,magnitude"]
        z = rep.data.as_array()
        for m in range(rep.chunks):
            for k in range(rep.bins):
                for d in range(rep.features):
                    v = z[m, k, d]
                    lines.append(
                        f"{m},{k},{rep.bin_frequency(k):.10g},{d},"
                        f"{v.real:.10g},{v.imag:.10g},{abs(v):.10g}"
                    )
        write_text_atomic(stem + ".csv", "\n".join(lines) + "\n")
        reps_info.append(sidecar)
    payload["sample"] = i
    payload["label"] = int(ds.y[i])
    payload["reps"] = reps_info
    print(f"hologram of sample {i} written to {out_dir}", file=sys.stderr)
    _emit(payload, args.json)
    return EXIT_OK


def _first_window_set(spec: model_mod.ModelSpec):
    if spec.kind != "stfnet" or not spec.sensors:
        return None
    return spec.sensors[0].blocks[0].window_set


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "gradcheck": cmd_gradcheck,
    "inspect": cmd_inspect,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stfnet",
        description="Multi-resolution spectral network experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="run config JSON")
        p.add_argument("--json", action="store_true", help="machine-readable stdout")
        p.add_argument("--jobs", type=int, default=1, help="fold-level parallelism")
        p.add_argument("--seed", type=int, default=None, help="override train.seed")
        if name in ("evaluate", "inspect"):
            p.add_argument("--checkpoint", default=None, help="checkpoint directory")
        if name == "inspect":
            p.add_argument("--sample", type=int, default=0, help="sample index to dump")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed_override=args.seed)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParseError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except STFNetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
