"""Run configuration: a JSON file validated against ``RUN_CONFIG_SCHEMA``.

Defaults follow the main-benchmark hyperparameters (2 layers, hidden 64,
Adam at lr 1e-3 for 500 epochs, bin width 0.1, 3 runs, no scheduler).
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import jsonschema

from .bench import PreparedDataset, ProtocolConfig, config_hash, prepare
from .graph import Graph, generate_graph, load_edge_list, load_features
from .models import MODEL_KINDS, TrainConfig

OUTPUT_ENV = "SPECBENCH_OUTPUT_DIR"

_GENERATOR = {
    "type": "object",
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["cycle", "path", "star", "sbm"]},
        "params": {"type": "object"},
        "seed": {"type": "integer"},
    },
    "additionalProperties": False,
}

RUN_CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "specbench run configuration",
    "type": "object",
    "required": ["datasets"],
    "properties": {
        "datasets": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["name"],
                "properties": {
                    "name": {"type": "string", "minLength": 1},
                    "edges": {"type": "string"},
                    "features": {"type": "string"},
                    "generator": _GENERATOR,
                },
                "oneOf": [{"required": ["edges"]}, {"required": ["generator"]}],
                "additionalProperties": False,
            },
        },
        "models": {
            "type": "array",
            "items": {"enum": list(MODEL_KINDS)},
            "minItems": 1,
            "uniqueItems": True,
        },
        "protocol": {
            "type": "object",
            "properties": {
                "bin_width": {"type": "number", "exclusiveMinimum": 0, "maximum": 2},
                "num_classes": {"type": "integer", "minimum": 2},
                "mode": {"enum": ["maxabs_rescale", "paper_literal"]},
                "fractions": {
                    "type": "array",
                    "items": {"type": "number", "exclusiveMinimum": 0},
                    "minItems": 3,
                    "maxItems": 3,
                },
                "runs": {"type": "integer", "minimum": 1},
                "base_seed": {"type": "integer", "minimum": 0},
            },
            "additionalProperties": False,
        },
        "train": {
            "type": "object",
            "properties": {
                "epochs": {"type": "integer", "minimum": 0},
                "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                "layers": {"type": "integer", "minimum": 1},
                "hidden": {"type": "integer", "minimum": 1},
                "cheb_order": {"type": "integer", "minimum": 1},
                "scheduler": {"enum": ["none", "cosine_restarts"]},
                "t0": {"type": "integer", "minimum": 1},
                "init": {"enum": ["default_uniform", "he"]},
                "dropout": {"const": 0},
            },
            "additionalProperties": False,
        },
        "output_dir": {"type": "string"},
        "workers": {"type": "integer", "minimum": 1},
    },
    "additionalProperties": False,
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    datasets: tuple
    models: tuple = ("gcn",)
    protocol: ProtocolConfig = ProtocolConfig()
    output_dir: str = "specbench-out"
    workers: int = 1
    raw: dict = field(default_factory=dict, compare=False)
    base_dir: str = "."

    def digest(self) -> str:
        return config_hash({"datasets": list(self.datasets), "models": list(self.models),
                            "protocol": self.protocol.to_json()})

    def resolved_output_dir(self) -> Path:
        return Path(os.environ.get(OUTPUT_ENV) or self.output_dir)

    def load_datasets(self, bin_width: Optional[float] = None) -> list[PreparedDataset]:
        width = self.protocol.bin_width if bin_width is None else bin_width
        return [prepare(spec["name"], load_graph(spec, self.base_dir), width) for spec in self.datasets]


def load_graph(spec: dict, base_dir=".") -> Graph:
    """Build the graph a dataset entry describes; identity features when none ship."""
    base = Path(base_dir)
    if "generator" in spec:
        gen = spec["generator"]
        g = generate_graph(gen["kind"], gen.get("params", {}), gen.get("seed", 0))
        remap = None
    else:
        g, remap = load_edge_list(base / spec["edges"])
    if spec.get("features"):
        g = load_features(base / spec["features"], g, remap)
    else:
        g = g.with_identity_features()
    return Graph(g.n, g.edges, g.features, name=spec["name"])


def parse_config(data: dict, base_dir=".", overrides: Optional[dict] = None) -> RunConfig:
    data = json.loads(json.dumps(data))
    for section, values in (overrides or {}).items():
        for k, v in values.items():
            if v is None:
                continue
            if section is None:
                data[k] = v
            else:
                data.setdefault(section, {})[k] = v
    try:
        jsonschema.validate(data, RUN_CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from None
    names = [d["name"] for d in data["datasets"]]
    if len(set(names)) != len(names):
        raise ConfigError("dataset names must be unique")
    p = data.get("protocol", {})
    t = dict(data.get("train", {}))
    fractions = tuple(p.get("fractions", (0.6, 0.2, 0.2)))
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError("protocol.fractions must sum to 1")
    train_cfg = TrainConfig(**{k: t[k] for k in ("epochs", "learning_rate", "scheduler", "t0", "init") if k in t})
    protocol = ProtocolConfig(
        bin_width=float(p.get("bin_width", 0.1)),
        num_classes=int(p.get("num_classes", 5)),
        mode=p.get("mode", "maxabs_rescale"),
        fractions=fractions,
        runs=int(p.get("runs", 3)),
        base_seed=int(p.get("base_seed", 0)),
        layers=int(t.get("layers", 2)),
        hidden=int(t.get("hidden", 64)),
        cheb_order=int(t.get("cheb_order", 2)),
        train=train_cfg,
    )
    return RunConfig(
        datasets=tuple(data["datasets"]),
        models=tuple(data.get("models", ["gcn"])),
        protocol=protocol,
        output_dir=data.get("output_dir", "specbench-out"),
        workers=int(data.get("workers", 1)),
        raw=data,
        base_dir=str(base_dir),
    )


def load_config(path, overrides: Optional[dict] = None) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return parse_config(data, base_dir=path.parent, overrides=overrides)
