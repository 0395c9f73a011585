"""JSON scenarios: validation, defaults and construction of the run objects.

A scenario is kept as a plain dict with every default filled in, so that
saving and reloading it gives back the same structure. The builder
methods turn it into sensors, an environment, objective parameters, a
descent config and a movie of blob frames.
"""
from __future__ import annotations

import copy
import json
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .controller import DensityModel, DescentConfig, Network
from .density import BlobFrame
from .geometry import Environment, Sensor
from .manifold import AxisPair
from .objective import ObjectiveParams

PRESETS = ("four_camera_static", "tracking_blob")


class ScenarioError(ValueError):
    """Invalid scenario; the message starts with the dotted field path."""


def schema():
    text = resources.files(__package__).joinpath("scenario.schema.json").read_text("utf-8")
    return json.loads(text)


def _resolve(node, root):
    while "$ref" in node:
        ref = node["$ref"]
        node = root
        for part in ref.lstrip("#/").split("/"):
            node = node[part]
    return node


def _fill_defaults(value, node, root):
    node = _resolve(node, root)
    if isinstance(value, dict) and "properties" in node:
        for key, sub in node["properties"].items():
            sub_r = _resolve(sub, root)
            if key not in value:
                for n in (sub, sub_r):
                    if "default" in n:
                        value[key] = copy.deepcopy(n["default"])
                        break
            if key in value:
                _fill_defaults(value[key], sub_r, root)
    elif isinstance(value, list) and "items" in node:
        for item in value:
            _fill_defaults(item, node["items"], root)


def _path(error):
    parts = [str(p) for p in error.absolute_path]
    if error.validator == "required":
        missing = error.message.split("'")[1]
        parts.append(missing)
    return ".".join(parts) or "<root>"


class Scenario:
    """Validated scenario with defaults filled in."""

    def __init__(self, data):
        root = schema()
        data = copy.deepcopy(data)
        errors = sorted(jsonschema.Draft202012Validator(root).iter_errors(data),
                        key=lambda e: list(map(str, e.absolute_path)))
        if errors:
            e = errors[0]
            raise ScenarioError("%s: %s" % (_path(e), e.message))
        _fill_defaults(data, root, root)
        self.data = data
        try:
            self.environment()
            self.sensors()
            self.params()
            self.config()
            self.model()
            self.movie()
        except ValueError as exc:
            raise ScenarioError(str(exc)) from exc

    def __eq__(self, other):
        return isinstance(other, Scenario) and self.data == other.data

    def to_dict(self):
        return copy.deepcopy(self.data)

    @property
    def seed(self):
        return self.data["seed"]

    def environment(self):
        e = self.data["environment"]
        try:
            return Environment(e["gamma"], np.asarray(e["mission"], dtype=float), e["phi_bar"])
        except ValueError as exc:
            raise ScenarioError("environment: %s" % exc) from exc

    def sensors(self):
        out = []
        for i, s in enumerate(self.data["sensors"]):
            axes = None
            if "axes" in s:
                a = s["axes"]
                axes = AxisPair(a["xi1"], a["xi2"], a["world1"], a["world2"])
            try:
                out.append(Sensor(i, s["position"], s["focal_length"], s["plane_size"][0],
                                  s["plane_size"][1], s["grid"][0], s["grid"][1],
                                  rotation=np.asarray(s["rotation"], dtype=float),
                                  weights=None if s["weights"] == "uniform" else "center",
                                  axes=axes))
            except ValueError as exc:
                raise ScenarioError("sensors.%d: %s" % (i, exc)) from exc
        gamma = self.data["environment"]["gamma"]
        for i, s in enumerate(out):
            if abs(gamma - s.position[2]) < 1e-12:
                raise ScenarioError("sensors.%d.position: sensor lies on the environment plane" % i)
        return out

    def params(self):
        o = self.data["objective"]
        return ObjectiveParams(np.diag(o["W_diag"]), stride=o["stride"])

    def config(self, max_iters=None):
        d = dict(self.data["descent"])
        if max_iters is not None:
            d["max_iters"] = max_iters
        try:
            return DescentConfig(**d)
        except ValueError as exc:
            raise ScenarioError("descent: %s" % exc) from exc

    def model(self):
        o, d = self.data["objective"], self.data["density"]
        psi_bar = o["psi_bar"]
        if psi_bar is not None and not psi_bar < self.data["environment"]["phi_bar"]:
            raise ScenarioError("objective.psi_bar: must be smaller than environment.phi_bar")
        return DensityModel(m=o["m"], psi_bar=psi_bar, noise=d["noise"], max_iter=d["max_iter"])

    def movie(self):
        d = self.data["density"]
        frames = []
        for f in self.data["movie"]["frames"]:
            b = f["blobs"]
            frames.append(BlobFrame(np.array([x["center"] for x in b], dtype=float).reshape(-1, 2),
                                    [x["radius"] for x in b], [x["importance"] for x in b],
                                    boolean=d["boolean"], threshold=d["threshold"]))
        return frames

    def network(self, seed=None):
        rng = np.random.default_rng(self.seed if seed is None else seed)
        return Network(self.sensors(), self.environment(), self.params(), self.model(), rng=rng)


def load_scenario(path):
    """Read and validate a scenario file, or a bundled preset by name."""
    if str(path) in PRESETS:
        text = resources.files(__package__).joinpath("presets", "%s.json" % path).read_text("utf-8")
    else:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ScenarioError("%s: cannot read scenario (%s)" % (path, exc.strerror)) from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError("%s: invalid JSON (%s)" % (path, exc)) from exc
    return Scenario(data)


def save_scenario(scenario, path):
    text = json.dumps(scenario.to_dict(), indent=2, sort_keys=True) + "\n"
    Path(path).write_text(text, encoding="utf-8", newline="\n")
