"""Experiment configuration: JSON document, schema check, preset defaults."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from .errors import ValidationError
from .expfam import Background, ExpFamily
from .fields import Poly
from .oracle import Grid1D, GridDensity
from .sde import SdeModel

PRESETS = {
    "ou-gaussian": "OU process (f=-x, a=2) on the Gaussian family c=(x, x^2); exact closure",
    "heat-galerkin": "heat equation on W=(x, x^2-1) over a standard Gaussian background",
    "quartic-residual": "double well (f=x-x^3, a=2) on c=(x, x^2); residual stays positive",
    "eigen-mle": "OU on Hermite statistics He1..He4 from a bimodal start, checked against the grid solver",
    "synthesize-sde": "Monte-Carlo check of the drift whose law follows the projected double-well flow",
    "custom": "everything taken from the config file",
}

_COEF = {"type": "array", "items": {"type": "number"}, "minItems": 1}
_POS = {"type": "number", "exclusiveMinimum": 0}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["preset"],
    "properties": {
        "preset": {"enum": list(PRESETS)},
        "family": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "statistics": {
                    "oneOf": [
                        {"type": "string", "pattern": r"^(hermite|monomial):[1-9][0-9]*$"},
                        {"type": "array", "items": _COEF, "minItems": 1},
                    ]
                },
                "background": {"type": "string", "pattern": r"^(lebesgue|gaussian|generalized:[0-9]+)$"},
            },
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"drift": _COEF, "a": _COEF},
        },
        "initial": {
            "type": "object",
            "additionalProperties": False,
            "maxProperties": 1,
            "properties": {
                "theta": _COEF,
                "eta": _COEF,
                "mixture": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["weights", "means", "variances"],
                    "properties": {"weights": _COEF, "means": _COEF, "variances": _COEF},
                },
            },
        },
        "time": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "t0": {"type": "number"},
                "t1": {"type": "number"},
                "h0": _POS,
                "rtol": _POS,
                "atol": _POS,
                "points": {"type": "integer", "minimum": 2},
            },
        },
        "oracle": {
            "type": ["object", "null"],
            "additionalProperties": False,
            "required": ["lo", "hi", "m", "dt"],
            "properties": {
                "lo": {"type": "number"},
                "hi": {"type": "number"},
                "m": {"type": "integer", "minimum": 5},
                "dt": _POS,
            },
        },
        "simulation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "paths": {"type": "integer", "minimum": 1},
                "dt": _POS,
                "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
                "horizons": {"type": "array", "items": _POS, "minItems": 1},
                "grid": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["lo", "hi", "m"],
                    "properties": {"lo": {"type": "number"}, "hi": {"type": "number"}, "m": {"type": "integer", "minimum": 5}},
                },
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dir": {"type": "string", "minLength": 1}, "plot": {"type": "boolean"}},
        },
    },
}

_COMMON = {
    "time": {"t0": 0.0, "t1": 5.0, "h0": 1e-2, "rtol": 1e-8, "atol": 1e-9, "points": 51},
    "oracle": None,
    "output": {"dir": "fpe-out", "plot": False},
}

_DEFAULTS = {
    "ou-gaussian": {
        "family": {"statistics": "monomial:2", "background": "lebesgue"},
        "model": {"drift": [0.0, -1.0], "a": [2.0]},
        "initial": {"theta": [1.0, -1.0]},
    },
    "heat-galerkin": {
        "family": {"statistics": [[0.0, 1.0], [-1.0, 0.0, 1.0]], "background": "gaussian"},
        "model": {"drift": [0.0], "a": [2.0]},
        "initial": {"theta": [0.0, 0.0]},
    },
    "quartic-residual": {
        "family": {"statistics": "monomial:2", "background": "lebesgue"},
        "model": {"drift": [0.0, 1.0, 0.0, -1.0], "a": [2.0]},
        "initial": {"theta": [0.0, -0.5]},
        "time": {"t1": 2.0, "points": 21},
    },
    "eigen-mle": {
        "family": {"statistics": "hermite:4", "background": "gaussian"},
        "model": {"drift": [0.0, -1.0], "a": [2.0]},
        "initial": {"mixture": {"weights": [0.5, 0.5], "means": [-1.0, 1.0], "variances": [0.09, 0.09]}},
        "time": {"t1": 2.0, "points": 21},
        "oracle": {"lo": -10.0, "hi": 10.0, "m": 2001, "dt": 1e-4},
    },
    "synthesize-sde": {
        "family": {"statistics": "monomial:2", "background": "lebesgue"},
        "model": {"drift": [0.0, 1.0, 0.0, -1.0], "a": [2.0]},
        "initial": {"theta": [0.0, -0.5]},
        "time": {"t1": 1.0, "points": 101},
        "simulation": {
            "paths": 100_000,
            "dt": 1e-3,
            "seed": 0,
            "horizons": [0.5, 1.0],
            "grid": {"lo": -10.0, "hi": 10.0, "m": 2001},
        },
    },
    "custom": {},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _path(err: jsonschema.ValidationError) -> str:
    return ".".join(str(p) for p in err.absolute_path) or "<root>"


@dataclass
class Experiment:
    """A validated configuration with its numerical objects built."""

    raw: dict
    preset: str
    fam: ExpFamily
    model: SdeModel
    theta0: np.ndarray | None
    p0: GridDensity | None
    mixture: dict | None

    @property
    def time(self) -> dict:
        return self.raw["time"]

    @property
    def times(self) -> np.ndarray:
        t = self.time
        return np.linspace(t["t0"], t["t1"], t["points"])

    @property
    def oracle(self) -> dict | None:
        return self.raw.get("oracle")

    @property
    def simulation(self) -> dict | None:
        return self.raw.get("simulation")

    @property
    def output(self) -> dict:
        return self.raw["output"]


def load(path: str | Path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc.strerror or exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config is not valid JSON: {exc}") from None
    return doc


def resolve(doc) -> dict:
    """Schema-check ``doc`` and fill in the preset defaults."""
    if not isinstance(doc, dict):
        raise ValidationError("config must be a JSON object")
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise ValidationError(f"{_path(e)}: {e.message}")
    preset = doc["preset"]
    merged = _merge(_merge(_COMMON, _DEFAULTS[preset]), doc)
    if preset == "custom":
        for key in ("family", "model", "initial"):
            if not merged.get(key):
                raise ValidationError(f"{key}: required for the custom preset")
    for key in ("statistics", "background"):
        if key not in merged["family"]:
            raise ValidationError(f"family.{key}: missing")
    for key in ("drift", "a"):
        if key not in merged["model"]:
            raise ValidationError(f"model.{key}: missing")
    return merged


def _background(spec: str) -> Background:
    if spec == "lebesgue":
        return Background.lebesgue()
    if spec == "gaussian":
        return Background.gaussian()
    m = int(spec.split(":")[1])
    if m < 4 or m % 2:
        raise ValidationError("family.background: generalized:m needs an even m >= 4")
    return Background.generalized(m)


def _family(spec: dict) -> ExpFamily:
    bg = _background(spec["background"])
    stats = spec["statistics"]
    if isinstance(stats, str):
        kind, k = stats.split(":")
        k = int(k)
        return ExpFamily.monomial(k, bg) if kind == "monomial" else ExpFamily.hermite(k, bg)
    polys = [Poly(c) for c in stats]
    for i, p in enumerate(polys):
        if p.degree < 1:
            raise ValidationError(f"family.statistics.{i}: a statistic must be non-constant")
    return ExpFamily(polys, bg)


def build(cfg: dict) -> Experiment:
    """Cross-field checks and construction of the family, model and start."""
    t = cfg["time"]
    if not t["t1"] > t["t0"]:
        raise ValidationError(f"time.t1: must be greater than time.t0 (got t0={t['t0']!r}, t1={t['t1']!r})")

    fam = _family(cfg["family"])
    model = SdeModel(Poly(cfg["model"]["drift"]), Poly(cfg["model"]["a"]), name=cfg["preset"])
    a = model.a
    if a.degree >= 0 and (a.degree % 2 == 1 or a.leading < 0):
        raise ValidationError("model.a: squared diffusion must be nonnegative on the real line")
    grid_lo, grid_hi = -10.0, 10.0
    if cfg.get("oracle"):
        o = cfg["oracle"]
        if not o["hi"] > o["lo"]:
            raise ValidationError("oracle.hi: must be greater than oracle.lo")
        grid_lo, grid_hi = o["lo"], o["hi"]
    try:
        model.check_diffusion(grid_lo, grid_hi)
    except ValidationError as exc:
        raise ValidationError(f"model.a: {exc}") from None

    sim = cfg.get("simulation")
    if sim is not None:
        if cfg["preset"] != "synthesize-sde":
            raise ValidationError("simulation: only used by the synthesize-sde preset")
        g = sim["grid"]
        if not g["hi"] > g["lo"]:
            raise ValidationError("simulation.grid.hi: must be greater than simulation.grid.lo")
        for h in sim["horizons"]:
            if not t["t0"] < h <= t["t1"]:
                raise ValidationError(f"simulation.horizons: {h!r} lies outside (time.t0, time.t1]")

    init = cfg["initial"]
    theta0 = p0 = mixture = None
    if "theta" in init:
        theta0 = np.asarray(init["theta"], dtype=float)
        if theta0.size != fam.n:
            raise ValidationError(f"initial.theta: expected {fam.n} values, got {theta0.size}")
        _check_feasible(fam, theta0)
    elif "eta" in init:
        eta = np.asarray(init["eta"], dtype=float)
        if eta.size != fam.n:
            raise ValidationError(f"initial.eta: expected {fam.n} values, got {eta.size}")
        try:
            theta0 = fam.natural_from_mean(eta)
        except Exception as exc:  # any failure means eta is outside the moment range
            raise ValidationError(f"initial.eta: not attainable in the family ({type(exc).__name__}: {exc})") from None
    elif "mixture" in init:
        mixture = init["mixture"]
        w, mu, var = (mixture[k] for k in ("weights", "means", "variances"))
        if not len(w) == len(mu) == len(var):
            raise ValidationError("initial.mixture: weights, means and variances must have equal length")
        if min(w) < 0 or sum(w) <= 0 or min(var) <= 0:
            raise ValidationError("initial.mixture: weights must be nonnegative and variances positive")
        if not cfg.get("oracle"):
            raise ValidationError("initial.mixture: needs an oracle grid")
        o = cfg["oracle"]
        p0 = GridDensity.mixture(Grid1D(o["lo"], o["hi"], o["m"]), w, mu, var)
    else:
        raise ValidationError("initial: give one of theta, eta or mixture")
    return Experiment(cfg, cfg["preset"], fam, model, theta0, p0, mixture)


def _check_feasible(fam: ExpFamily, theta) -> None:
    ell = fam.exponent(theta)
    if isinstance(ell, Poly) and fam.background.kind == "lebesgue":
        if ell.degree < 2 or ell.degree % 2 or ell.leading >= 0:
            raise ValidationError(
                "initial.theta: the top-degree statistic needs even degree and a negative coefficient "
                "(or use a generalized background)"
            )
    if not fam.is_feasible(theta):
        raise ValidationError("initial.theta: not a feasible natural parameter")


def validate_file(path) -> Experiment:
    return build(resolve(load(path)))
