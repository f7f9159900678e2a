"""INI run configuration and the objects it describes.

Example::

    [system]
    n = 2
    dim = 1
    beta = 1.0
    terms =
        quadratic K=2,-1;-1,2

    [map]
    kind = select
    atoms = 0

Term lines are ``<kind> key=value ...`` with kinds ``quadratic`` (``K``
rows split by ``;``), ``bond`` (``i j k r0``), ``anchored`` (``i k r0``),
``lj`` (``i j epsilon sigma``), ``well`` (``i k center``) and ``angle``
(``i j k k_theta theta0``; here ``k`` is the third atom).
"""

import configparser

import numpy as np

from .aa_system import (
    AnchoredBond,
    ForceField,
    HarmonicAngle,
    HarmonicBond,
    HarmonicWell,
    LennardJones,
    QuadraticForm,
)
from .cg_map import LinearCGMap
from .cg_model import FeatureConfig, PairMLP, QuadraticBaseline
from .dynamics import SimConfig
from .errors import ConfigError
from .training import TrainConfig


class Config:
    def __init__(self, parser, source="<config>"):
        self.parser = parser
        self.source = source

    @classmethod
    def read(cls, path):
        p = configparser.ConfigParser(interpolation=None)
        p.optionxform = str
        try:
            with open(path) as fh:
                p.read_file(fh, source=path)
        except configparser.Error as exc:
            # parsing errors from configparser already name the line
            raise ConfigError(str(exc)) from exc
        return cls(p, path)

    @classmethod
    def from_string(cls, text, source="<string>"):
        p = configparser.ConfigParser(interpolation=None)
        p.optionxform = str
        try:
            p.read_string(text, source=source)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from exc
        return cls(p, source)

    def _raw(self, section, key, default):
        if self.parser.has_option(section, key):
            return self.parser.get(section, key)
        if default is _REQUIRED:
            raise ConfigError(f"{self.source}: missing required key '{key}' in [{section}]")
        return default

    def get(self, section, key, default=None, cast=str):
        raw = self._raw(section, key, default)
        if raw is default:
            return default
        try:
            return cast(raw)
        except ValueError as exc:
            raise ConfigError(f"{self.source}: [{section}] {key} = {raw!r}: {exc}") from exc

    def require(self, section, key, cast=str):
        return self.get(section, key, _REQUIRED, cast)


_REQUIRED = object()


def _vector(text):
    return np.array([float(x) for x in text.replace(",", " ").split()])


def _matrix(text):
    return np.array([[float(x) for x in row.split(",")] for row in text.split(";")])


def _ints(text):
    return [int(x) for x in text.replace(",", " ").split()]


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _term(line, n, dim):
    kind, *tokens = line.split()
    kv = {}
    for tok in tokens:
        if "=" not in tok:
            raise ConfigError(f"term {line!r}: expected key=value, got {tok!r}")
        k, v = tok.split("=", 1)
        kv[k] = v

    def need(key, cast=float):
        if key not in kv:
            raise ConfigError(f"term {line!r}: missing key '{key}'")
        return cast(kv[key])

    if kind == "quadratic":
        return QuadraticForm(need("K", _matrix))
    if kind == "bond":
        return HarmonicBond(need("i", int), need("j", int), need("k"), need("r0"))
    if kind == "anchored":
        anchor = tuple(_vector(kv["anchor"])) if "anchor" in kv else None
        return AnchoredBond(need("i", int), need("k"), need("r0"), anchor)
    if kind == "lj":
        return LennardJones(need("i", int), need("j", int), need("epsilon"), need("sigma"))
    if kind == "well":
        return HarmonicWell(need("i", int), need("k"), tuple(need("center", _vector)))
    if kind == "angle":
        return HarmonicAngle(need("i", int), need("j", int), need("k", int),
                             need("k_theta"), need("theta0"))
    raise ConfigError(f"unknown term kind {kind!r}")


def build_forcefield(cfg):
    n = cfg.require("system", "n", int)
    dim = cfg.require("system", "dim", int)
    lines = [ln.strip() for ln in cfg.require("system", "terms").splitlines() if ln.strip()]
    if not lines:
        raise ConfigError("[system] terms is empty")
    return ForceField(n, dim, [_term(ln, n, dim) for ln in lines])


def build_map(cfg, n, dim):
    kind = cfg.require("map", "kind")
    if kind == "select":
        return LinearCGMap.select(cfg.require("map", "atoms", _ints), n, dim)
    if kind == "com":
        groups = [_ints(g) for g in cfg.require("map", "groups").split(";")]
        masses = cfg.get("map", "masses", None, _vector)
        return LinearCGMap.center_of_mass(groups, n, dim, masses)
    if kind == "linear":
        return LinearCGMap(cfg.require("map", "matrix", _matrix), n, dim)
    raise ConfigError(f"unknown map kind {kind!r} (select, com, linear)")


def cg_shape(cfg):
    """Number of CG beads and their spatial dimension."""
    dim = cfg.require("system", "dim", int)
    kind = cfg.require("map", "kind")
    if kind == "select":
        return len(cfg.require("map", "atoms", _ints)), dim
    if kind == "com":
        return len(cfg.require("map", "groups").split(";")), dim
    rows = len(cfg.require("map", "matrix").split(";"))
    return rows, dim


def build_model(cfg, n_cg, dim):
    kind = cfg.get("model", "kind", "quadratic")
    d = n_cg * dim
    if kind == "quadratic":
        a0 = cfg.get("model", "init_scale", 1.0, float)
        return QuadraticBaseline(a0 * np.eye(d))
    if kind == "pair_mlp":
        hidden = tuple(cfg.get("model", "hidden", [16, 16], _ints))
        feats = FeatureConfig(
            cfg.get("model", "rbf_count", 12, int),
            cfg.get("model", "cutoff_low", 0.3, float),
            cfg.get("model", "cutoff_high", 1.2, float),
        )
        return PairMLP(n_cg, dim, hidden, feats, seed=cfg.get("model", "init_seed", 0, int))
    raise ConfigError(f"unknown model kind {kind!r} (quadratic, pair_mlp)")


def train_config(cfg, variant, seed=None):
    beta = cfg.get("system", "beta", 1.0, float)
    kwargs = dict(
        lr=cfg.get("train", "lr", 1e-4, float),
        batch_size=cfg.get("train", "batch_size", 200, int),
        epochs=cfg.get("train", "epochs", 10, int),
        weight_decay=cfg.get("train", "weight_decay", 0.01, float),
        max_steps=cfg.get("train", "max_steps", None, int),
        global_seed=cfg.get("train", "seed", 0, int) if seed is None else seed,
        beta=beta,
    )
    return TrainConfig.for_variant(variant, **kwargs)


def sim_config(cfg, seed=None, initial=None):
    return SimConfig(
        dt=cfg.get("simulate", "dt", 1e-3, float),
        friction=cfg.get("simulate", "friction", 1.0, float),
        beta=cfg.get("system", "beta", 1.0, float),
        steps=cfg.get("simulate", "steps", 10000, int),
        thinning=cfg.get("simulate", "thinning", 10, int),
        seed=cfg.get("simulate", "seed", 0, int) if seed is None else seed,
        initial=initial,
    )
