"""Flat ``key = value`` run configuration with typed keys.

A config file holds one ``key = value`` pair per line; ``#`` starts a
comment.  Every key has a fixed type and default (see :data:`SCHEMA`), and
unknown keys are rejected.  Values are resolved in the order defaults, file,
environment (``LRLACE_<KEY>``, key upper-cased) and command-line flags.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass

from .errors import ConfigError

ENV_PREFIX = "LRLACE_"


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_int(text: str):
    t = text.strip().lower()
    return None if t in ("", "none") else int(t)


def _opt_float(text: str):
    t = text.strip().lower()
    return None if t in ("", "none") else float(t)


def _seed(text: str) -> int:
    v = int(text.strip(), 0)
    if not 0 <= v < 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return v


def _tuples(text: str) -> tuple:
    """``a1,a2,b1,b2; a1,a2,b1,b2; ...`` (empty for none)."""
    out = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = [float(v) for v in chunk.split(",")]
        if len(parts) != 4:
            raise ValueError(f"exponent tuple needs four numbers, got {chunk!r}")
        out.append(tuple(parts))
    return tuple(out)


def _int_list(text: str) -> tuple:
    return tuple(int(v) for v in text.replace(",", " ").split())


#: key -> (parser, default text, description)
SCHEMA = {
    "d": (int, "4", "lattice dimension"),
    "alpha": (float, "2.0", "decay exponent of the step distribution"),
    "L": (float, "5.0", "spread-out parameter"),
    "variant": (str, "DirectPowerLaw", "DirectPowerLaw, CompoundZeta or NearestNeighbor"),
    "profile": (str, "uniform", "profile of the compound-zeta family"),
    "t_max": (_opt_int, "none", "compound-zeta truncation (none: automatic)"),
    "M": (int, "32", "kernel and Green-function box half-width"),
    "symmetric": (_bool, "true", "orthant storage for symmetric fields"),
    "p": (float, "1.0", "fugacity of the random-walk Green function"),
    "method": (str, "FourierInversion", "FourierInversion, NeumannSeries or SplitSeries"),
    "window": (float, "0.6", "trusted window as a fraction of M"),
    "tolerance": (float, "0.2", "tolerance of the asymptotic ratio"),
    "r_min": (_opt_float, "none", "inner radius of the asymptotic table (none: 2 L^2)"),
    "tuples": (_tuples, "6,0,2,0; 4,1,2,1; 4,0,2,0; 3,0,2,0; 2,1,2,1", "exponent tuples a1,a2,b1,b2"),
    "conv_d": (int, "4", "dimension for the convolution bounds"),
    "conv_L": (float, "2.0", "L for the convolution bounds"),
    "x_samples": (_int_list, "", "axis distances (empty: powers of sqrt 2 over one decade from 4L)"),
    "check_L": (_bool, "true", "rerun convolution bounds at 2L"),
    "loglog": (_bool, "true", "keep the loglog factor in the A1_eq_d_A2_eq_1 envelope"),
    "model": (str, "saw", "saw, percolation or ising"),
    "model_d": (int, "2", "dimension of the model torus"),
    "model_M": (int, "8", "half-width of the model torus"),
    "model_L": (float, "1.0", "L of the model kernel"),
    "model_p": (float, "0.5", "model fugacity"),
    "N": (int, "4", "maximal SAW length"),
    "samples": (int, "1000", "percolation Monte Carlo samples"),
    "seed": (_seed, "0", "master seed"),
    "beta": (float, "1.0", "Ising inverse temperature"),
    "ising_sites": (int, "9", "number of sites in the Ising volume"),
    "cache": (_bool, "true", "use the kernel cache"),
    "cache_dir": (str, "", "cache directory (empty: <out>/cache)"),
}


@dataclass(frozen=True)
class RunConfig:
    """Resolved configuration; ``values`` maps every schema key to a typed value."""

    values: dict
    texts: dict

    def __getitem__(self, key: str):
        return self.values[key]

    def canonical(self) -> str:
        return "".join(f"{k} = {self.texts[k]}\n" for k in sorted(self.texts))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def as_dict(self) -> dict:
        return {k: self.texts[k] for k in sorted(self.texts)}

    def with_overrides(self, **texts) -> "RunConfig":
        merged = dict(self.texts)
        merged.update({k: str(v) for k, v in texts.items()})
        return build_config(merged)


def _normalize(key: str, text: str) -> tuple:
    parser = SCHEMA[key][0]
    try:
        value = parser(text)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad value for {key!r}: {text!r} ({exc})") from None
    return value, text.strip()


def build_config(texts: dict) -> RunConfig:
    unknown = sorted(set(texts) - set(SCHEMA))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    values, canon = {}, {}
    for key, (_, default, _) in SCHEMA.items():
        values[key], canon[key] = _normalize(key, texts.get(key, default))
    return RunConfig(values, canon)


def parse_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    by_upper = {k.upper(): k for k in SCHEMA}
    out = {}
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        key = by_upper.get(name[len(ENV_PREFIX):])
        if key is None:
            raise ConfigError(f"unknown environment override {name}")
        out[key] = value
    return out


def load_config(path: str | None = None, environ=None, **overrides) -> RunConfig:
    texts = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                texts.update(parse_text(fh.read(), path))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    texts.update(env_overrides(environ))
    texts.update({k: str(v) for k, v in overrides.items() if v is not None})
    return build_config(texts)


def describe() -> str:
    """Key reference for ``--help`` and the README."""
    return "\n".join(f"  {k:<12} {SCHEMA[k][1]!r:<16} {SCHEMA[k][2]}" for k in SCHEMA)
