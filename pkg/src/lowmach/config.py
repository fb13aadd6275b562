"""Plain-text run configuration.

One `key = value` file drives a full experiment.  Keys use dotted section
prefixes (`geometry.n_r = 256`); `#` starts a comment; later assignments
override earlier ones.  Every key has a default, so an empty or missing
config section is valid, but unknown keys and out-of-range values are
rejected outright: a silently ignored typo is worse than a failed run.
"""

from dataclasses import dataclass

from .compressible import EOSCoefficients
from .geometry import ExteriorDomain
from .grid import Grid
from .norms import NormParams, ParameterError


class ConfigError(Exception):
    """Malformed, unknown, or out-of-range configuration input."""


def _float_list(text):
    try:
        return tuple(float(tok) for tok in text.split(",") if tok.strip())
    except ValueError as exc:
        raise ConfigError(f"bad float list {text!r}") from exc


def _typed(kind, text):
    try:
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"bad {kind.__name__} value {text!r}") from exc
    if kind is tuple:
        return _float_list(text)
    return text


# key -> (type, default); type str means free-form, validated separately
SCHEMA = {
    "seed": (int, 20240601),
    "mode": (str, "compressible"),
    "eps": (float, 0.1),
    "gamma": (float, 1.4),
    "cfl": (float, 0.4),
    "t_end": (float, 0.5),
    "output_every": (float, 0.05),
    "sponge_strength": (float, 5.0),
    "geometry.n_r": (int, 256),
    "geometry.n_theta": (int, 128),
    "geometry.r_outer": (float, 8.0),
    "geometry.sponge_width": (float, 2.0),
    "geometry.collar_width": (float, 0.25),
    "geometry.cos_coeffs": (tuple, ()),
    "geometry.sin_coeffs": (tuple, ()),
    "geometry.eps_moll": (float, 1e-3),
    "norms.tau0": (float, 0.5),
    "norms.decay_rate": (float, 1.25),
    "norms.kappa": (float, 0.5),
    "norms.kappa_bar": (float, 1.0),
    "norms.delta": (float, 0.25),
    "norms.n_max": (int, 8),
    "norms.i_max": (int, 4),
    "data.kind": (str, "well_prepared"),
    "data.amplitude": (float, 0.1),
    "data.entropy_amplitude": (float, 0.1),
    "data.speed": (float, 1.0),
    "sweep.eps_list": (tuple, (0.1, 0.05, 0.025, 0.0125)),
    "sweep.t_end": (float, 0.2),
    "sweep.output_every": (float, 0.05),
    "sweep.distance_n_max": (int, 3),
}

_MODES = ("compressible", "incompressible")
_DATA_KINDS = ("well_prepared", "pulse", "equilibrium", "potential_flow")


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration values, keyed exactly as in the file."""

    values: dict

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)


def parse_config_text(text):
    """Raw key -> string-value pairs from config text."""
    pairs = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', "
                              f"got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"line {lineno}: empty key or value")
        pairs[key] = value
    return pairs


def _validate(values):
    if values["mode"] not in _MODES:
        raise ConfigError(f"mode must be one of {_MODES}")
    if values["data.kind"] not in _DATA_KINDS:
        raise ConfigError(f"data.kind must be one of {_DATA_KINDS}")
    if not 0.0 < values["eps"] <= 1.0:
        raise ConfigError("eps must lie in (0, 1]")
    if values["gamma"] <= 1.0:
        raise ConfigError("gamma must exceed 1")
    if values["cfl"] <= 0.0 or values["cfl"] >= 10.0:
        raise ConfigError("cfl must lie in (0, 10)")
    for key in ("t_end", "output_every", "sweep.t_end",
                "sweep.output_every"):
        if values[key] <= 0.0:
            raise ConfigError(f"{key} must be positive")
    if values["geometry.n_r"] < 16 or values["geometry.n_theta"] < 8:
        raise ConfigError("grid must be at least 16 x 8")
    if values["geometry.n_theta"] % 2:
        raise ConfigError("geometry.n_theta must be even")
    if values["geometry.r_outer"] <= 1.0 + values["geometry.sponge_width"]:
        raise ConfigError("r_outer must exceed 1 + sponge_width")
    if values["geometry.collar_width"] <= 0.0:
        raise ConfigError("collar_width must be positive")
    if not 4 <= values["norms.n_max"] <= 8:
        raise ConfigError("norms.n_max must lie in [4, 8]")
    if not 0 <= values["norms.i_max"] <= 4:
        raise ConfigError("norms.i_max must lie in [0, 4]")
    eps_list = values["sweep.eps_list"]
    if not eps_list:
        raise ConfigError("sweep.eps_list must not be empty")
    if any(e <= 0.0 or e > 1.0 for e in eps_list):
        raise ConfigError("sweep.eps_list entries must lie in (0, 1]")
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ConfigError("sweep.eps_list must be strictly decreasing")


def config_from_pairs(pairs):
    """Merge defaults with string pairs, convert types, and validate."""
    values = {key: default for key, (_, default) in SCHEMA.items()}
    for key, text in pairs.items():
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _typed(SCHEMA[key][0], text)
    _validate(values)
    return RunConfig(values)


def default_config():
    return config_from_pairs({})


def load_config(path):
    """Read and validate a config file; missing files are config errors."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return config_from_pairs(parse_config_text(text))


# ---------------------------------------------------------------------------
# object factories
# ---------------------------------------------------------------------------

def make_grid(cfg):
    return Grid(n_r=cfg["geometry.n_r"], n_theta=cfg["geometry.n_theta"],
                r_outer=cfg["geometry.r_outer"],
                sponge_width=cfg["geometry.sponge_width"])


def make_domain(cfg):
    return ExteriorDomain(cos_coeffs=cfg["geometry.cos_coeffs"],
                          sin_coeffs=cfg["geometry.sin_coeffs"])


def make_eos(cfg):
    return EOSCoefficients(gamma=cfg["gamma"])


def make_norm_params(cfg):
    try:
        return NormParams(tau0=cfg["norms.tau0"],
                          decay_rate=cfg["norms.decay_rate"],
                          kappa=cfg["norms.kappa"],
                          kappa_bar=cfg["norms.kappa_bar"],
                          delta=cfg["norms.delta"],
                          n_max=cfg["norms.n_max"],
                          i_max=cfg["norms.i_max"])
    except ParameterError as exc:
        raise ConfigError(str(exc)) from exc
