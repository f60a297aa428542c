"""Line-oriented run configuration: ``[section]`` headers and ``key = value`` lines.

Keys may also be written fully qualified (``time.dt = 1e-3``) outside any
section. ``#`` starts a comment. Unknown keys, malformed values and missing
required keys raise :class:`ConfigError` naming the line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .constants import C_ATOMIC
from .dynamics import (
    SC_MODES, SCENARIOS, VARIANTS, LaserParams, NucleiParams, ScenarioParams, SimulationConfig,
)
from .errors import ConfigError

REQUIRED = object()


def _float(text):
    value = float(text)
    if not math.isfinite(value):
        raise ValueError("value must be finite")
    return value


def _int(text):
    value = float(text)
    if value != int(value):
        raise ValueError("expected an integer")
    return int(value)


def _bool(text):
    if text == "true":
        return True
    if text == "false":
        return False
    raise ValueError("expected true or false")


def _triple(conv):
    def parse(text):
        parts = text.replace(",", " ").split()
        if len(parts) == 1:
            return (conv(parts[0]),) * 3
        if len(parts) != 3:
            raise ValueError("expected one or three numbers")
        return tuple(conv(p) for p in parts)
    return parse


def _vec3(text):
    parts = text.replace(",", " ").split()
    if len(parts) != 3:
        raise ValueError("expected three numbers")
    return tuple(_float(p) for p in parts)


def _optional(conv):
    def parse(text):
        return None if text == "none" else conv(text)
    return parse


def _vec3_list(text):
    if text.strip() in ("", "none"):
        return ()
    return tuple(_vec3(chunk) for chunk in text.split(";"))


def _float_list(text):
    if text.strip() in ("", "none"):
        return ()
    return tuple(_float(p) for p in text.replace(",", " ").split())


def _choice(options):
    def parse(text):
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text
    return parse


def _text(text):
    if not text:
        raise ValueError("empty value")
    return text


@dataclass(frozen=True)
class KeySpec:
    parse: object
    default: object
    fmt: object = None


def _fmt_float(v):
    return repr(float(v))


def _fmt_seq(v):
    return " ".join(_fmt_float(x) if isinstance(x, float) else str(x) for x in v)


def _fmt_opt_vec(v):
    return "none" if v is None else _fmt_seq(v)


def _fmt_vec_list(v):
    return "none" if not v else "; ".join(_fmt_seq(x) for x in v)


def _fmt_float_list(v):
    return "none" if not v else _fmt_seq(v)


def _fmt_bool(v):
    return "true" if v else "false"


SCHEMA = {
    "grid.n": KeySpec(_triple(_int), REQUIRED, _fmt_seq),
    "grid.L": KeySpec(_triple(_float), REQUIRED, _fmt_seq),
    "constants.c": KeySpec(_float, C_ATOMIC, _fmt_float),
    "model.variant": KeySpec(_choice(VARIANTS), "minimal", str),
    "model.interactions": KeySpec(_bool, True, _fmt_bool),
    "model.neglect_a2_second_order": KeySpec(_bool, False, _fmt_bool),
    "model.include_darwin": KeySpec(_bool, True, _fmt_bool),
    "model.include_soc": KeySpec(_bool, True, _fmt_bool),
    "model.include_zeeman": KeySpec(_bool, True, _fmt_bool),
    "time.dt": KeySpec(_float, 1e-3, _fmt_float),
    "time.steps": KeySpec(_int, 100, str),
    "selfconsistency.mode": KeySpec(_choice(SC_MODES), "lagged", str),
    "scenario.name": KeySpec(_choice(SCENARIOS), REQUIRED, str),
    "scenario.sigma": KeySpec(_float, 1.0, _fmt_float),
    "scenario.k0": KeySpec(_vec3, (0.0, 0.0, 0.0), _fmt_seq),
    "scenario.spin": KeySpec(_vec3, (0.0, 0.0, 1.0), _fmt_seq),
    "scenario.center": KeySpec(_optional(_vec3), None, _fmt_opt_vec),
    "scenario.k": KeySpec(_vec3, (1.0, 0.0, 0.0), _fmt_seq),
    "scenario.direct_b": KeySpec(_optional(_vec3), None, _fmt_opt_vec),
    "scenario.kick": KeySpec(_vec3, (0.0, 0.0, 0.0), _fmt_seq),
    "scenario.separation": KeySpec(_float, 3.0, _fmt_float),
    "scenario.Z": KeySpec(_float, 1.0, _fmt_float),
    "scenario.relax_steps": KeySpec(_int, 800, str),
    "scenario.relax_dtau": KeySpec(_float, 0.05, _fmt_float),
    "laser.amplitude": KeySpec(_float, 0.0, _fmt_float),
    "laser.omega": KeySpec(_float, 0.057, _fmt_float),
    "laser.duration": KeySpec(_float, 0.0, _fmt_float),
    "laser.polarization": KeySpec(_vec3, (1.0, 0.0, 0.0), _fmt_seq),
    "nuclei.positions": KeySpec(_vec3_list, (), _fmt_vec_list),
    "nuclei.charges": KeySpec(_float_list, (), _fmt_float_list),
    "nuclei.softening": KeySpec(_float, 0.3, _fmt_float),
    "output.dir": KeySpec(_text, "output", str),
    "output.cadence": KeySpec(_int, 10, str),
    "output.snapshots": KeySpec(_bool, False, _fmt_bool),
}


def parse_values(text: str):
    """Parse text into ``(values, lines)``: resolved values per full key and source lines."""
    values, lines = {}, {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]") or len(line) < 3:
                raise ConfigError(f"malformed section header {raw.strip()!r}", lineno)
            section = line[1:-1].strip()
            if not any(key.startswith(section + ".") for key in SCHEMA):
                raise ConfigError(f"unknown section [{section}]", lineno)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError("missing key before '='", lineno)
        full = key if section is None else f"{section}.{key}"
        if full not in SCHEMA:
            raise ConfigError(f"unknown key {full!r}", lineno)
        if full in values:
            raise ConfigError(f"duplicate key {full!r} (first set on line {lines[full]})", lineno)
        try:
            values[full] = SCHEMA[full].parse(value)
        except ValueError as exc:
            raise ConfigError(f"malformed value for {full!r}: {value!r} ({exc})", lineno) from None
        lines[full] = lineno
    for key, spec in SCHEMA.items():
        if key not in values:
            if spec.default is REQUIRED:
                last = len(text.splitlines())
                raise ConfigError(f"missing required key {key!r}", last)
            values[key] = spec.default
    return values, lines


def config_from_values(values, lines=None):
    lines = lines or {}
    v = values
    try:
        scenario = ScenarioParams(
            name=v["scenario.name"], sigma=v["scenario.sigma"], k0=v["scenario.k0"],
            spin=v["scenario.spin"], center=v["scenario.center"], k=v["scenario.k"],
            direct_b=v["scenario.direct_b"], kick=v["scenario.kick"],
            separation=v["scenario.separation"], Z=v["scenario.Z"],
            relax_steps=v["scenario.relax_steps"], relax_dtau=v["scenario.relax_dtau"],
        )
        laser = LaserParams(
            amplitude=v["laser.amplitude"], omega=v["laser.omega"],
            duration=v["laser.duration"], polarization=v["laser.polarization"],
        )
        nuclei = NucleiParams(
            positions=v["nuclei.positions"], charges=v["nuclei.charges"],
            softening=v["nuclei.softening"],
        )
        cfg = SimulationConfig(
            grid_n=v["grid.n"], grid_L=v["grid.L"], c=v["constants.c"],
            variant=v["model.variant"], interactions=v["model.interactions"],
            neglect_a2_second_order=v["model.neglect_a2_second_order"],
            include_darwin=v["model.include_darwin"], include_soc=v["model.include_soc"],
            include_zeeman=v["model.include_zeeman"], dt=v["time.dt"], steps=v["time.steps"],
            selfconsistency=v["selfconsistency.mode"], scenario=scenario, laser=laser,
            nuclei=nuclei, output_dir=v["output.dir"], output_cadence=v["output.cadence"],
            output_snapshots=v["output.snapshots"],
        )
        cfg.grid
        cfg.constants
    except ValueError as exc:
        where = _guess_line(str(exc), lines)
        raise ConfigError(str(exc), where) from None
    return cfg


def _guess_line(message, lines):
    hints = {
        "dt": "time.dt", "steps": "time.steps", "cadence": "output.cadence",
        "charge per nuclear": "nuclei.charges", "grid points": "grid.n", "box lengths": "grid.L",
        "c must": "constants.c",
    }
    for hint, key in hints.items():
        if hint in message and key in lines:
            return lines[key]
    return None


def parse_config(text: str):
    """Return ``(SimulationConfig, resolved values)``."""
    values, lines = parse_values(text)
    return config_from_values(values, lines), values


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def dump_config(values) -> str:
    """Canonical text of a resolved configuration; parses back to the same values."""
    out = ["# resolved configuration"]
    section = None
    for key, spec in SCHEMA.items():
        head, name = key.split(".", 1)
        if head != section:
            out.append("")
            out.append(f"[{head}]")
            section = head
        out.append(f"{name} = {spec.fmt(values[key])}")
    return "\n".join(out) + "\n"
