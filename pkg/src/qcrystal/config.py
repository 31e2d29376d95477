"""Sectioned key-value model configuration files.

A config is INI text read with :mod:`configparser`. Recognized sections
and keys (all values are plain numbers or comma-separated lists)::

    [model]          d, nu, mass, rigidity, beta
    [potential]      coefficients (b_1, b_2, ... of x^2, x^4, ...), field
    [coupling]       kind, J, rate, exponent, table
    [decomposition]  b, delta                        (optional)
    [box]            boundary, shape, L, P           (optional)
    [mc]             sweeps, burnin, chains, proposal_width, update_mix,
                     cluster_moves, target_acceptance, blocks, trace_stride
    [spectrum]       n_points, n_keep, x_max, method, tau_points
    [pressure]       h_max, h_points
    [leeyang]        orders

``coupling.kind`` is one of ``nearest_neighbor``, ``finite_range``,
``exponential_decay`` and ``polynomial_decay``. A finite-range table is
written ``offset=value`` pairs separated by ``;`` with offsets as
comma-separated integers, e.g. ``table = 1,0=0.5; -1,0=0.5``.

``[box] boundary`` is ``zero`` (a cube of the given ``shape``) or
``periodic`` (the torus ``(-L, L]^d``).
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import InputError, ModelError
from .lattice import Box
from .model import DynamicalMatrix, ModelSpec, Potential
from .criteria import DecompositionSpec
from .pimc import McParams

__all__ = ["RunConfig", "load_config", "parse_config", "apply_overrides", "config_digest"]

_KNOWN = {
    "model": {"d", "nu", "mass", "rigidity", "beta"},
    "potential": {"coefficients", "field"},
    "coupling": {"kind", "j", "rate", "exponent", "table"},
    "decomposition": {"b", "delta"},
    "box": {"boundary", "shape", "l", "p"},
    "mc": {"sweeps", "burnin", "chains", "proposal_width", "update_mix", "cluster_moves",
           "target_acceptance", "blocks", "trace_stride"},
    "spectrum": {"n_points", "n_keep", "x_max", "method", "tau_points"},
    "pressure": {"h_max", "h_points"},
    "leeyang": {"orders"},
}
_REQUIRED = ("model", "potential")


def _parser() -> configparser.ConfigParser:
    return configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";;"))


def parse_text(text: str) -> configparser.ConfigParser:
    cp = _parser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise InputError(f"malformed config: {exc}") from None
    for sec in cp.sections():
        if sec not in _KNOWN:
            raise InputError(f"unknown config section [{sec}]")
        for key in cp[sec]:
            if key not in _KNOWN[sec]:
                raise InputError(f"unknown key {key!r} in section [{sec}]")
    for sec in _REQUIRED:
        if not cp.has_section(sec):
            raise InputError(f"config is missing section [{sec}]")
    return cp


def apply_overrides(cp: configparser.ConfigParser, overrides: Iterable[str]) -> None:
    """Apply ``section.key=value`` strings in order."""
    for item in overrides:
        lhs, sep, value = item.partition("=")
        sec, dot, key = lhs.strip().partition(".")
        key = key.strip().lower()
        if not sep or not dot or not key:
            raise InputError(f"override {item!r} is not of the form section.key=value")
        if sec not in _KNOWN or key not in _KNOWN[sec]:
            raise InputError(f"unknown override target {lhs.strip()!r}")
        if not cp.has_section(sec):
            cp.add_section(sec)
        cp[sec][key] = value.strip()


def canonical_text(cp: configparser.ConfigParser) -> str:
    """Deterministic rendering: sections and keys sorted."""
    out = io.StringIO()
    for sec in sorted(cp.sections()):
        out.write(f"[{sec}]\n")
        for key in sorted(cp[sec]):
            out.write(f"{key} = {cp[sec][key]}\n")
        out.write("\n")
    return out.getvalue()


def config_digest(cp: configparser.ConfigParser) -> str:
    return hashlib.sha256(canonical_text(cp).encode()).hexdigest()


def _get(cp, sec, key, conv, default=None, required=False):
    if not cp.has_option(sec, key):
        if required:
            raise InputError(f"config is missing {sec}.{key}")
        return default
    raw = cp[sec][key].strip()
    try:
        return conv(raw)
    except (TypeError, ValueError):
        raise InputError(f"cannot parse {sec}.{key} = {raw!r}") from None


def _int(s: str) -> int:
    v = float(s)
    if v != int(v):
        raise ValueError(s)
    return int(v)


def _floats(s: str) -> tuple:
    return tuple(float(v) for v in s.replace(" ", "").split(",") if v)


def _ints(s: str) -> tuple:
    return tuple(_int(v) for v in s.replace(" ", "").split(",") if v)


def _table(s: str) -> dict:
    table = {}
    for entry in s.split(";"):
        if not entry.strip():
            continue
        off, sep, val = entry.partition("=")
        if not sep:
            raise ValueError(entry)
        table[_ints(off)] = float(val)
    if not table:
        raise ValueError(s)
    return table


def _coupling(cp) -> DynamicalMatrix:
    if not cp.has_section("coupling"):
        return DynamicalMatrix.zero()
    kind = _get(cp, "coupling", "kind", str, "nearest_neighbor")
    if kind == "nearest_neighbor":
        return DynamicalMatrix.nearest_neighbor(_get(cp, "coupling", "j", float, required=True))
    if kind == "finite_range":
        return DynamicalMatrix.finite_range(_get(cp, "coupling", "table", _table, required=True))
    if kind == "exponential_decay":
        return DynamicalMatrix.exponential_decay(_get(cp, "coupling", "j", float, required=True),
                                                 _get(cp, "coupling", "rate", float, required=True))
    if kind == "polynomial_decay":
        return DynamicalMatrix.polynomial_decay(_get(cp, "coupling", "j", float, required=True),
                                                _get(cp, "coupling", "exponent", float, required=True))
    raise InputError(f"unknown coupling kind {kind!r}")


@dataclass(frozen=True)
class RunConfig:
    """Parsed configuration plus the digest of its canonical text."""

    spec: ModelSpec
    decomposition: DecompositionSpec | None
    box: Box | None
    P: int | None
    mc: McParams
    spectrum: dict
    pressure: dict
    orders: tuple
    digest: str
    text: str

    def require_box(self) -> tuple:
        if self.box is None or self.P is None:
            raise InputError("this subcommand needs a [box] section with P")
        return self.box, self.P


def parse_config(cp: configparser.ConfigParser, seed: int = 0) -> RunConfig:
    """Build model objects from a parsed config. All failures raise InputError."""
    try:
        spec = ModelSpec(
            d=_get(cp, "model", "d", _int, required=True),
            nu=_get(cp, "model", "nu", _int, 1),
            mass=_get(cp, "model", "mass", float, 1.0),
            rigidity=_get(cp, "model", "rigidity", float, 1.0),
            beta=_get(cp, "model", "beta", float, required=True),
            potential=Potential(_get(cp, "potential", "coefficients", _floats, ()),
                                _get(cp, "potential", "field", float, 0.0)),
            couplings=_coupling(cp),
        )
        dec = None
        if cp.has_section("decomposition"):
            dec = DecompositionSpec(_get(cp, "decomposition", "b", float, required=True),
                                    _get(cp, "decomposition", "delta", float, 0.0))
        box = P = None
        if cp.has_section("box"):
            boundary = _get(cp, "box", "boundary", str, "zero")
            P = _get(cp, "box", "p", _int, required=True)
            if P < 1:
                raise InputError("box.P must be >= 1")
            if boundary == "periodic":
                box = Box.torus(_get(cp, "box", "l", _int, required=True), spec.d)
            elif boundary == "zero":
                shape = _get(cp, "box", "shape", _ints, required=True)
                if len(shape) != spec.d:
                    raise InputError(f"box.shape has {len(shape)} entries, model has d={spec.d}")
                box = Box.cube(shape)
            else:
                raise InputError(f"box.boundary must be 'zero' or 'periodic', got {boundary!r}")
        mc = McParams(
            n_sweeps=_get(cp, "mc", "sweeps", _int, 20000),
            n_burnin=_get(cp, "mc", "burnin", _int, 2000),
            n_chains=_get(cp, "mc", "chains", _int, 8),
            master_seed=int(seed),
            proposal_width=_get(cp, "mc", "proposal_width", _floats, (0.5, 0.5)),
            update_mix=_get(cp, "mc", "update_mix", float, 0.8),
            cluster_moves=_get(cp, "mc", "cluster_moves", _int, 0),
            target_acceptance=_get(cp, "mc", "target_acceptance", float, 0.4),
            n_blocks=_get(cp, "mc", "blocks", _int, 16),
            trace_stride=_get(cp, "mc", "trace_stride", _int, 0),
        )
        spectrum = {
            "n_points": _get(cp, "spectrum", "n_points", _int, 200),
            "n_keep": _get(cp, "spectrum", "n_keep", _int, 64),
            "x_max": _get(cp, "spectrum", "x_max", float, None),
            "method": _get(cp, "spectrum", "method", str, "dvr"),
            "tau_points": _get(cp, "spectrum", "tau_points", _int, 0),
        }
        pressure = {
            "h_max": _get(cp, "pressure", "h_max", float, 1.0),
            "h_points": _get(cp, "pressure", "h_points", _int, 21),
        }
        orders = _get(cp, "leeyang", "orders", _ints, (10, 12))
    except InputError:
        raise
    except (ModelError, ValueError) as exc:
        raise InputError(str(exc)) from None
    return RunConfig(spec, dec, box, P, mc, spectrum, pressure, orders, config_digest(cp), canonical_text(cp))


def load_config(path: str, overrides: Sequence[str] = (), seed: int = 0) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise InputError(f"cannot read config {path!r}: {exc.strerror}") from None
    cp = parse_text(text)
    apply_overrides(cp, overrides)
    return parse_config(cp, seed)
