"""Simulation configuration: strict JSON schema with defaults.

A minimal config names the system and the horizon::

    {"system": {"kind": "spin", "two_J": 2}, "T": 10.0}

Everything else has a default:

=================  =========================================================
field              default
=================  =========================================================
eta                1.0
target             top eigenstate ``m = 2J`` (spin) or antisymmetric (qubits)
controller         ``{"kind": "zero"}``
dt                 1e-4
initial_state      ``{"kind": "maximally_mixed"}``
n_trajectories     1
master_seed        0
record_stride      100
converge_eps       0.01
=================  =========================================================

Controller kinds: ``zero``, ``constant`` (``k``), ``switching``
(``gamma``), ``feedback``, ``two_qubit_switching`` (``gamma``),
``two_qubit_feedback``. The two feedback kinds apply the feedback law with
no switching; ``gamma`` may still be given for band statistics.

Initial-state kinds: ``maximally_mixed``, ``eigenstate`` (``m``),
``explicit`` (``matrix`` as nested ``[re, im]`` pairs), ``random_pure``
(drawn per trajectory from its own seed stream).
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from qfeedback.operators import TargetKind


class ConfigError(ValueError):
    """Configuration is malformed; the message names the field and accepted range."""


@dataclass(frozen=True)
class SystemConfig:
    kind: str
    two_J: int | None = None

    @property
    def N(self) -> int:
        return 4 if self.kind == "two_qubit" else self.two_J + 1


@dataclass(frozen=True)
class TargetConfig:
    kind: str
    m: int | None = None


@dataclass(frozen=True)
class ControllerConfig:
    kind: str = "zero"
    k: float | None = None
    gamma: float | None = None


@dataclass(frozen=True)
class InitialStateConfig:
    kind: str = "maximally_mixed"
    m: int | None = None
    matrix: tuple | None = None

    def as_array(self) -> np.ndarray:
        return np.array([[complex(re, im) for re, im in row] for row in self.matrix], dtype=np.complex128)


@dataclass(frozen=True)
class SimulationConfig:
    system: SystemConfig
    T: float
    eta: float = 1.0
    target: TargetConfig | None = None
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    dt: float = 1e-4
    initial_state: InitialStateConfig = field(default_factory=InitialStateConfig)
    n_trajectories: int = 1
    master_seed: int = 0
    record_stride: int = 100
    converge_eps: float = 0.01

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    def to_dict(self) -> dict:
        return _strip_none(dataclasses.asdict(self))

    def replace(self, **changes) -> "SimulationConfig":
        return parse_config({**self.to_dict(), **changes})


def _strip_none(obj):
    if isinstance(obj, dict):
        return {k: _strip_none(v) for k, v in obj.items() if v is not None}
    if isinstance(obj, (list, tuple)):
        return [_strip_none(v) for v in obj]
    return obj


_TOP_KEYS = {f.name for f in dataclasses.fields(SimulationConfig)}
_CONTROLLER_KEYS = {
    "zero": set(),
    "constant": {"k"},
    "switching": {"gamma"},
    "feedback": {"gamma"},
    "two_qubit_switching": {"gamma"},
    "two_qubit_feedback": {"gamma"},
}
_INITIAL_KEYS = {
    "maximally_mixed": set(),
    "random_pure": set(),
    "eigenstate": {"m"},
    "explicit": {"matrix"},
}


def _obj(value, where: str) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(f"{where}: expected a JSON object, got {type(value).__name__}")
    return value


def _only(d: dict, allowed: set, where: str):
    extra = sorted(set(d) - allowed)
    if extra:
        raise ConfigError(f"{where}: unknown field(s) {', '.join(extra)}; accepted: {', '.join(sorted(allowed))}")


def _real(d: dict, key: str, where: str, lo=None, hi=None, lo_open=False, hi_open=False, default=None):
    if key not in d:
        if default is None:
            raise ConfigError(f"{where}.{key}: required field missing")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"{where}.{key}: expected a finite number, got {v!r}")
    v = float(v)
    lo_ok = lo is None or (v > lo if lo_open else v >= lo)
    hi_ok = hi is None or (v < hi if hi_open else v <= hi)
    if not (lo_ok and hi_ok):
        lb = "(" if lo_open else "["
        rb = ")" if hi_open else "]"
        rng = f"{lb}{'-inf' if lo is None else lo}, {'inf' if hi is None else hi}{rb}"
        raise ConfigError(f"{where}.{key}: {v!r} is outside the accepted range {rng}")
    return v


def _int(d: dict, key: str, where: str, lo=None, hi=None, default=None):
    if key not in d:
        if default is None:
            raise ConfigError(f"{where}.{key}: required field missing")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{where}.{key}: expected an integer, got {v!r}")
    if (lo is not None and v < lo) or (hi is not None and v > hi):
        raise ConfigError(f"{where}.{key}: {v} is outside the accepted range "
                          f"[{'-inf' if lo is None else lo}, {'inf' if hi is None else hi}]")
    return v


def _kind(d: dict, where: str, choices) -> str:
    k = d.get("kind")
    if k not in choices:
        raise ConfigError(f"{where}.kind: {k!r} is not one of {', '.join(sorted(choices))}")
    return k


def parse_config(data: dict) -> SimulationConfig:
    """Validate a decoded JSON object and fill defaults."""
    d = _obj(data, "config")
    _only(d, _TOP_KEYS, "config")

    s = _obj(d.get("system"), "system") if "system" in d else None
    if s is None:
        raise ConfigError("system: required field missing")
    kind = _kind(s, "system", {"spin", "two_qubit"})
    if kind == "spin":
        _only(s, {"kind", "two_J"}, "system")
        system = SystemConfig("spin", _int(s, "two_J", "system", lo=1, hi=64))
    else:
        _only(s, {"kind"}, "system")
        system = SystemConfig("two_qubit")
    n = system.N

    eta = _real(d, "eta", "config", lo=0.0, hi=1.0, lo_open=True, default=1.0)
    dt = _real(d, "dt", "config", lo=0.0, lo_open=True, default=1e-4)
    T = _real(d, "T", "config", lo=dt)

    if "target" in d:
        t = _obj(d["target"], "target")
        if system.kind == "spin":
            _kind(t, "target", {TargetKind.SPIN_EIGENSTATE.value})
            _only(t, {"kind", "m"}, "target")
            target = TargetConfig(t["kind"], _int(t, "m", "target", lo=0, hi=system.two_J))
        else:
            _kind(t, "target", {TargetKind.TWO_QUBIT_SYMMETRIC.value, TargetKind.TWO_QUBIT_ANTISYMMETRIC.value})
            _only(t, {"kind"}, "target")
            target = TargetConfig(t["kind"])
    elif system.kind == "spin":
        target = TargetConfig(TargetKind.SPIN_EIGENSTATE.value, system.two_J)
    else:
        target = TargetConfig(TargetKind.TWO_QUBIT_ANTISYMMETRIC.value)

    c = _obj(d.get("controller", {"kind": "zero"}), "controller")
    ckind = _kind(c, "controller", set(_CONTROLLER_KEYS))
    _only(c, {"kind"} | _CONTROLLER_KEYS[ckind], "controller")
    if ckind.startswith("two_qubit") and system.kind != "two_qubit":
        raise ConfigError(f"controller.kind: {ckind!r} requires system.kind 'two_qubit'")
    if ckind in ("switching", "feedback") and system.kind != "spin":
        raise ConfigError(f"controller.kind: {ckind!r} requires system.kind 'spin'; "
                          "use the two_qubit_* controllers for two qubits")
    if ckind == "constant":
        controller = ControllerConfig("constant", k=_real(c, "k", "controller"))
    elif ckind in ("switching", "two_qubit_switching"):
        controller = ControllerConfig(ckind, gamma=_real(c, "gamma", "controller", 0.0, 1.0, True, True, 0.4))
    elif ckind in ("feedback", "two_qubit_feedback"):
        g = _real(c, "gamma", "controller", 0.0, 1.0, True, True) if "gamma" in c else None
        controller = ControllerConfig(ckind, gamma=g)
    else:
        controller = ControllerConfig("zero")

    i = _obj(d.get("initial_state", {"kind": "maximally_mixed"}), "initial_state")
    ikind = _kind(i, "initial_state", set(_INITIAL_KEYS))
    _only(i, {"kind"} | _INITIAL_KEYS[ikind], "initial_state")
    if ikind == "eigenstate":
        initial = InitialStateConfig("eigenstate", m=_int(i, "m", "initial_state", lo=0, hi=n - 1))
    elif ikind == "explicit":
        initial = InitialStateConfig("explicit", matrix=_parse_matrix(i.get("matrix"), n))
    else:
        initial = InitialStateConfig(ikind)

    return SimulationConfig(
        system=system,
        T=T,
        eta=eta,
        target=target,
        controller=controller,
        dt=dt,
        initial_state=initial,
        n_trajectories=_int(d, "n_trajectories", "config", lo=1, default=1),
        master_seed=_int(d, "master_seed", "config", lo=0, hi=2**64 - 1, default=0),
        record_stride=_int(d, "record_stride", "config", lo=1, default=100),
        converge_eps=_real(d, "converge_eps", "config", 0.0, 1.0, True, True, 0.01),
    )


def _parse_matrix(value, n: int) -> tuple:
    where = "initial_state.matrix"
    if not isinstance(value, list) or len(value) != n:
        raise ConfigError(f"{where}: expected {n} rows of {n} [re, im] pairs")
    rows = []
    for r, row in enumerate(value):
        if not isinstance(row, list) or len(row) != n:
            raise ConfigError(f"{where}[{r}]: expected {n} [re, im] pairs")
        out = []
        for c, z in enumerate(row):
            if (not isinstance(z, list) or len(z) != 2
                    or not all(isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)
                               for x in z)):
                raise ConfigError(f"{where}[{r}][{c}]: expected a finite [re, im] pair, got {z!r}")
            out.append((float(z[0]), float(z[1])))
        rows.append(tuple(out))
    m = np.array([[complex(a, b) for a, b in row] for row in rows])
    if np.linalg.norm(m - m.conj().T) > 1e-9 or abs(np.trace(m) - 1) > 1e-9 \
            or np.linalg.eigvalsh(0.5 * (m + m.conj().T))[0] < -1e-8:
        raise ConfigError(f"{where}: not a density matrix (needs Hermitian, trace 1, positive semidefinite)")
    return tuple(rows)


def matrix_to_json(m) -> list:
    m = np.asarray(m, dtype=np.complex128)
    return [[[float(z.real), float(z.imag)] for z in row] for row in m]


def read_config(path) -> SimulationConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_config(data)


def write_config(config: SimulationConfig, path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, allow_nan=False) + "\n")
