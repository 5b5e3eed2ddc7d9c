"""Plain-text experiment / instance configuration.

One ``key = value`` per line, ``#`` starts a comment, arrays are written in
brackets. Every physical quantity carries its unit in the key name::

    mode = cap
    n_users = 5
    m_tasks = 4
    seed = 7
    beta_j_per_bit = 2.5e-7
    # explicit tasks for user 0 (otherwise tasks are drawn from the seed)
    user.0.d_in_bits = [1.6e8, 8e7]
    user.0.d_out_bits = [1.6e7, 8e6]
    user.0.cycles = [3.8e10, 1.9e10]

Keys that are not given fall back to the defaults of :func:`offload.model.default_params`.
If any ``user.<i>.`` key is present, the instance is fully explicit and
``n_users``/``m_tasks`` are ignored.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace

from .model import (
    DEFAULT_ETA,
    DEFAULT_RHO,
    DeviceProfile,
    Instance,
    InvalidInstanceError,
    Mode,
    SystemParams,
    TaskSpec,
    UserProfile,
    default_params,
    generate_instance,
)

# config key -> SystemParams field
PARAM_KEYS = {
    "c_ul_hz": "c_ul",
    "c_dl_hz": "c_dl",
    "c_total_hz": "c_total",
    "r_ac_bits_per_s": "r_ac",
    "f_c_cycles_per_s": "f_c",
    "f_a_total_cycles_per_s": "f_a_total",
    "alpha_j_per_bit": "alpha",
    "beta_j_per_bit": "beta",
    "lambda1": "lambda1",
    "lambda2": "lambda2",
    "lambda3": "lambda3",
    "usage_data_unit_bits": "usage_data_unit",
    "usage_bandwidth_unit_hz": "usage_bandwidth_unit",
}
DEVICE_KEYS = {
    "local_time_s_per_bit": "local_time_per_bit",
    "local_energy_j_per_bit": "local_energy_per_bit",
    "tx_energy_j_per_bit": "tx_energy_per_bit",
    "rx_energy_j_per_bit": "rx_energy_per_bit",
}
USER_KEYS = {
    "d_in_bits", "d_out_bits", "cycles", "eta_u_bits_per_s_hz", "eta_d_bits_per_s_hz",
    "rho_j_per_s", *(f"device.{k}" for k in DEVICE_KEYS),
}
SCALAR_KEYS = {"mode", "n_users", "m_tasks", "seed", "rho_j_per_s", "eta_bits_per_s_hz"}

# short names accepted by ``--sweep``
SWEEP_KEYS = {
    "alpha": "alpha_j_per_bit",
    "beta": "beta_j_per_bit",
    "rho": "rho_j_per_s",
    "f_c": "f_c_cycles_per_s",
    "f_a_total": "f_a_total_cycles_per_s",
    "m_tasks": "m_tasks",
    "n_users": "n_users",
}

_USER_RE = re.compile(r"^user\.(\d+)\.(.+)$")


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass
class Config:
    """Parsed configuration; ``instance(seed)`` realises it."""

    mode: Mode = Mode.NO_CAP
    n_users: int = 5
    m_tasks: int = 4
    seed: int = 0
    rho: float = DEFAULT_RHO
    eta: float = DEFAULT_ETA
    params: SystemParams = field(default_factory=lambda: default_params()[0])
    device: DeviceProfile = field(default_factory=lambda: default_params()[1])
    users: tuple[UserProfile, ...] | None = None  # explicit instance

    @property
    def explicit(self) -> bool:
        return self.users is not None

    def instance(self, seed: int | None = None) -> Instance:
        if self.users is not None:
            users = tuple(replace(u, rho=self.rho) for u in self.users) if self._rho_set else self.users
            return Instance(users, self.params, self.mode)
        return generate_instance(
            self.params, self.device, self.n_users, self.m_tasks,
            self.seed if seed is None else seed, mode=self.mode, rho=self.rho, eta=self.eta)

    _rho_set: bool = False

    def with_value(self, key: str, value: float) -> "Config":
        """Copy with one sweep parameter (short or full key) replaced."""
        full = SWEEP_KEYS.get(key, key)
        if full in PARAM_KEYS:
            return replace(self, params=replace(self.params, **{PARAM_KEYS[full]: float(value)}))
        if full == "rho_j_per_s":
            return replace(self, rho=float(value), _rho_set=True)
        if full in ("m_tasks", "n_users"):
            if self.explicit:
                raise ConfigError(f"cannot sweep {key} on an explicit instance")
            if float(value) != int(value) or int(value) < 1:
                raise ConfigError(f"{key} must be a positive integer, got {value!r}")
            return replace(self, **{full: int(value)})
        raise ConfigError(f"unknown sweep parameter {key!r}; choose from {', '.join(SWEEP_KEYS)}")


def _parse_value(text: str, line: int):
    text = text.strip()
    if text.startswith("["):
        if not text.endswith("]"):
            raise ConfigError("unterminated array", line)
        body = text[1:-1].strip()
        return [_number(x, line) for x in body.split(",")] if body else []
    return text


def _number(text: str, line: int) -> float:
    try:
        value = float(text.strip())
    except ValueError:
        raise ConfigError(f"expected a number, got {text.strip()!r}", line) from None
    if not math.isfinite(value):
        raise ConfigError(f"non-finite value {text.strip()!r}", line)
    return value


def _integer(text, line: int) -> int:
    value = _number(text, line)
    if value != int(value):
        raise ConfigError(f"expected an integer, got {text!r}", line)
    return int(value)


def parse(text: str) -> Config:
    """Parse config text; errors carry the offending line number."""
    cfg = Config()
    params: dict[str, float] = {}
    device: dict[str, float] = {}
    users: dict[int, dict[str, tuple[object, int]]] = {}
    seen: dict[str, int] = {}

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError("empty key", lineno)
        if key in seen:
            raise ConfigError(f"duplicate key {key!r} (first on line {seen[key]})", lineno)
        seen[key] = lineno
        value = _parse_value(value, lineno)

        m = _USER_RE.match(key)
        if m:
            sub = m.group(2)
            if sub not in USER_KEYS:
                raise ConfigError(f"unknown user key {sub!r}", lineno)
            users.setdefault(int(m.group(1)), {})[sub] = (value, lineno)
            continue
        if isinstance(value, list):
            raise ConfigError(f"{key} takes a single value", lineno)
        if key in PARAM_KEYS:
            params[PARAM_KEYS[key]] = _number(value, lineno)
        elif key in DEVICE_KEYS:
            device[DEVICE_KEYS[key]] = _number(value, lineno)
        elif key == "mode":
            try:
                cfg.mode = Mode(value)
            except ValueError:
                raise ConfigError(f"mode must be 'nocap' or 'cap', got {value!r}", lineno) from None
        elif key in ("n_users", "m_tasks", "seed"):
            n = _integer(value, lineno)
            if key != "seed" and n < 1:
                raise ConfigError(f"{key} must be at least 1", lineno)
            setattr(cfg, key, n)
        elif key == "rho_j_per_s":
            cfg.rho = _number(value, lineno)
            cfg._rho_set = True
        elif key == "eta_bits_per_s_hz":
            cfg.eta = _number(value, lineno)
        else:
            raise ConfigError(f"unknown key {key!r}", lineno)

    try:
        cfg.params = replace(cfg.params, **params)
        cfg.device = replace(cfg.device, **device)
        if users:
            cfg.users = _build_users(users, cfg)
            cfg._rho_set = False  # per-user values already applied
        cfg.instance()
    except InvalidInstanceError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def _build_users(users, cfg: Config) -> tuple[UserProfile, ...]:
    if sorted(users) != list(range(len(users))):
        raise ConfigError(f"user indices must be 0..{len(users) - 1}, got {sorted(users)}")
    out = []
    for i in range(len(users)):
        spec = users[i]
        first = min(line for _, line in spec.values())
        for need in ("d_in_bits", "d_out_bits", "cycles"):
            if need not in spec:
                raise ConfigError(f"user {i} is missing {need}", first)
        arrays = {}
        for k in ("d_in_bits", "d_out_bits", "cycles"):
            value, line = spec[k]
            if not isinstance(value, list):
                raise ConfigError(f"user.{i}.{k} must be an array", line)
            arrays[k] = value
        if len({len(v) for v in arrays.values()}) != 1:
            raise ConfigError(f"user {i}: d_in_bits, d_out_bits and cycles differ in length", first)

        def scalar(k, default):
            if k not in spec:
                return default
            value, line = spec[k]
            if isinstance(value, list):
                raise ConfigError(f"user.{i}.{k} takes a single value", line)
            return _number(value, line)

        device = replace(cfg.device, **{
            DEVICE_KEYS[k]: scalar(f"device.{k}", getattr(cfg.device, DEVICE_KEYS[k])) for k in DEVICE_KEYS})
        try:
            tasks = tuple(TaskSpec(a, b, c) for a, b, c in
                          zip(arrays["d_in_bits"], arrays["d_out_bits"], arrays["cycles"]))
            out.append(UserProfile(
                eta_u=scalar("eta_u_bits_per_s_hz", cfg.eta),
                eta_d=scalar("eta_d_bits_per_s_hz", cfg.eta),
                rho=scalar("rho_j_per_s", cfg.rho),
                tasks=tasks,
                device=device,
            ))
        except InvalidInstanceError as exc:
            raise ConfigError(f"user {i}: {exc}", first) from None
    return tuple(out)


def load(path) -> Config:
    with open(path, encoding="utf-8") as fh:
        return parse(fh.read())


def dump_instance(instance: Instance) -> str:
    """Explicit config text that :func:`parse` turns back into ``instance``."""
    lines = [f"mode = {instance.mode.value}"]
    for key, name in PARAM_KEYS.items():
        lines.append(f"{key} = {getattr(instance.params, name)!r}")
    for i, user in enumerate(instance.users):
        lines.append(f"# user {i}")
        for key, attr in (("d_in_bits", "d_in"), ("d_out_bits", "d_out"), ("cycles", "cycles")):
            values = ", ".join(repr(getattr(t, attr)) for t in user.tasks)
            lines.append(f"user.{i}.{key} = [{values}]")
        lines.append(f"user.{i}.eta_u_bits_per_s_hz = {user.eta_u!r}")
        lines.append(f"user.{i}.eta_d_bits_per_s_hz = {user.eta_d!r}")
        lines.append(f"user.{i}.rho_j_per_s = {user.rho!r}")
        for key, name in DEVICE_KEYS.items():
            lines.append(f"user.{i}.device.{key} = {getattr(user.device, name)!r}")
    return "\n".join(lines) + "\n"
