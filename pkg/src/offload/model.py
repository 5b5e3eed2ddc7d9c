"""Domain types, default parameters and random instance generation.

All quantities are stored in base SI units: bits, Hz, seconds, joules and
CPU cycles. 1 MB is 8e6 bits.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

BITS_PER_MB = 8e6
CYCLES_PER_BYTE = 1900.0
DEFAULT_ETA = 3.5
DEFAULT_RHO = 1.0


class Mode(enum.Enum):
    NO_CAP = "nocap"
    WITH_CAP = "cap"


class BoundKind(enum.Enum):
    """Which delay model to use for the offloaded tasks of a user."""

    UPPER = "upper"  # worst case: no overlap between pipeline stages
    LOWER = "lower"  # best case: only the largest pipeline stage counts


class Placement(enum.IntEnum):
    LOCAL = 0
    CAP = 1
    CLOUD = 2

    @property
    def letter(self) -> str:
        return "LAC"[self]


class InvalidInstanceError(ValueError):
    pass


def _require_positive(owner: str, **values: float) -> None:
    for name, value in values.items():
        if not (value > 0 and math.isfinite(value)):
            raise InvalidInstanceError(f"{owner}.{name} must be positive and finite, got {value!r}")


@dataclass(frozen=True)
class TaskSpec:
    d_in: float  # bits
    d_out: float  # bits
    cycles: float

    def __post_init__(self):
        _require_positive("TaskSpec", d_in=self.d_in, d_out=self.d_out, cycles=self.cycles)


@dataclass(frozen=True)
class DeviceProfile:
    local_time_per_bit: float  # s/bit
    local_energy_per_bit: float  # J/bit
    tx_energy_per_bit: float  # J/bit
    rx_energy_per_bit: float  # J/bit

    def __post_init__(self):
        _require_positive(
            "DeviceProfile",
            local_time_per_bit=self.local_time_per_bit,
            local_energy_per_bit=self.local_energy_per_bit,
            tx_energy_per_bit=self.tx_energy_per_bit,
            rx_energy_per_bit=self.rx_energy_per_bit,
        )


@dataclass(frozen=True)
class UserProfile:
    eta_u: float  # bits/s/Hz
    eta_d: float  # bits/s/Hz
    rho: float  # J/s
    tasks: tuple[TaskSpec, ...]
    device: DeviceProfile

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        _require_positive("UserProfile", eta_u=self.eta_u, eta_d=self.eta_d, rho=self.rho)
        if not self.tasks:
            raise InvalidInstanceError("UserProfile.tasks must be non-empty")


@dataclass(frozen=True)
class SystemParams:
    """Shared resources and cost weights.

    ``usage_data_unit`` and ``usage_bandwidth_unit`` select how the usage
    cost ``D_in + l1/f + l2/C_UL + l3/C_DL`` is evaluated: the input size
    is divided by ``usage_data_unit`` bits and the bandwidths by
    ``usage_bandwidth_unit`` Hz. The defaults (1, 1) evaluate it in bits
    and Hz.
    """

    c_ul: float  # Hz
    c_dl: float  # Hz
    c_total: float  # Hz
    r_ac: float  # bits/s
    f_c: float  # cycles/s, per user
    f_a_total: float  # cycles/s
    alpha: float  # J/bit
    beta: float  # J/bit
    lambda1: float = 1e18
    lambda2: float = 1e16
    lambda3: float = 1e16
    usage_data_unit: float = 1.0
    usage_bandwidth_unit: float = 1.0

    def __post_init__(self):
        _require_positive(
            "SystemParams",
            c_ul=self.c_ul,
            c_dl=self.c_dl,
            c_total=self.c_total,
            r_ac=self.r_ac,
            f_c=self.f_c,
            usage_data_unit=self.usage_data_unit,
            usage_bandwidth_unit=self.usage_bandwidth_unit,
        )
        for name in ("alpha", "beta", "lambda1", "lambda2", "lambda3"):
            value = getattr(self, name)
            if not value >= 0:
                raise InvalidInstanceError(f"SystemParams.{name} must be non-negative, got {value!r}")
        if not self.f_a_total >= 0:
            raise InvalidInstanceError("SystemParams.f_a_total must be non-negative")

    @property
    def shared_bandwidth(self) -> float:
        return min(self.c_ul + self.c_dl, self.c_total)


@dataclass(frozen=True)
class Instance:
    users: tuple[UserProfile, ...]
    params: SystemParams
    mode: Mode = Mode.NO_CAP

    def __post_init__(self):
        object.__setattr__(self, "users", tuple(self.users))
        if not self.users:
            raise InvalidInstanceError("an instance needs at least one user")
        if self.mode is Mode.WITH_CAP and not self.params.f_a_total > 0:
            raise InvalidInstanceError("f_a_total must be positive in CAP mode")

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def task_counts(self) -> tuple[int, ...]:
        return tuple(len(u.tasks) for u in self.users)

    @property
    def n_tasks(self) -> int:
        return sum(self.task_counts)

    def with_params(self, **changes) -> "Instance":
        return replace(self, params=replace(self.params, **changes))

    def with_mode(self, mode: Mode) -> "Instance":
        return replace(self, mode=mode)

    def with_rho(self, rho: float) -> "Instance":
        return replace(self, users=tuple(replace(u, rho=rho) for u in self.users))


@dataclass(frozen=True)
class Decision:
    """Per-task placement, ``placement[i][j]`` for task j of user i."""

    placement: tuple[tuple[Placement, ...], ...]

    def __post_init__(self):
        object.__setattr__(
            self, "placement", tuple(tuple(Placement(p) for p in row) for row in self.placement)
        )

    @classmethod
    def uniform(cls, instance: Instance, where: Placement) -> "Decision":
        return cls(tuple((where,) * m for m in instance.task_counts))

    @classmethod
    def all_local(cls, instance: Instance) -> "Decision":
        return cls.uniform(instance, Placement.LOCAL)

    @classmethod
    def all_cloud(cls, instance: Instance) -> "Decision":
        return cls.uniform(instance, Placement.CLOUD)

    @classmethod
    def from_string(cls, text: str) -> "Decision":
        rows = [r for r in text.strip().split("|")]
        return cls(tuple(tuple(Placement("LAC".index(ch)) for ch in row) for row in rows))

    def to_string(self) -> str:
        """Compact form such as ``LLCA|CCLL`` (one group per user)."""
        return "|".join("".join(p.letter for p in row) for row in self.placement)

    def moved(self, user: int, task: int, where: Placement) -> "Decision":
        rows = [list(r) for r in self.placement]
        rows[user][task] = Placement(where)
        return Decision(tuple(tuple(r) for r in rows))

    def offloaded(self, user: int) -> bool:
        return any(p is not Placement.LOCAL for p in self.placement[user])

    def count(self, where: Placement) -> int:
        return sum(p is where for row in self.placement for p in row)

    def check(self, instance: Instance) -> None:
        if tuple(len(r) for r in self.placement) != instance.task_counts:
            raise ValueError("decision shape does not match the instance")
        if instance.mode is Mode.NO_CAP and self.count(Placement.CAP):
            raise ValueError("CAP placement requested in a no-CAP instance")

    def as_array(self, width: int | None = None) -> np.ndarray:
        """Integer array (n_users, width) padded with -1 for missing tasks."""
        width = width or max(len(r) for r in self.placement)
        out = np.full((len(self.placement), width), -1, dtype=np.int8)
        for i, row in enumerate(self.placement):
            out[i, : len(row)] = [int(p) for p in row]
        return out


@dataclass(frozen=True)
class Allocation:
    c_u: tuple[float, ...]  # Hz
    c_d: tuple[float, ...]  # Hz
    f_a: tuple[float, ...] = field(default=())  # cycles/s, empty without a CAP

    def __post_init__(self):
        for name in ("c_u", "c_d", "f_a"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if len(self.c_u) != len(self.c_d) or (self.f_a and len(self.f_a) != len(self.c_u)):
            raise ValueError("allocation vectors must have one entry per user")
        if min(self.c_u + self.c_d + self.f_a, default=0.0) < 0:
            raise ValueError("allocations must be non-negative")

    @classmethod
    def zeros(cls, instance: Instance) -> "Allocation":
        n = instance.n_users
        f_a = (0.0,) * n if instance.mode is Mode.WITH_CAP else ()
        return cls((0.0,) * n, (0.0,) * n, f_a)

    def f_a_of(self, user: int) -> float:
        return self.f_a[user] if self.f_a else 0.0

    def violations(self, params: SystemParams, rel_tol: float = 1e-9) -> list[str]:
        """Budget constraints that this allocation breaks (empty when feasible)."""
        out = []
        checks = [
            ("uplink", sum(self.c_u), params.c_ul),
            ("downlink", sum(self.c_d), params.c_dl),
            ("total bandwidth", sum(self.c_u) + sum(self.c_d), params.c_total),
            ("CAP rate", sum(self.f_a), params.f_a_total),
        ]
        for label, used, budget in checks:
            if used > budget * (1 + rel_tol):
                out.append(f"{label}: {used:.6g} > {budget:.6g}")
        return out


def default_params() -> tuple[SystemParams, DeviceProfile]:
    """Default system parameters and the mobile device profile."""
    params = SystemParams(
        c_ul=4e7,
        c_dl=4e7,
        c_total=4e7,
        r_ac=1.5e7,
        f_c=1e10,
        f_a_total=1e10,
        alpha=1.5e-7,
        beta=2.5e-7,
        lambda1=1e18,
        lambda2=1e16,
        lambda3=1e16,
    )
    device = DeviceProfile(
        local_time_per_bit=4.75e-7,
        local_energy_per_bit=3.25e-7,
        tx_energy_per_bit=1.42e-7,
        rx_energy_per_bit=1.42e-7,
    )
    return params, device


def cycles_for(d_in_bits: float) -> float:
    return CYCLES_PER_BYTE * d_in_bits / 8.0


def generate_instance(
    params: SystemParams,
    device: DeviceProfile,
    n_users: int | Sequence[int],
    m_tasks: int | None = None,
    seed: int = 0,
    *,
    mode: Mode = Mode.NO_CAP,
    rho: float = DEFAULT_RHO,
    eta: float = DEFAULT_ETA,
) -> Instance:
    """Draw a random instance.

    Input sizes are uniform on [10, 30] MB, output sizes uniform on [1, 3] MB
    and every task needs 1900 cycles per input byte. ``n_users`` may also be
    a sequence of per-user task counts, in which case ``m_tasks`` is ignored.
    """
    if isinstance(n_users, (int, np.integer)):
        if m_tasks is None:
            raise ValueError("m_tasks is required when n_users is a count")
        counts = [int(m_tasks)] * int(n_users)
    else:
        counts = [int(m) for m in n_users]
    if not counts or min(counts) < 1:
        raise ValueError("need at least one user and one task per user")

    rng = np.random.default_rng(seed)
    users = []
    for m in counts:
        d_in = rng.uniform(10.0, 30.0, size=m) * BITS_PER_MB
        d_out = rng.uniform(1.0, 3.0, size=m) * BITS_PER_MB
        tasks = tuple(TaskSpec(float(a), float(b), cycles_for(float(a))) for a, b in zip(d_in, d_out))
        users.append(UserProfile(eta_u=eta, eta_d=eta, rho=rho, tasks=tasks, device=device))
    return Instance(tuple(users), params, mode)
