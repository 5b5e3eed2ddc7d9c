"""Joint task offloading and resource allocation for multi-user mobile cloud systems.

``mumto`` handles the device/cloud case, ``mumtoc`` adds a computing access
point (CAP) between the devices and the cloud.
"""
from .model import (
    Allocation,
    BoundKind,
    Decision,
    DeviceProfile,
    Instance,
    Mode,
    Placement,
    SystemParams,
    TaskSpec,
    UserProfile,
    default_params,
    generate_instance,
)

__all__ = [
    "Allocation",
    "BoundKind",
    "Decision",
    "DeviceProfile",
    "Instance",
    "Mode",
    "Placement",
    "SystemParams",
    "TaskSpec",
    "UserProfile",
    "default_params",
    "generate_instance",
]
__version__ = "0.1.0"
