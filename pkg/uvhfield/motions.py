# --------------------------------------------------------------------
# motions.py
#
# Author: Lain Musgrove (lain.proliant@gmail.com)
# Date: Wednesday March 12, 2025
#
# Distributed under terms of the MIT license.
# --------------------------------------------------------------------

"""
Procedural pose sequences for the test humanoid.  Each sequence maps a
phase in [0, 1) to a pose; sampling it gives the frames of a motion.
"""

from typing import Callable

import numpy as np

from uvhfield.body_model import Pose
from uvhfield.errors import ConfigurationError
from uvhfield.humanoid import JOINT_NAMES, joint_index

# --------------------------------------------------------------------
Motion = Callable[[float], Pose]


# --------------------------------------------------------------------
def _pose(rotations: dict[str, tuple[float, float, float]]) -> Pose:
    aa = np.zeros((len(JOINT_NAMES), 3))
    for name, r in rotations.items():
        aa[joint_index(name)] = r
    return Pose(aa)


# --------------------------------------------------------------------
def arm_rotation(phase: float) -> Pose:
    """The left arm circles once around its rest direction, 1 rad out."""
    phi = 2 * np.pi * phase
    return _pose({"left_shoulder": (0.0, np.cos(phi), np.sin(phi))})


# --------------------------------------------------------------------
def hand_wave(phase: float) -> Pose:
    wave = 0.4 * np.sin(4 * np.pi * phase)
    return _pose(
        {
            "right_shoulder": (0.0, 0.0, -1.2),
            "right_elbow": (0.0, 0.0, -0.8 + wave),
            "right_wrist": (0.0, 0.0, 0.5 * wave),
        }
    )


# --------------------------------------------------------------------
def head_tilt(phase: float) -> Pose:
    tilt = np.sin(2 * np.pi * phase)
    return _pose({"neck": (0.0, 0.0, 0.1 * tilt), "head": (0.15 * tilt, 0.0, 0.35 * tilt)})


# --------------------------------------------------------------------
def leg_lift(phase: float) -> Pose:
    lift = np.sin(np.pi * phase)
    return _pose(
        {
            "left_hip": (-1.0 * lift, 0.0, 0.0),
            "left_knee": (1.2 * lift, 0.0, 0.0),
            "right_shoulder": (0.0, 0.0, 0.3 * lift),
        }
    )


# --------------------------------------------------------------------
MOTIONS: dict[str, Motion] = {
    "arm_rotation": arm_rotation,
    "hand_wave": hand_wave,
    "head_tilt": head_tilt,
    "leg_lift": leg_lift,
}


# --------------------------------------------------------------------
def sequence(name: str, n_frames: int) -> list[Pose]:
    if name not in MOTIONS:
        raise ConfigurationError(
            "data.sequence", f"unknown motion {name!r}, expected one of {sorted(MOTIONS)}"
        )
    if n_frames < 1:
        raise ConfigurationError("data.sequence", "a sequence needs at least one frame")
    motion = MOTIONS[name]
    return [motion(phase) for phase in np.arange(n_frames) / n_frames]


# --------------------------------------------------------------------
def keyframes(seq: list[Pose], k: int) -> list[Pose]:
    """k evenly spaced frames of `seq`, first frame included."""
    if not 0 < k <= len(seq):
        raise ConfigurationError("data.keyframes", f"cannot pick {k} of {len(seq)} frames")
    return [seq[i] for i in np.linspace(0, len(seq) - 1, k).round().astype(int)]
