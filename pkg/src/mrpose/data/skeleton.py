"""Skeleton descriptors: joint names, mirror pairs, torso and head segments."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple


@dataclass
class Skeleton:
    joint_names: List[str]
    flip_pairs: List[Tuple[int, int]]
    torso: Tuple[int, int]  # (right hip, left shoulder)
    head: Tuple[int, int]  # (head top, neck) segment used for head size
    pckh_groups: Dict[str, List[int]] = field(default_factory=dict)
    name: str = "custom"

    def __post_init__(self):
        self.flip_pairs = [tuple(p) for p in self.flip_pairs]
        self.torso = tuple(self.torso)
        self.head = tuple(self.head)
        used = [i for pair in self.flip_pairs for i in pair]
        if len(used) != len(set(used)):
            raise ValueError("flip pairs must be disjoint")
        if any(not 0 <= i < self.k for i in used + list(self.torso) + list(self.head)):
            raise ValueError("skeleton index out of range")

    @property
    def k(self) -> int:
        return len(self.joint_names)

    def flip_permutation(self) -> List[int]:
        perm = list(range(self.k))
        for a, b in self.flip_pairs:
            perm[a], perm[b] = b, a
        return perm

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "joint_names": list(self.joint_names),
            "flip_pairs": [list(p) for p in self.flip_pairs],
            "torso": list(self.torso),
            "head": list(self.head),
            "pckh_groups": {g: list(v) for g, v in self.pckh_groups.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Skeleton":
        return cls(
            joint_names=list(d["joint_names"]),
            flip_pairs=[tuple(p) for p in d.get("flip_pairs", [])],
            torso=tuple(d["torso"]),
            head=tuple(d["head"]),
            pckh_groups={g: list(v) for g, v in d.get("pckh_groups", {}).items()},
            name=d.get("name", "custom"),
        )


def _groups(names: Sequence[str], head: Sequence[str]) -> Dict[str, List[int]]:
    groups: Dict[str, List[int]] = {"head": [names.index(n) for n in head]}
    for part in ("shoulder", "elbow", "wrist", "hip", "knee", "ankle"):
        groups[part] = [i for i, n in enumerate(names) if n.endswith(part)]
    return groups


COCO_NAMES = [
    "nose", "left_eye", "right_eye", "left_ear", "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hip", "right_hip",
    "left_knee", "right_knee", "left_ankle", "right_ankle",
]

MPII_NAMES = [
    "right_ankle", "right_knee", "right_hip", "left_hip", "left_knee", "left_ankle",
    "pelvis", "thorax", "upper_neck", "head_top",
    "right_wrist", "right_elbow", "right_shoulder", "left_shoulder", "left_elbow", "left_wrist",
]

SYNTH_NAMES = [
    "head_top", "neck",
    "right_shoulder", "right_elbow", "right_wrist",
    "left_shoulder", "left_elbow", "left_wrist",
    "right_hip", "right_knee", "left_hip", "left_knee",
]


def coco17() -> Skeleton:
    n = COCO_NAMES
    return Skeleton(
        joint_names=list(n),
        flip_pairs=[(1, 2), (3, 4), (5, 6), (7, 8), (9, 10), (11, 12), (13, 14), (15, 16)],
        torso=(n.index("right_hip"), n.index("left_shoulder")),
        head=(n.index("nose"), n.index("left_ear")),
        pckh_groups=_groups(n, ["nose", "left_eye", "right_eye", "left_ear", "right_ear"]),
        name="coco17",
    )


def mpii16() -> Skeleton:
    n = MPII_NAMES
    return Skeleton(
        joint_names=list(n),
        flip_pairs=[(0, 5), (1, 4), (2, 3), (10, 15), (11, 14), (12, 13)],
        torso=(n.index("right_hip"), n.index("left_shoulder")),
        head=(n.index("head_top"), n.index("upper_neck")),
        pckh_groups=_groups(n, ["head_top", "upper_neck"]),
        name="mpii16",
    )


def synthetic12() -> Skeleton:
    n = SYNTH_NAMES
    return Skeleton(
        joint_names=list(n),
        flip_pairs=[(2, 5), (3, 6), (4, 7), (8, 10), (9, 11)],
        torso=(n.index("right_hip"), n.index("left_shoulder")),
        head=(n.index("head_top"), n.index("neck")),
        pckh_groups=_groups(n, ["head_top", "neck"]),
        name="synthetic12",
    )


PRESETS = {"coco17": coco17, "mpii16": mpii16, "synthetic12": synthetic12}


def get_skeleton(name: str) -> Skeleton:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ValueError(f"unknown skeleton preset {name!r}; known: {sorted(PRESETS)}") from None
