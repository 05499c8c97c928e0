"""Synthetic train/test splits: complete trees plus their corrupted versions."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..synthtree import SyntheticCase, generate_case
from ..topobreak import BreakRecord, corrupt
from ..voxel import VoxelVolume
from .config import SynthConfig


@dataclass
class TrainingCase:
    case: SyntheticCase
    corrupted: VoxelVolume
    records: list[BreakRecord]


def corrupt_case(case: SyntheticCase, synth: SynthConfig, seed: int) -> TrainingCase:
    rng = np.random.default_rng(seed)
    n_breaks = int(rng.integers(synth.min_breaks, synth.max_breaks + 1))
    corrupted, records = corrupt(case.complete_tree, n_breaks, min_nodes=synth.min_nodes, seed=seed)
    return TrainingCase(case, corrupted, records)


def make_split(synth: SynthConfig, split: str = "train") -> list[TrainingCase]:
    """Cases whose corruption produced at least one break; seeds run consecutively."""
    if split not in ("train", "test"):
        raise ValueError(f"split must be train or test, got {split!r}")
    n = synth.n_train if split == "train" else synth.n_test
    seed = synth.train_seed if split == "train" else synth.test_seed
    out: list[TrainingCase] = []
    s = seed
    while len(out) < n:
        tc = corrupt_case(generate_case(synth.tree_spec(s)), synth, s)
        if tc.records:
            out.append(tc)
        s += 1
        if s - seed > 10 * n + 10:
            raise RuntimeError("could not build enough breakable cases")
    return out
