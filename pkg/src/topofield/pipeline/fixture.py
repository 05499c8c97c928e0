"""Oracle fixture: a synthetic case, its corruption and the perfect prediction for it."""
from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import numpy as np

from ..synthtree import SyntheticCase, generate_case, load_case, save_case
from ..topobreak import corrupt
from ..voxel import VoxelVolume, read_volume, write_volume
from .config import SynthConfig

PREDICTION_FILES = {
    "repair_mask": "repair_mask.vvol",
    "repaired_tree": "repaired.vvol",
    "labeled_tree": "labeled.vvol",
    "segment_volume": "segments.vvol",
}


def oracle_prediction(case: SyntheticCase, corrupted: VoxelVolume) -> dict[str, VoxelVolume]:
    full = case.complete_tree.mask
    return {
        "repair_mask": VoxelVolume.from_mask(full & ~corrupted.mask),
        "repaired_tree": VoxelVolume.from_mask(full),
        "labeled_tree": case.tree_labels.copy(),
        "segment_volume": case.segment_labels.copy(),
    }


def write_prediction(vols: dict[str, VoxelVolume], directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for key, name in PREDICTION_FILES.items():
        write_volume(vols[key], directory / name)


def read_prediction(directory) -> dict[str, VoxelVolume]:
    directory = Path(directory)
    return {key: read_volume(directory / name) for key, name in PREDICTION_FILES.items()}


def write_oracle_fixture(directory, seed: int = 7, n_breaks: int = 2) -> None:
    """case/, corrupted.vvol, breaks.json and prediction/ holding the oracle repair."""
    directory = Path(directory)
    case = generate_case(SynthConfig().tree_spec(seed))
    corrupted, records = corrupt(case.complete_tree, n_breaks, seed=seed)
    if not records:
        raise RuntimeError(f"seed {seed} produced no break")
    save_case(case, directory / "case")
    write_volume(corrupted, directory / "corrupted.vvol")
    (directory / "breaks.json").write_text(json.dumps([r.to_json() for r in records], indent=2))
    write_prediction(oracle_prediction(case, corrupted), directory / "prediction")


def bundled_fixture() -> Path:
    return Path(str(resources.files("topofield") / "fixtures" / "oracle"))


def load_run(case_dir, corrupted_path, prediction_dir):
    case = load_case(case_dir)
    corrupted = read_volume(corrupted_path)
    pred = read_prediction(prediction_dir)
    if corrupted.data.shape != case.complete_tree.data.shape:
        raise ValueError("corrupted volume and case grids differ")
    if not np.array_equal(pred["repaired_tree"].mask, corrupted.mask | pred["repair_mask"].mask):
        raise ValueError("repaired tree is not the union of the input and the repair mask")
    return case, corrupted, pred
