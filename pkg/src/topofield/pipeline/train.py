"""Multi-task training loop with full or weak repair supervision."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..neural.field import FieldInputs, ModelConfig, TopoFieldModel
from ..neural.inputs import prepare_inputs
from ..sampling import (
    QueryBatch,
    make_weak_sample,
    sample_label_queries,
    sample_repair_queries,
    sample_segment_queries,
)
from ..topobreak import BranchNotBreakable, BreakRecord, corrupt
from ..voxel import VoxelVolume
from .config import TrainConfig
from .data import TrainingCase
from .losses import loss_ce_logits, loss_repair_logits, total_loss

log = logging.getLogger(__name__)


@dataclass
class StepRecord:
    epoch: int
    step: int
    loss_repair: float
    loss_label: float
    loss_recon: float
    total: float


@dataclass
class TrainHistory:
    steps: list[StepRecord] = field(default_factory=list)
    epoch_loss: list[dict] = field(default_factory=list)

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "step", "loss_repair", "loss_label", "loss_recon", "total"])
            for s in self.steps:
                w.writerow([s.epoch, s.step, s.loss_repair, s.loss_label, s.loss_recon, s.total])


@dataclass
class Supervision:
    """What the repair task sees: the network input, the occupancy target and the breaks to sample near."""

    input_tree: VoxelVolume
    target_tree: VoxelVolume
    records: list[BreakRecord]


def select_supervision(tc: TrainingCase, mode: str, seed: int, min_nodes: int = 8) -> Supervision | None:
    if mode == "full":
        return Supervision(tc.corrupted, tc.case.complete_tree, tc.records)
    try:
        weak = make_weak_sample(tc.corrupted, min_nodes=min_nodes, seed=seed)
    except BranchNotBreakable:
        return None
    return Supervision(weak.input_tree, weak.target_tree, [weak.synthetic_record])


@dataclass
class StepData:
    inputs: FieldInputs
    repair: QueryBatch | None
    label: QueryBatch
    segment: QueryBatch


def build_step(tc: TrainingCase, sup: Supervision | None, cfg: TrainConfig, mcfg: ModelConfig, seed: int,
               cached_inputs: FieldInputs | None = None) -> StepData:
    """Inputs and query batches for one case. Identical for both supervision modes given ``sup``."""
    net_input = tc.corrupted if sup is None else sup.input_tree
    inputs = cached_inputs if cached_inputs is not None else prepare_inputs(
        net_input, cfg.n_surface, cfg.n_skeleton, mcfg.K, mcfg.r, seed=seed)
    repair = None
    if sup is not None and sup.records:
        repair = sample_repair_queries(sup.target_tree, sup.input_tree, sup.records, cfg.Q_r, cfg.p,
                                       seed=seed + 1, capsule_scale=cfg.capsule_scale)
    label = sample_label_queries(net_input, tc.case.tree_labels, cfg.Q_l, seed=seed + 2)
    segment = sample_segment_queries(tc.case.lung_mask, tc.case.segment_labels, cfg.Q_s, seed=seed + 3)
    return StepData(inputs, repair, label, segment)


def _t(a, dtype=torch.float32):
    return torch.as_tensor(np.asarray(a), dtype=dtype)


def case_losses(model: TopoFieldModel, data: StepData, cfg: TrainConfig):
    """(L_repair or None, L_label, L_recon) for one case."""
    fld = model.build_field(data.inputs)
    l_rep = None
    if data.repair is not None:
        h = model.embed(fld, _t(data.repair.coords))
        l_rep = loss_repair_logits(model.head_repair(h)[:, 0], _t(data.repair.targets),
                                   cfg.lambda_bce, cfg.lambda_dice)
    h = model.embed(fld, _t(data.label.coords))
    l_lab = loss_ce_logits(model.label_logits(h), _t(data.label.targets - 1, torch.long))
    h = model.embed(fld, _t(data.segment.coords))
    l_seg = loss_ce_logits(model.segment_logits(h), _t(data.segment.targets - 1, torch.long))
    return l_rep, l_lab, l_seg


def recorrupt_case(tc: TrainingCase, seed: int, min_nodes: int = 8) -> TrainingCase:
    corrupted, records = corrupt(tc.case.complete_tree, len(tc.records), min_nodes=min_nodes, seed=seed)
    if not records:
        return tc
    return TrainingCase(tc.case, corrupted, records)


def train(cfg: TrainConfig, mcfg: ModelConfig, cases: list[TrainingCase],
          progress=None) -> tuple[TopoFieldModel, TrainHistory]:
    if not cases:
        raise ValueError("no training cases")
    torch.manual_seed(cfg.seed)
    model = TopoFieldModel(mcfg)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate, betas=(0.9, 0.999), eps=1e-8)
    rng = np.random.default_rng(cfg.seed)
    history = TrainHistory()
    cache: dict[int, FieldInputs] = {}
    step = 0
    cases = list(cases)
    for epoch in range(cfg.epochs):
        if cfg.recorrupt and epoch > 0:
            # fresh breaks on the same trees, same break count per tree
            for i, tc in enumerate(cases):
                cases[i] = recorrupt_case(tc, int(rng.integers(2**31 - 1)), cfg.min_nodes)
            cache.clear()
        order = rng.permutation(len(cases))
        sums = np.zeros(4)
        n_steps = 0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            opt.zero_grad()
            parts = np.zeros(3)
            batch_total = torch.zeros(())
            for ci in batch:
                tc = cases[int(ci)]
                seed = int(rng.integers(2**31 - 1))
                sup = select_supervision(tc, cfg.supervision, seed, cfg.min_nodes)
                cached = None
                if cfg.supervision == "full":
                    if ci not in cache:
                        cache[ci] = prepare_inputs(tc.corrupted, cfg.n_surface, cfg.n_skeleton, mcfg.K, mcfg.r,
                                                   seed=cfg.seed + int(ci))
                    cached = cache[ci]
                data = build_step(tc, sup, cfg, mcfg, seed, cached)
                l_rep, l_lab, l_seg = case_losses(model, data, cfg)
                loss = total_loss(l_rep, l_lab, l_seg) / len(batch)
                vals = [0.0 if l_rep is None else l_rep.item(), l_lab.item(), l_seg.item()]
                if not np.isfinite(loss.item()):
                    raise FloatingPointError(
                        f"non-finite loss at step {step}: repair={vals[0]} label={vals[1]} recon={vals[2]}")
                loss.backward()
                parts += np.array(vals) / len(batch)
                batch_total = batch_total + loss.detach()
            opt.step()
            rec = StepRecord(epoch, step, *parts.tolist(), float(batch_total))
            history.steps.append(rec)
            sums += np.array([*parts, rec.total])
            n_steps += 1
            step += 1
        mean = sums / max(n_steps, 1)
        history.epoch_loss.append({"epoch": epoch, "loss_repair": float(mean[0]), "loss_label": float(mean[1]),
                                   "loss_recon": float(mean[2]), "total": float(mean[3])})
        log.info("epoch %d: total %.4f repair %.4f label %.4f recon %.4f", epoch, mean[3], *mean[:3])
        if progress is not None:
            progress(epoch, history.epoch_loss[-1])
    return model, history


def save_history(history: TrainHistory, path) -> None:
    history.save_csv(Path(path))
