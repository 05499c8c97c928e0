"""Command-line front end: synth, corrupt, train, infer, eval, weak-acc, bench."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .pipeline import ConfigError, load_config
from .voxel import VolumeFormatError

log = logging.getLogger("topofield")


class UsageError(Exception):
    """Bad arguments or inputs detected before any work starts (exit 2)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _existing(path, kind="file") -> Path:
    p = Path(path)
    ok = p.is_file() if kind == "file" else p.is_dir()
    if not ok:
        raise UsageError(f"{kind} not found: {p}")
    return p


def _config(args):
    overrides = {}
    if args.seed is not None:
        overrides = {"train": {"seed": args.seed}, "synth": {"train_seed": args.seed}}
    return load_config(_existing(args.config) if args.config else None, preset=args.preset, overrides=overrides)


def _seed(args, default=0) -> int:
    return default if args.seed is None else args.seed


def _write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2))


def cmd_synth(args) -> int:
    from .synthtree import generate_case, save_case

    cfg = _config(args)
    out = Path(args.out)
    start = _seed(args, cfg.synth.train_seed)
    for i in range(args.n):
        case = generate_case(cfg.synth.tree_spec(start + i))
        save_case(case, out / f"case_{start + i:05d}")
    print(f"wrote {args.n} cases to {out}")
    return 0


def cmd_corrupt(args) -> int:
    from .synthtree import load_case
    from .topobreak import corrupt
    from .voxel import count_components, write_volume

    case_dir = _existing(args.case, "dir")
    cfg = _config(args)
    case = load_case(case_dir)
    seed = _seed(args)
    rng = np.random.default_rng(seed)
    n = args.breaks if args.breaks is not None else int(rng.integers(cfg.synth.min_breaks, cfg.synth.max_breaks + 1))
    corrupted, records = corrupt(case.complete_tree, n, min_nodes=cfg.synth.min_nodes, seed=seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_volume(corrupted, out / "corrupted.vvol")
    _write_json(out / "breaks.json", [r.to_json() for r in records])
    print(f"{len(records)} breaks, NCC {count_components(case.complete_tree)} -> {count_components(corrupted)}")
    return 0


def cmd_train(args) -> int:
    from .neural import save_checkpoint
    from .pipeline import make_split, train

    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cases = make_split(cfg.synth, "train")
    t0 = time.perf_counter()
    model, history = train(cfg.train, cfg.model, cases,
                           progress=lambda e, l: log.info("epoch %d %s", e, l))
    history.save_csv(out / "history.csv")
    save_checkpoint(model, out / "model.tfck", extra={"run": cfg.to_json()})
    _write_json(out / "config.json", cfg.to_json())
    _write_json(out / "timing.json", {"train_seconds": time.perf_counter() - t0})
    print(f"trained {len(history.steps)} steps, final loss {history.epoch_loss[-1]['total']:.4f}")
    return 0


def cmd_infer(args) -> int:
    from .neural import load_checkpoint
    from .pipeline import infer_full
    from .pipeline.fixture import write_prediction
    from .synthtree import load_case
    from .voxel import read_volume

    ckpt = _existing(args.checkpoint)
    case_dir = _existing(args.case, "dir")
    corrupted_path = _existing(args.corrupted)
    cfg = _config(args)
    model, _ = load_checkpoint(ckpt)
    case = load_case(case_dir)
    corrupted = read_volume(corrupted_path)
    res = infer_full(model, corrupted, case.lung_mask, cfg.train.n_surface, cfg.train.n_skeleton,
                     seed=_seed(args))
    out = Path(args.out)
    write_prediction({"repair_mask": res.repair_mask, "repaired_tree": res.repaired_tree,
                      "labeled_tree": res.labeled_tree, "segment_volume": res.segment_volume}, out)
    _write_json(out / "timing.json", res.timings)
    print(f"repaired {int(res.repair_mask.mask.sum())} voxels in {res.timings['total']:.2f} s")
    return 0


def cmd_eval(args) -> int:
    from .pipeline import InferenceResult, evaluate_case
    from .pipeline.fixture import bundled_fixture, load_run

    if args.fixture:
        root = bundled_fixture()
        case_dir, corrupted_path, pred_dir = root / "case", root / "corrupted.vvol", root / "prediction"
    else:
        if not (args.case and args.corrupted and args.prediction):
            raise UsageError("eval needs --case, --corrupted and --prediction (or --fixture)")
        case_dir, corrupted_path, pred_dir = args.case, args.corrupted, args.prediction
    case_dir = _existing(case_dir, "dir")
    corrupted_path = _existing(corrupted_path)
    pred_dir = _existing(pred_dir, "dir")
    case, corrupted, pred = load_run(case_dir, corrupted_path, pred_dir)
    res = InferenceResult(pred["repaired_tree"], pred["repair_mask"], pred["labeled_tree"], pred["segment_volume"])
    report = evaluate_case(res, case, corrupted)
    report.save(args.out)
    print(json.dumps({k: getattr(report, k) for k in ("cf1", "dmf1", "gdice", "ncc")}))
    return 0


def cmd_weak_acc(args) -> int:
    from .metrics import weak_accuracy_monte_carlo
    from .pipeline.data import corrupt_case
    from .synthtree import generate_case, load_case
    from .voxel import read_volume

    cfg = _config(args)
    seed = _seed(args)
    if args.case:
        case = load_case(_existing(args.case, "dir"))
        corrupted = read_volume(_existing(args.corrupted)) if args.corrupted else \
            corrupt_case(case, cfg.synth, seed).corrupted
    else:
        case = generate_case(cfg.synth.tree_spec(seed))
        corrupted = corrupt_case(case, cfg.synth, seed).corrupted
    est = weak_accuracy_monte_carlo(case.complete_tree, corrupted, args.queries, seed=seed)
    print(f"analytic {est.analytic:.6f}  empirical {est.empirical:.6f}  "
          f"|T|={est.tree_voxels} rho_d={est.rho_d:.6f} |Q|={est.query_space_voxels} n={est.n_queries}")
    return 0


def cmd_bench(args) -> int:
    import torch

    from .neural import TopoFieldModel, prepare_inputs
    from .pipeline import infer_full, make_split
    from .pointcloud import extract_skeleton_points, extract_surface_points, knn_indices
    from .skeleton import thin_3d
    from .voxel import connected_components

    cfg = load_config(_existing(args.config) if args.config else None, preset="desk")
    torch.manual_seed(_seed(args))
    tc = make_split(replace(cfg.synth, n_train=1), "train")[0]
    vol = tc.corrupted

    def timed(fn, repeat=3):
        best = np.inf
        for _ in range(repeat):
            t = time.perf_counter()
            fn()
            best = min(best, time.perf_counter() - t)
        return best

    surf = extract_surface_points(vol, cfg.train.n_surface)
    skel = extract_skeleton_points(vol, cfg.train.n_skeleton)
    model = TopoFieldModel(replace(cfg.model, seed=_seed(args)))
    timings = {
        "thin_3d": timed(lambda: thin_3d(tc.case.complete_tree)),
        "connected_components": timed(lambda: connected_components(vol, 26)),
        "knn": timed(lambda: knn_indices(surf, skel, cfg.model.K)),
        "prepare_inputs": timed(lambda: prepare_inputs(vol, cfg.train.n_surface, cfg.train.n_skeleton,
                                                       cfg.model.K, cfg.model.r)),
        "infer_full": timed(lambda: infer_full(model, vol, tc.case.lung_mask, cfg.train.n_surface,
                                               cfg.train.n_skeleton), repeat=1),
        "dims": list(vol.dims),
        "threads": torch.get_num_threads(),
    }
    _write_json(args.out, timings)
    print(json.dumps(timings))
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "corrupt": cmd_corrupt,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "weak-acc": cmd_weak_acc,
    "bench": cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="TOML file layered over the preset")
    common.add_argument("--preset", choices=("desk", "paper"), default="desk")
    common.add_argument("--seed", type=int, help="seed override")

    parser = _Parser(prog="topofield", description="Tree topology repair with tri-plane implicit fields.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="generate synthetic trees")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=1)

    p = sub.add_parser("corrupt", parents=[common], help="apply TopoBreak to a case")
    p.add_argument("--case", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--breaks", type=int)

    p = sub.add_parser("train", parents=[common], help="train on the configured synthetic split")
    p.add_argument("--out", required=True)

    p = sub.add_parser("infer", parents=[common], help="repair, label and segment one case")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--case", required=True, help="case directory (lung mask is read from it)")
    p.add_argument("--corrupted", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", parents=[common], help="score a prediction against a case")
    p.add_argument("--case")
    p.add_argument("--corrupted")
    p.add_argument("--prediction")
    p.add_argument("--fixture", action="store_true", help="use the bundled oracle fixture")
    p.add_argument("--out", default="metrics.json")

    p = sub.add_parser("weak-acc", parents=[common], help="weak-supervision accuracy estimate vs Monte Carlo")
    p.add_argument("--case")
    p.add_argument("--corrupted")
    p.add_argument("--queries", type=int, default=1_000_000)

    p = sub.add_parser("bench", parents=[common], help="time the core stages on the desk preset")
    p.add_argument("--out", default="timing.json")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("missing command")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        return COMMANDS[args.command](args)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"topofield: error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, VolumeFormatError) as exc:
        print(f"topofield: error: {_one_line(exc)}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure: keep the diagnostic to one line
        print(f"topofield: {type(exc).__name__}: {_one_line(exc)}", file=sys.stderr)
        return 1


def _one_line(exc) -> str:
    return " ".join(str(exc).split())


if __name__ == "__main__":
    sys.exit(main())
