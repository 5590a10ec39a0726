"""Command line entry point.

    cglo <subcommand> [--config PATH] [--seed N] [--out DIR] [key=value ...]

Every subcommand writes into its run directory only, starting with
``config.resolved`` (the fully merged configuration).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import numerics as nx
from .config import ConfigError, RunConfig, load_config
from .data import (DataError, PatchDatasetManifest, SceneRecord, decode_image, encode_image,
                   load_annotations, load_scene, save_annotations)
from .fixture import make_fixture
from .generator import build_graph, forward, init_params
from .synthesis import augment_scene, reports_to_csv, switch_condition
from .trainer import (CheckpointError, TrainingDiverged, checkpoint_path, invert, load_checkpoint,
                      save_checkpoint, train)

log = logging.getLogger("cglo")

SUBCOMMANDS = ("make-fixture", "train", "invert", "synth", "augment", "gradcheck")


class InputError(ValueError):
    pass


def _require(value: str, key: str) -> Path:
    if not value:
        raise InputError(f"{key} must be set")
    return Path(value)


def cmd_make_fixture(cfg: RunConfig, out: Path) -> int:
    g, f = cfg.generator, cfg.fixture
    manifest, records = make_fixture(out, f.n_patches, g.output_size, cfg.seed, g.channels,
                                     f.n_scenes, f.scene_size, f.fg_fraction)
    print(f"wrote {len(manifest.entries)} patches and {len(records)} scenes to {out}")
    return 0


def cmd_train(cfg: RunConfig, out: Path) -> int:
    manifest = PatchDatasetManifest.load(_require(cfg.paths.manifest, "paths.manifest"))
    gen_config, train_config = cfg.generator_config(), cfg.train_config()
    if manifest.size != gen_config.output_size:
        raise InputError(f"manifest patch size {manifest.size} != generator.output_size {gen_config.output_size}")
    ids, patches, labels = manifest.load_patches()
    every = cfg.train.checkpoint_every

    def on_epoch(epoch, params, table, history):
        if every and epoch % every == 0 and epoch != train_config.epochs:
            save_checkpoint(params, table, history, checkpoint_path(out, epoch))

    params, table, history = train(patches, labels, gen_config, train_config, ids=ids, callback=on_epoch)
    path = save_checkpoint(params, table, history, checkpoint_path(out, train_config.epochs))
    (out / "loss.csv").write_text(history.to_csv())
    final = history.mean_loss[-1] if history.mean_loss else float("nan")
    print(f"checkpoint {path} epochs={train_config.epochs} final_loss={final!r}")
    return 0


def cmd_invert(cfg: RunConfig, out: Path) -> int:
    params, _, _ = load_checkpoint(_require(cfg.paths.checkpoint, "paths.checkpoint"))
    image = decode_image(_require(cfg.paths.image, "paths.image"))
    ic = cfg.invert
    z, loss = invert(params, image, ic.condition, ic.steps, ic.lr_z, seed=cfg.seed,
                     projection=cfg.train.projection)
    (out / "latent.json").write_text(json.dumps(
        {"code": [float(v) for v in z], "condition": ic.condition, "loss": float(loss)}, indent=1) + "\n")
    encode_image(forward(params, z, ic.condition), out / "reconstruction.png")
    print(f"inversion loss={loss!r}")
    return 0


def _read_latent(path: Path) -> tuple[np.ndarray, int]:
    try:
        doc = json.loads(path.read_text())
        return np.array([float(v) for v in doc["code"]]), int(doc["condition"])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise InputError(f"{path}: unreadable latent file ({exc})") from exc


def cmd_synth(cfg: RunConfig, out: Path) -> int:
    params, table, _ = load_checkpoint(_require(cfg.paths.checkpoint, "paths.checkpoint"))
    s = cfg.synth
    if cfg.paths.latent:
        z, source_c = _read_latent(Path(cfg.paths.latent))
    elif s.sample_id:
        key = next((i for i in table.ids if str(i) == s.sample_id), None)
        if key is None:
            raise InputError(f"sample id {s.sample_id!r} not in checkpoint")
        r = table.row(key)
        z, source_c = table.codes[r], int(table.conditions[r])
    else:
        raise InputError("set paths.latent or synth.sample_id")
    if source_c != s.from_condition:
        log.warning("latent was fitted under condition %d, synth.from_condition is %d", source_c, s.from_condition)
    encode_image(forward(params, z, s.from_condition), out / "source.png")
    encode_image(switch_condition(params, z, s.from_condition, s.to_condition), out / "switched.png")
    print(f"wrote {out / 'switched.png'}")
    return 0


def cmd_augment(cfg: RunConfig, out: Path) -> int:
    params, _, _ = load_checkpoint(_require(cfg.paths.checkpoint, "paths.checkpoint"))
    ann_path = _require(cfg.paths.annotations, "paths.annotations")
    records = load_annotations(ann_path)
    plan, invert_cfg = cfg.augment_plan(), cfg.invert_config()
    out_records, reports, summary = [], [], []
    for rec in records:
        scene = load_scene(ann_path.parent, rec)
        if scene.pixels.shape[0] != params.config.channels:
            raise InputError(f"{rec.image}: {scene.pixels.shape[0]} channels, generator makes {params.config.channels}")
        new_scene, boxes, report = augment_scene(params, scene, rec.boxes, plan, invert_cfg)
        encode_image(new_scene.pixels, out / rec.image)
        out_records.append(SceneRecord(rec.image, rec.width, rec.height, boxes))
        reports.append(report)
        summary.append({"scene_id": rec.scene_id, "boxes_in": len(rec.boxes), "boxes_out": len(boxes),
                        "placed": report.placed, "rejection_limited": report.rejection_limited})
        if report.rejection_limited:
            print(f"warning: {rec.scene_id} rejection-limited at {len(boxes)} boxes", file=sys.stderr)
    save_annotations(out_records, out / "annotations.json")
    (out / "report.csv").write_text(reports_to_csv(reports))
    (out / "summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    print(f"augmented {len(records)} scenes, placed {sum(r.placed for r in reports)} objects")
    return 0


def cmd_gradcheck(cfg: RunConfig, out: Path) -> int:
    gen_config = cfg.generator_config()
    params = init_params(gen_config)
    rng = np.random.default_rng([cfg.seed, 11])
    z = rng.normal(0, 1 / np.sqrt(gen_config.d), gen_config.d)
    c = float(rng.integers(0, 2))
    target = rng.uniform(-1, 1, gen_config.patch_shape)
    gc = cfg.gradcheck

    def loss(leaves):
        return nx.l1_loss(build_graph(gen_config, leaves, leaves["z"], c), target)

    report = nx.finite_diff_check(loss, {**params.tensors, "z": z}, h=gc.h, tol=gc.tol,
                                  n_coords=gc.coords, rng=rng)
    verdict = "PASS" if report.passed else "FAIL"
    lines = [f"{ch.name}{list(ch.index)} analytic={ch.analytic!r} numeric={ch.numeric!r} rel={ch.rel_error:.3e}"
             for ch in report.checks]
    (out / "gradcheck.txt").write_text("\n".join(lines + [f"max_rel_error={report.max_rel_error!r} {verdict}"]) + "\n")
    print(f"max_rel_error={report.max_rel_error:.3e} {verdict}")
    return 0 if report.passed else 1


COMMANDS = {
    "make-fixture": cmd_make_fixture,
    "train": cmd_train,
    "invert": cmd_invert,
    "synth": cmd_synth,
    "augment": cmd_augment,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cglo", description="Conditional GLO training and scene augmentation")
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--seed", type=int, help="overrides the config seed")
    parser.add_argument("--out", help="run directory (default runs/<subcommand>)")
    parser.add_argument("overrides", nargs="*", metavar="key=value")
    return parser


def _error(kind: str, message: str) -> int:
    message = " ".join(str(message).split())
    print(f"cglo: error: {kind}: {message}", file=sys.stderr)
    return 1


def main(argv=None) -> int:
    args = build_parser().parse_intermixed_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = list(args.overrides)
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        cfg = load_config(args.config, overrides)
        out = Path(args.out) if args.out else Path("runs") / args.subcommand
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.resolved").write_text(cfg.to_text())
        return COMMANDS[args.subcommand](cfg, out)
    except (ConfigError, DataError, CheckpointError, InputError, TrainingDiverged, ValueError) as exc:
        return _error(type(exc).__name__, exc)
    except OSError as exc:
        return _error(type(exc).__name__, f"{exc.filename}: {exc.strerror}" if exc.filename else exc)


if __name__ == "__main__":
    sys.exit(main())
