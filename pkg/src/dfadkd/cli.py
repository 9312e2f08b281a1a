"""Command-line entry point.

Every subcommand takes ``--config``, ``--seed``, ``--out-dir`` and repeated
``--override key=value``; it writes ``config.resolved`` and ``metrics.jsonl``
to the output directory, plus its checkpoints.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from dfadkd import data, harness, imaging, quantization, train
from dfadkd.checkpoint import CheckpointError, load_model, save_model
from dfadkd.config import ConfigError, ExperimentConfig, load_config, save_resolved
from dfadkd.networks import build_classifier, build_generator

log = logging.getLogger("dfadkd")


class UsageError(Exception):
    pass


def write_metrics(path, records):
    with open(path, "w") as f:
        for r in records:
            f.write(json.dumps(r, sort_keys=True) + "\n")


def read_metrics(path):
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def _require(cfg, key):
    value = getattr(cfg, key)
    if not value:
        raise UsageError(f"config key {key!r} must be set for this command")
    return value


def _generator_spec(cfg: ExperimentConfig):
    return build_generator(cfg.latent_dim, cfg.image_size, cfg.image_size, cfg.generator_channels)


def _load_generators(cfg: ExperimentConfig, count: int):
    """Generators from ``generator_path`` (comma separated) or fresh ones."""
    if cfg.generator_path:
        paths = cfg.generator_path.split(",")
        gens = [load_model(p) for p in paths]
        if len(gens) != count:
            raise UsageError(f"expected {count} generator checkpoints, got {len(gens)}")
        return gens, True
    return train.init_models(_generator_spec(cfg), count, cfg.seed + 7919), False


def cmd_gen_data(cfg, out):
    tr, te = data.make_synthetic_dataset(cfg.seed, cfg.n_classes, cfg.image_size, cfg.image_size,
                                         cfg.n_train, cfg.n_test, cfg.data_noise)
    data.save_splits(out / "data", tr, te)
    return [{"phase": "data", "epoch": 0, "n_train": len(tr), "n_test": len(te),
             "train_histogram": tr.labels.sum(axis=0).astype(int).tolist(),
             "test_histogram": te.labels.sum(axis=0).astype(int).tolist()}]


def cmd_train_teacher(cfg, out):
    data_dir = _require(cfg, "data_dir")
    tr, te = data.load_split(data_dir, "train"), data.load_split(data_dir, "test")
    spec = build_classifier((cfg.image_size, cfg.image_size, 3), cfg.n_classes, cfg.teacher_width, cfg.depth)
    records = []

    def on_epoch(epoch, loss, params):
        records.append({"phase": "teacher", "epoch": epoch, "loss": loss,
                        "test_acc": harness.evaluate(spec, params, te)})

    params, acc = harness.train_teacher(tr, spec, cfg.teacher_epochs, cfg.seed, te, cfg.teacher_batch_size,
                                        cfg.teacher_lr, cfg.nesterov_momentum, cfg.bn_momentum, on_epoch)
    save_model(out / "teacher.ckpt", train.Model(spec, params), {"role": "teacher", "test_acc": acc})
    return records


def cmd_warmup_gen(cfg, out):
    teacher = load_model(_require(cfg, "teacher_path"))
    gens = train.init_models(_generator_spec(cfg), cfg.n_generators, cfg.seed + 7919)
    _, metrics = train.warmup_generators(gens, teacher, cfg.train_config())
    for j, g in enumerate(gens):
        save_model(out / f"generator_{j}.ckpt", g, {"role": "generator"})
    return metrics.records


def cmd_distill(cfg, out):
    teacher = load_model(_require(cfg, "teacher_path"))
    test = data.load_split(_require(cfg, "data_dir"), "test")
    gens, warm = _load_generators(cfg, cfg.n_generators)
    spec = build_classifier((cfg.image_size, cfg.image_size, 3), cfg.n_classes, cfg.student_width, cfg.depth)
    students = train.init_models(spec, cfg.n_students, cfg.seed + 104729)
    tc = cfg.train_config()
    if warm:
        tc = dataclasses.replace(tc, warmup_epochs=0)
    students, gens, metrics = train.run_adversarial_kd(teacher, students, gens, tc, test)
    for i, s in enumerate(students):
        save_model(out / f"student_{i}.ckpt", s, {"role": "student"})
    for j, g in enumerate(gens):
        save_model(out / f"generator_{j}.ckpt", g, {"role": "generator"})
    return metrics.records


def cmd_quantize(cfg, out):
    teacher = load_model(_require(cfg, "teacher_path"))
    test = data.load_split(_require(cfg, "data_dir"), "test")
    gens, warm = _load_generators(cfg, 1)
    if not warm:
        raise UsageError("quantize needs a warmed-up generator (generator_path)")
    model, acc = quantization.df_quantize(teacher, gens, cfg.weight_bits, cfg.activation_bits,
                                          cfg.calib_batches, cfg.batch_size, cfg.seed, test)
    save_model(out / "quantized.ckpt", model, {"role": "df-q", "test_acc": acc})
    return [{"phase": "quantize", "epoch": 0, "weight_bits": cfg.weight_bits,
             "activation_bits": cfg.activation_bits,
             "float_acc": harness.evaluate(teacher.spec, teacher.params, test), "test_acc": acc}]


def cmd_qat_distill(cfg, out):
    teacher = load_model(_require(cfg, "teacher_path"))
    test = data.load_split(_require(cfg, "data_dir"), "test")
    gens, warm = _load_generators(cfg, cfg.n_generators)
    tc = dataclasses.replace(cfg.train_config(), lr_student=cfg.qat_lr_student, epochs=cfg.qat_epochs,
                             n_students=1, warmup_epochs=0 if warm else cfg.warmup_epochs)
    student, metrics = quantization.df_qat_kd(teacher, gens, tc, cfg.weight_bits, cfg.activation_bits,
                                              test, cfg.calib_batches)
    save_model(out / "qat_student.ckpt", student, {"role": "df-qat-kd"})
    return metrics.records


def cmd_eval(cfg, out):
    model = load_model(_require(cfg, "eval_checkpoint"))
    test = data.load_split(_require(cfg, "data_dir"), "test")
    acc = harness.evaluate(model.spec, model.params, test, model.qconfig)
    print(f"accuracy {acc:.4f}")
    return [{"phase": "eval", "epoch": 0, "checkpoint": cfg.eval_checkpoint, "test_acc": acc}]


def cmd_dump_samples(cfg, out):
    gens, warm = _load_generators(cfg, 1)
    if not warm:
        raise UsageError("dump-samples needs a generator checkpoint (generator_path)")
    gen = gens[0]
    z = np.random.default_rng(cfg.seed).standard_normal((cfg.n_dump_samples, gen.spec.input_shape[0]))
    images = train.sample_images(gen, z.astype(np.float32))
    labels = None
    if cfg.teacher_path:
        teacher = load_model(cfg.teacher_path)
        labels = harness.predict_logits(teacher.spec, teacher.params, images).argmax(axis=1)
        images = images[np.argsort(labels, kind="stable")]
    n_cols = int(np.ceil(np.sqrt(len(images))))
    imaging.write_ppm(out / "samples.ppm", imaging.make_grid(images, n_cols))
    record = {"phase": "samples", "epoch": 0, "n": len(images), "min": float(images.min()),
              "max": float(images.max())}
    if labels is not None:
        record["class_histogram"] = np.bincount(labels, minlength=cfg.n_classes).tolist()
    return [record]


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-teacher": cmd_train_teacher,
    "warmup-gen": cmd_warmup_gen,
    "distill": cmd_distill,
    "quantize": cmd_quantize,
    "qat-distill": cmd_qat_distill,
    "eval": cmd_eval,
    "dump-samples": cmd_dump_samples,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="dfadkd", description="Data-free adversarial KD and quantization")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat JSON config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out-dir", default=None, help="output directory (default runs/<command>)")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config, args.override, args.seed)
    except ConfigError as exc:
        print(f"dfadkd: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out_dir or Path("runs") / args.command)
    out.mkdir(parents=True, exist_ok=True)
    save_resolved(out / "config.resolved", cfg)
    t0 = time.perf_counter()
    try:
        records = COMMANDS[args.command](cfg, out)
    except (UsageError, FileNotFoundError, CheckpointError) as exc:
        print(f"dfadkd {args.command}: {exc}", file=sys.stderr)
        return 1
    write_metrics(out / "metrics.jsonl", records)
    (out / "timing.json").write_text(json.dumps({"seconds": time.perf_counter() - t0}) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
