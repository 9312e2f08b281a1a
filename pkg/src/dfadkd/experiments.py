"""Desk-scale experiment drivers shared by the acceptance suite and scripts/."""
from __future__ import annotations

import dataclasses
import json
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

from dfadkd import data, harness, quantization, train
from dfadkd.checkpoint import load_model, save_model
from dfadkd.config import ExperimentConfig, load_config

CONFIG_DIR = Path(__file__).resolve().parents[2] / "configs"


def desk_config(name: str = "desk", **overrides) -> ExperimentConfig:
    cfg = load_config(CONFIG_DIR / f"{name}.json")
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


@dataclass
class Setup:
    teacher: train.Model
    test: data.Dataset
    teacher_acc: float
    seconds: float


def prepare(cfg: ExperimentConfig, cache_dir=None, data_seed: int = 0, teacher_seed: int = 0) -> Setup:
    """Synthesize data, train the teacher and keep only the test split.

    With ``cache_dir`` the teacher checkpoint and test split are reused
    across calls; the training split is never written there.
    """
    cache = Path(cache_dir) if cache_dir is not None else None
    if cache is not None and (cache / "teacher.ckpt").exists():
        teacher = load_model(cache / "teacher.ckpt")
        test = data.load_split(cache, "test")
        meta = json.loads((cache / "teacher.json").read_text())
        return Setup(teacher, test, meta["test_acc"], meta["seconds"])
    t0 = time.perf_counter()
    tr, te = data.make_synthetic_dataset(data_seed, cfg.n_classes, cfg.image_size, cfg.image_size,
                                         cfg.n_train, cfg.n_test, cfg.data_noise)
    from dfadkd.networks import build_classifier

    spec = build_classifier((cfg.image_size, cfg.image_size, 3), cfg.n_classes, cfg.teacher_width, cfg.depth)
    params, acc = harness.train_teacher(tr, spec, cfg.teacher_epochs, teacher_seed, te, cfg.teacher_batch_size,
                                        cfg.teacher_lr, cfg.nesterov_momentum, cfg.bn_momentum)
    del tr
    setup = Setup(train.Model(spec, params), te, acc, time.perf_counter() - t0)
    if cache is not None:
        cache.mkdir(parents=True, exist_ok=True)
        save_model(cache / "teacher.ckpt", setup.teacher, {"role": "teacher", "test_acc": acc})
        te.save(cache / "test.npz")
        (cache / "teacher.json").write_text(json.dumps({"test_acc": acc, "seconds": setup.seconds}))
    return setup


@dataclass
class KDResult:
    config: ExperimentConfig
    records: list
    seconds: float
    students: list = field(repr=False)
    generators: list = field(repr=False)

    @property
    def final_acc(self) -> list:
        return self.records[-1]["test_acc"]

    @property
    def best_final_acc(self) -> float:
        return max(self.final_acc)

    @property
    def final_proxy_kd(self) -> float:
        return self.records[-1]["kd"]


def distill(setup: Setup, cfg: ExperimentConfig) -> KDResult:
    """One data-free adversarial KD run from fresh students and generators."""
    from dfadkd.networks import build_classifier, build_generator

    gspec = build_generator(cfg.latent_dim, cfg.image_size, cfg.image_size, cfg.generator_channels)
    sspec = build_classifier((cfg.image_size, cfg.image_size, 3), cfg.n_classes, cfg.student_width, cfg.depth)
    gens = train.init_models(gspec, cfg.n_generators, cfg.seed + 7919)
    students = train.init_models(sspec, cfg.n_students, cfg.seed + 104729)
    t0 = time.perf_counter()
    students, gens, metrics = train.run_adversarial_kd(setup.teacher, students, gens, cfg.train_config(),
                                                       setup.test)
    return KDResult(cfg, metrics.records, time.perf_counter() - t0, students, gens)


def quantization_row(setup: Setup, cfg: ExperimentConfig) -> dict:
    """Float, DF-Q 8/8, DF-Q 4/8 and DF-QAT-KD 4/8 accuracies for one seed.

    One warmed-up generator serves both DF-Q calibrations and seeds the
    quantization-aware run.
    """
    from dfadkd.networks import build_generator

    t0 = time.perf_counter()
    tc = cfg.train_config()
    gspec = build_generator(cfg.latent_dim, cfg.image_size, cfg.image_size, cfg.generator_channels)
    gens = train.init_models(gspec, 1, cfg.seed + 7919)
    train.warmup_generators(gens, setup.teacher, dataclasses.replace(tc, n_generators=1))
    row = {"float": harness.evaluate(setup.teacher.spec, setup.teacher.params, setup.test)}
    for wb in (8, 4):
        _, row[f"dfq_{wb}"] = quantization.df_quantize(setup.teacher, gens, wb, cfg.activation_bits,
                                                       cfg.calib_batches, cfg.batch_size, cfg.seed, setup.test)
    qat = dataclasses.replace(tc, lr_student=cfg.qat_lr_student, epochs=cfg.qat_epochs, n_students=1,
                              n_generators=1, warmup_epochs=0)
    student, metrics = quantization.df_qat_kd(setup.teacher, gens, qat, 4, cfg.activation_bits, setup.test,
                                              cfg.calib_batches)
    row["qat_4"] = metrics.records[-1]["test_acc"][0]
    row["seconds"] = time.perf_counter() - t0
    return row


def median(values) -> float:
    return float(statistics.median(values))
