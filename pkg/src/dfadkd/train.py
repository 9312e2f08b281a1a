"""Data-free adversarial KD: generator warm-up, maximization and minimization steps."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, fields
from typing import Callable, Optional

import numpy as np

from dfadkd import autodiff as ad
from dfadkd import losses, optim
from dfadkd.data import Dataset
from dfadkd.networks import ModelSpec, Params, apply, forward, init_params, update_running_stats

log = logging.getLogger(__name__)


class TrainingDivergedError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    alpha: float = 0.1
    tau: float = 1.0
    lam: float = 0.0
    batch_size: int = 128
    n_generators: int = 1
    n_students: int = 1
    gen_interval: int = 1
    epochs: int = 60
    batches_per_epoch: int = 50
    warmup_epochs: int = 20
    latent_dim: int = 512
    lr_generator: float = 1e-3
    lr_warmup: float = 1e-3
    lr_student: float = 0.1
    adam_beta1: float = 0.5
    nesterov_momentum: float = 0.9
    bn_momentum: float = 0.9
    seed: int = 0
    use_bn_stat: bool = True
    use_instance_entropy: bool = True
    use_batch_entropy: bool = True
    teacher_bn_mode: str = "running"
    # student normalization while generators ascend; "batch" uses each generator's own batch
    student_bn_mode: str = "running"

    def __post_init__(self):
        self.validate()

    def validate(self):
        bad = []
        if self.gen_interval < 1:
            bad.append("gen_interval")
        if self.n_generators < 1:
            bad.append("n_generators")
        if self.n_students < 1:
            bad.append("n_students")
        if self.batch_size < self.n_generators:
            bad.append("batch_size")
        if self.alpha < 0:
            bad.append("alpha")
        if self.tau <= 0:
            bad.append("tau")
        for key in ("teacher_bn_mode", "student_bn_mode"):
            if getattr(self, key) not in ("running", "batch"):
                bad.append(key)
        if min(self.epochs, self.warmup_epochs) < 0 or self.batches_per_epoch < 1:
            bad.append("epochs/warmup_epochs/batches_per_epoch")
        if bad:
            raise ValueError(f"invalid train config values: {', '.join(bad)}")

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class Model:
    """A network plus its parameters; ``qconfig`` makes the forward pass fake-quantized."""

    spec: ModelSpec
    params: Params
    qconfig: object = None


@dataclass
class RunMetrics:
    records: list = field(default_factory=list)
    wall_clock: list = field(default_factory=list)

    def add(self, record: dict, seconds: float):
        record = dict(record, epoch=len(self.records))
        self.records.append(record)
        self.wall_clock.append(seconds)

    def last(self, phase="main"):
        for r in reversed(self.records):
            if r["phase"] == phase:
                return r
        return None


class LatentSource:
    """The only data source on the training path: standard normal latent noise."""

    def __init__(self, seed_seq, latent_dim: int):
        self.rng = np.random.default_rng(seed_seq)
        self.latent_dim = latent_dim

    def sample(self, n: int) -> np.ndarray:
        return self.rng.standard_normal((n, self.latent_dim)).astype(np.float32)


def init_models(spec: ModelSpec, count: int, seed: int) -> list:
    """``count`` models of one spec with independent initializations."""
    seeds = np.random.SeedSequence(seed).generate_state(count)
    return [Model(spec, init_params(spec, int(s))) for s in seeds]


def apply_model(model: Model, x: ad.Node, mode: str, bind: Optional[str] = None):
    if model.qconfig is not None:
        from dfadkd.quantization import fake_quant_apply
        return fake_quant_apply(model.spec, model.params, model.qconfig, x, bind)
    return apply(model.spec, model.params, x, mode, bind)


def sample_images(generator: Model, z: np.ndarray) -> np.ndarray:
    """Generator output for latent batch ``z`` (batch-statistics normalization)."""
    return forward(generator.spec, generator.params, z, "train")[0]


def _bn_mode(setting):
    return "infer" if setting == "running" else "train"


def _check_loss(node, it, breakdown):
    if not np.isfinite(node.value).all():
        raise TrainingDivergedError(f"non-finite loss at iteration {it}: {breakdown.as_dict()}")


def _generator_pass(gen: Model, teacher: Model, z: np.ndarray, config: TrainConfig):
    g = ad.Graph()
    x, gen_stats = apply(gen.spec, gen.params, g.constant(z), "train", bind="")
    t_logits, t_stats = apply_model(teacher, x, _bn_mode(config.teacher_bn_mode))
    probs = ad.softmax_logs(t_logits)[0]
    aux, breakdown = losses.aux_loss(t_stats, teacher.params.running, probs, config.use_bn_stat,
                                     config.use_instance_entropy, config.use_batch_entropy)
    return g, x, gen_stats, t_logits, aux, breakdown


def warmup_step(gen: Model, teacher: Model, state, source: LatentSource, config: TrainConfig,
                it: int = 0) -> losses.LossBreakdown:
    """One descent step of a generator on the auxiliary loss alone."""
    z = source.sample(config.batch_size)
    g, _, gen_stats, _, aux, breakdown = _generator_pass(gen, teacher, z, config)
    _check_loss(aux, it, breakdown)
    optim.adam_step(state, gen.params.tensors, g.backward(aux), config.lr_warmup)
    update_running_stats(gen.params, gen_stats, config.bn_momentum)
    return breakdown


def warmup_generators(generators: list, teacher: Model, config: TrainConfig, sources=None,
                      states=None, metrics: RunMetrics = None):
    """Train each generator on the auxiliary loss for ``warmup_epochs`` epochs (constant lr)."""
    if not teacher.spec.bn_layers():
        raise ValueError("warm-up needs a teacher with at least one batchnorm layer")
    if sources is None:
        sources = [LatentSource(s, config.latent_dim)
                   for s in np.random.SeedSequence(config.seed).spawn(len(generators))]
    if states is None:
        states = [optim.adam(config.adam_beta1) for _ in generators]
    metrics = metrics if metrics is not None else RunMetrics()
    it = 0
    for epoch in range(config.warmup_epochs):
        t0 = time.perf_counter()
        acc = []
        for _ in range(config.batches_per_epoch):
            it += 1
            for gen, state, src in zip(generators, states, sources):
                acc.append(warmup_step(gen, teacher, state, src, config, it))
        metrics.add({"phase": "warmup", **_mean_breakdown(acc)}, time.perf_counter() - t0)
        log.info("warm-up epoch %d: %s", epoch, metrics.records[-1])
    return generators, metrics


def _mean_breakdown(items):
    if not items:
        return {k: None for k in ("bn_stat", "instance_entropy", "batch_entropy", "aux_total")}
    return {k: float(np.mean([getattr(b, k) for b in items]))
            for k in ("bn_stat", "instance_entropy", "batch_entropy", "aux_total")}


def maximization_step(generators: list, students: list, teacher: Model, config: TrainConfig,
                      sources: list, states: list, lr: float, it: int = 0) -> list:
    """Ascend each generator on mean KD divergence minus alpha * aux loss.

    Students and teacher are untouched.  Returns one breakdown per generator.
    """
    out = []
    for gen, src, state in zip(generators, sources, states):
        z = src.sample(config.batch_size)
        g, x, gen_stats, t_logits, aux, breakdown = _generator_pass(gen, teacher, z, config)
        s_logits = [apply_model(s, x, _bn_mode(config.student_bn_mode))[0] for s in students]
        objective, pair = losses.adversarial_objective(t_logits, s_logits, aux, config.alpha, config.tau)
        breakdown.pair_kd = pair
        breakdown.kd_divergence = float(np.mean(pair))
        breakdown.adversarial_total = float(objective.value)
        _check_loss(objective, it, breakdown)
        grads = g.backward(ad.mul(objective, -1.0))
        optim.adam_step(state, gen.params.tensors, grads, lr)
        update_running_stats(gen.params, gen_stats, config.bn_momentum)
        out.append(breakdown)
    return out


def synthetic_batch(generators: list, sources: list, batch_size: int) -> np.ndarray:
    """``floor(B / G)`` samples from each generator, concatenated."""
    if batch_size < len(generators):
        raise ValueError(f"batch size {batch_size} smaller than generator count {len(generators)}")
    b = batch_size // len(generators)
    return np.concatenate([sample_images(gen, src.sample(b)) for gen, src in zip(generators, sources)])


def minimization_step(generators: list, students: list, teacher: Model, config: TrainConfig,
                      sources: list, states: list, lr: float, it: int = 0):
    """Descend each student on KD divergence over one combined synthetic batch.

    Returns ``(kd per student, teacher-agreement per student)``.
    """
    x = synthetic_batch(generators, sources, config.batch_size)
    t_logits = forward(teacher.spec, teacher.params, x, "infer")[0] if teacher.qconfig is None \
        else apply_model(teacher, ad.Graph().constant(x), "infer")[0].value
    t_label = t_logits.argmax(axis=1)
    kds, agree = [], []
    for student, state in zip(students, states):
        g = ad.Graph()
        s_logits, stats = apply_model(student, g.constant(x), "train", bind="")
        loss = losses.kd_loss(g.constant(t_logits), s_logits, config.tau)
        if not np.isfinite(loss.value):
            raise TrainingDivergedError(f"non-finite student loss at iteration {it}")
        optim.nesterov_step(state, student.params.tensors, g.backward(loss), lr)
        update_running_stats(student.params, stats, config.bn_momentum)
        kds.append(float(loss.value))
        agree.append(float(np.mean(s_logits.value.argmax(axis=1) == t_label)))
    return kds, agree


def student_accuracy(student: Model, dataset: Dataset) -> float:
    from dfadkd.harness import evaluate
    return evaluate(student.spec, student.params, dataset, student.qconfig)


def run_adversarial_kd(teacher: Model, students: list, generators: list, config: TrainConfig,
                       eval_data: Optional[Dataset] = None,
                       epoch_hook: Optional[Callable] = None):
    """Warm-up followed by ``epochs`` x ``batches_per_epoch`` minimax iterations.

    ``eval_data`` must be a held-out test split; it is used for reporting only.
    ``epoch_hook(epoch, students, generators, sources)`` runs before every main
    epoch.  Returns ``(students, generators, metrics)``.
    """
    if eval_data is not None and eval_data.split != "test":
        raise ValueError("data-free training only accepts a held-out test split for evaluation")
    if len(students) != config.n_students or len(generators) != config.n_generators:
        raise ValueError(f"expected {config.n_students} students and {config.n_generators} generators, "
                         f"got {len(students)} and {len(generators)}")
    root = np.random.SeedSequence(config.seed)
    warm_seq, max_seq, min_seq = root.spawn(3)
    metrics = RunMetrics()
    gen_states = [optim.adam(config.adam_beta1) for _ in generators]
    if config.warmup_epochs:
        warm_sources = [LatentSource(s, config.latent_dim) for s in warm_seq.spawn(len(generators))]
        warmup_generators(generators, teacher, config, warm_sources, gen_states, metrics)
    max_sources = [LatentSource(s, config.latent_dim) for s in max_seq.spawn(len(generators))]
    min_sources = [LatentSource(s, config.latent_dim) for s in min_seq.spawn(len(generators))]
    stu_states = [optim.nesterov(config.nesterov_momentum) for _ in students]
    total = config.epochs * config.batches_per_epoch
    it = 0
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        if epoch_hook is not None:
            epoch_hook(epoch, students, generators, min_sources)
        max_bd, kd_sum, agree_sum, n_min = [], np.zeros(len(students)), np.zeros(len(students)), 0
        for _ in range(config.batches_per_epoch):
            lr_s = optim.cosine_lr(it, total, config.lr_student)
            lr_g = optim.cosine_lr(it, total, config.lr_generator)
            it += 1
            if it % config.gen_interval == 0:
                max_bd += maximization_step(generators, students, teacher, config, max_sources,
                                            gen_states, lr_g, it)
            kds, agree = minimization_step(generators, students, teacher, config, min_sources,
                                           stu_states, lr_s, it)
            kd_sum += kds
            agree_sum += agree
            n_min += 1
        record = {"phase": "main", "kd": float(np.mean(kd_sum / n_min)),
                  "student_kd": (kd_sum / n_min).tolist(),
                  "proxy_acc": (agree_sum / n_min).tolist(),
                  "gen_kd": float(np.mean([b.kd_divergence for b in max_bd])) if max_bd else None,
                  "adversarial_total": float(np.mean([b.adversarial_total for b in max_bd])) if max_bd else None,
                  **_mean_breakdown(max_bd),
                  "n_max_steps": len(max_bd),
                  "lr_student": lr_s, "lr_generator": lr_g}
        if eval_data is not None:
            record["test_acc"] = [student_accuracy(s, eval_data) for s in students]
        metrics.add(record, time.perf_counter() - t0)
        log.info("epoch %d: %s", epoch, record)
    return students, generators, metrics
