"""Scalar objectives: KD divergence, generator constraints and the adversarial objective.

All entropies and divergences are in nats.  Functions take graph nodes so the
result stays differentiable; :func:`gaussian_kl` also accepts plain numbers.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from dfadkd import autodiff as ad

VAR_FLOOR = 1e-8
ROW_SUM_TOL = 1e-5


@dataclass
class HyperParams:
    alpha: float = 0.1
    lam: float = 0.0
    temperature: float = 1.0

    def __post_init__(self):
        if self.alpha < 0 or self.lam < 0:
            raise ValueError("alpha and lambda must be >= 0")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")


@dataclass
class LossBreakdown:
    kd_divergence: float = 0.0
    bn_stat: float = 0.0
    instance_entropy: float = 0.0
    batch_entropy: float = 0.0
    aux_total: float = 0.0
    adversarial_total: float = 0.0
    pair_kd: list = field(default_factory=list)  # S x G

    def as_dict(self):
        return {k: (v if k == "pair_kd" else float(v)) for k, v in self.__dict__.items()}


def _check_finite(*nodes):
    for n in nodes:
        if not np.all(np.isfinite(n.value)):
            raise FloatingPointError(f"non-finite values in {n.kind} node of shape {n.shape}")


def kd_loss(teacher_logits: ad.Node, student_logits: ad.Node, temperature: float = 1.0,
            detach_teacher: bool = True) -> ad.Node:
    """Batch mean of KL(softmax(t / tau) || softmax(s / tau))."""
    if teacher_logits.shape != student_logits.shape:
        raise ad.ShapeError(f"kd_loss: teacher logits {teacher_logits.shape} vs student logits {student_logits.shape}")
    _check_finite(teacher_logits, student_logits)
    t = ad.stop_gradient(teacher_logits) if detach_teacher else teacher_logits
    logp_t = ad.log_softmax(t, temperature)
    logp_s = ad.log_softmax(student_logits, temperature)
    kl = ad.sum(ad.mul(ad.exp(logp_t), ad.sub(logp_t, logp_s)), axis=-1)
    return ad.mean(kl)


def supervised_loss(labels, logits: ad.Node) -> ad.Node:
    """Mean cross-entropy against one-hot labels."""
    y = np.asarray(labels)
    if y.shape != logits.shape or not np.all((y == 0) | (y == 1)) or not np.all(y.sum(axis=-1) == 1):
        raise ValueError("supervised_loss: labels must be one-hot rows matching the logits shape")
    logp = ad.log_softmax(logits)
    return ad.mul(ad.sum(ad.mul(logp, y)), -1.0 / y.shape[0])


def gaussian_kl(mu_hat, var_hat, mu, var):
    """KL(N(mu_hat, var_hat) || N(mu, var)), elementwise.

    Both variances are floored at ``VAR_FLOOR``.  Accepts numbers/arrays (returns
    a float or array) or graph nodes (returns a node).
    """
    if not any(isinstance(a, ad.Node) for a in (mu_hat, var_hat, mu, var)):
        var_hat = np.maximum(np.asarray(var_hat, dtype=np.float64), VAR_FLOOR)
        var = np.maximum(np.asarray(var, dtype=np.float64), VAR_FLOOR)
        mu_hat = np.asarray(mu_hat, dtype=np.float64)
        mu = np.asarray(mu, dtype=np.float64)
        if np.any(~np.isfinite(var_hat)) or np.any(~np.isfinite(var)):
            raise ValueError("gaussian_kl: variances must be finite")
        out = ((mu_hat - mu) ** 2 + var_hat) / (2.0 * var) - 0.5 * np.log(var_hat / var) - 0.5
        return float(out) if out.ndim == 0 else out
    graph = next(a.graph for a in (mu_hat, var_hat, mu, var) if isinstance(a, ad.Node))
    mu_hat, var_hat, mu, var = (ad._as_node(graph, a) for a in (mu_hat, var_hat, mu, var))
    var_hat = ad.clip_min(var_hat, VAR_FLOOR)
    var = ad.clip_min(var, VAR_FLOOR)
    quad = ad.div(ad.add(ad.square(ad.sub(mu_hat, mu)), var_hat), ad.mul(var, 2.0))
    return ad.sub(ad.sub(quad, ad.mul(ad.log(ad.div(var_hat, var)), 0.5)), 0.5)


def bn_stat_loss(batch_stats: dict, running_stats: dict) -> ad.Node:
    """Unweighted sum of per-(layer, channel) Gaussian KL divergences."""
    if set(batch_stats) != set(running_stats):
        raise KeyError(f"bn_stat_loss: batch-stat layers {sorted(batch_stats)} "
                       f"do not match running-stat layers {sorted(running_stats)}")
    if not batch_stats:
        raise ValueError("bn_stat_loss: no batchnorm layers")
    total = None
    for l in sorted(batch_stats):
        mu_hat, var_hat = batch_stats[l]
        mu, var = running_stats[l]
        term = ad.sum(gaussian_kl(mu_hat, var_hat, mu, var))
        total = term if total is None else ad.add(total, term)
    return total


def _check_rows(probs: ad.Node):
    sums = probs.value.sum(axis=-1)
    if probs.value.ndim != 2 or np.any(np.abs(sums - 1.0) > ROW_SUM_TOL) or np.any(probs.value < 0):
        raise ValueError("probability rows must be non-negative and sum to 1")


def entropy(probs: ad.Node) -> ad.Node:
    """Row entropies of an N x K probability matrix."""
    return ad.mul(ad.sum(ad.xlogx(probs), axis=-1), -1.0)


def instance_entropy(probs: ad.Node) -> ad.Node:
    _check_rows(probs)
    return ad.mean(entropy(probs))


def batch_entropy(probs: ad.Node) -> ad.Node:
    _check_rows(probs)
    avg = ad.mean(probs, axis=0, keepdims=True)
    return ad.mean(entropy(avg))


def aux_loss(batch_stats: dict, running_stats: dict, probs: ad.Node,
             use_bn: bool = True, use_instance: bool = True, use_batch: bool = True):
    """Generator auxiliary loss: bn-stat term + instance entropy - batch entropy.

    The ``use_*`` switches drop a term (ablation); the breakdown always
    reports every component.
    """
    bn = bn_stat_loss(batch_stats, running_stats)
    inst = instance_entropy(probs)
    bat = batch_entropy(probs)
    terms = []
    if use_bn:
        terms.append(bn)
    if use_instance:
        terms.append(inst)
    if use_batch:
        terms.append(ad.mul(bat, -1.0))
    total = terms[0] if terms else ad.mul(bn, 0.0)
    for t in terms[1:]:
        total = ad.add(total, t)
    breakdown = LossBreakdown(bn_stat=float(bn.value), instance_entropy=float(inst.value),
                              batch_entropy=float(bat.value), aux_total=float(total.value))
    return total, breakdown


def adversarial_objective(teacher_logits: ad.Node, student_logits: list, aux, alpha: float,
                          temperature: float = 1.0):
    """Average teacher-student KD divergence minus ``alpha`` times the auxiliary loss.

    This is the quantity a generator ascends.  Gradients reach the generator
    through both the teacher and the student paths.
    """
    if not student_logits:
        raise ValueError("adversarial_objective needs at least one student")
    pair = [kd_loss(teacher_logits, s, temperature, detach_teacher=False) for s in student_logits]
    avg = pair[0]
    for p in pair[1:]:
        avg = ad.add(avg, p)
    avg = ad.mul(avg, 1.0 / len(pair))
    objective = avg if aux is None or alpha == 0 else ad.sub(avg, ad.mul(aux, alpha))
    return objective, [float(p.value) for p in pair]
