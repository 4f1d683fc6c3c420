"""Finite-difference audit of every primitive and of the end-to-end objective."""

from __future__ import annotations

import time
from typing import Callable, Dict, List, Tuple

import numpy as np

from . import autodiff as ad
from . import encoder as enc_mod
from . import fusion as fusion_mod
from . import losses as loss_mod
from .encoder import EncoderConfig, Model
from .evidist import NIGParams, nig_to_student

TOLERANCE = 1e-4
EPS = 1e-5


def _shape(rng, max_side: int = 8) -> Tuple[int, int]:
    return int(rng.integers(1, max_side + 1)), int(rng.integers(1, max_side + 1))


def primitive_cases(rng: np.random.Generator) -> Dict[str, Tuple[Callable, Dict[str, np.ndarray]]]:
    """Scalar objectives over randomly shaped inputs, one per primitive."""
    cases = {}
    m, n = _shape(rng)
    k = int(rng.integers(1, 9))
    proj = {name: rng.standard_normal(shape) for name, shape in (("mn", (m, n)), ("mk", (m, k)), ("n", (n,)))}

    def obj(out, key="mn"):
        return ad.sum(out * proj[key])

    a = rng.standard_normal((m, n))
    b = rng.standard_normal((m, n))
    row = rng.standard_normal((n,))
    pos = rng.uniform(0.5, 2.0, (m, n))
    cases["add"] = (lambda p: obj(ad.add(p["a"], p["row"])), {"a": a, "row": row})
    cases["sub"] = (lambda p: obj(ad.sub(p["a"], p["b"])), {"a": a, "b": b})
    cases["mul"] = (lambda p: obj(ad.mul(p["a"], p["row"])), {"a": a, "row": row})
    cases["div"] = (lambda p: obj(ad.div(p["a"], p["pos"])), {"a": a, "pos": pos})
    cases["neg"] = (lambda p: obj(ad.neg(p["a"])), {"a": a})
    cases["exp"] = (lambda p: obj(ad.exp(p["a"])), {"a": a})
    cases["log"] = (lambda p: obj(ad.log(p["pos"])), {"pos": pos})
    cases["sqrt"] = (lambda p: obj(ad.sqrt(p["pos"])), {"pos": pos})
    cases["square"] = (lambda p: obj(ad.square(p["a"])), {"a": a})
    cases["softplus"] = (lambda p: obj(ad.softplus(p["a"] * 3.0)), {"a": a})
    # keep entries away from the kink
    away = np.where(np.abs(a) < 0.1, a + 0.3, a)
    cases["clamp_min"] = (lambda p: obj(ad.clamp_min(p["a"], 0.0)), {"a": away})
    c = a + 0.05 * np.sign(a - b + 1e-3)
    cases["minimum"] = (lambda p: obj(ad.minimum(p["a"], p["c"], p["pos"])), {"a": a, "c": c, "pos": pos})
    cases["matmul"] = (
        lambda p: obj(ad.matmul(p["x"], p["w"]), "mk"),
        {"x": rng.standard_normal((m, n)), "w": rng.standard_normal((n, k))},
    )
    d_in = n
    cases["conv1d_same"] = (
        lambda p: obj(ad.conv1d_same(p["x"], p["w"], p["b"]), "mk"),
        {"x": rng.standard_normal((m, d_in)), "w": rng.standard_normal((3, d_in, k)), "b": rng.standard_normal(k)},
    )
    cases["softmax"] = (lambda p: obj(ad.softmax(p["a"], temperature=1.7)), {"a": a})
    cases["log_softmax"] = (lambda p: obj(ad.log_softmax(p["a"], temperature=0.8)), {"a": a})
    cases["mean_pool"] = (lambda p: obj(ad.mean_pool(p["a"]), "n"), {"a": a})
    cases["sum"] = (lambda p: ad.sum(ad.sum(p["a"], axis=0) * proj["n"]), {"a": a})
    cases["swap_last"] = (lambda p: ad.sum(ad.swap_last(p["a"]) * proj["mn"].T), {"a": a})
    cases["reshape"] = (lambda p: ad.sum(ad.reshape(p["a"], (-1,)) * proj["mn"].ravel()), {"a": a})
    labels = rng.integers(0, n, size=m)
    cases["pick"] = (lambda p: ad.sum(ad.pick(p["a"], labels)), {"a": a})
    return cases


def _tiny_config() -> EncoderConfig:
    return EncoderConfig(d_in=(3, 2, 2), d_model=4, T=4, n_classes=3)


def _batch(rng, cfg: EncoderConfig, B: int = 2):
    return tuple(rng.standard_normal((B, cfg.T, d)) for d in cfg.d_in)


def component_cases(rng: np.random.Generator) -> Dict[str, Tuple[Callable, Dict[str, np.ndarray]]]:
    """Model-level pieces and the full distillation objective with frozen sampling."""
    cfg = _tiny_config()
    B = 2
    student = Model.init(cfg, rng)
    teacher = Model.init(cfg, rng)
    xs = _batch(rng, cfg, B)
    labels = rng.integers(0, cfg.n_classes, size=B)
    cases = {}

    enc_params = {k.split(".", 1)[1]: v for k, v in student.state().items() if k.startswith("L.")}

    def as_encoder(p):
        return enc_mod.ModalityEncoder(**p)

    proj_feat = rng.standard_normal((B, cfg.T, cfg.d_model))
    cases["encode"] = (lambda p: ad.sum(enc_mod.encode(as_encoder(p), p["conv_w"].tape.const(xs[0])) * proj_feat),
                       enc_params)

    feat = rng.standard_normal((B, cfg.T, cfg.d_model))

    def head_obj(p):
        nig = enc_mod.evidential_head(as_encoder(p), p["conv_w"].tape.const(feat), cfg.alpha_min)
        return (ad.sum(nig.gamma * proj_feat) + ad.sum(ad.log(nig.beta)) + ad.sum(ad.log(nig.delta))
                + ad.sum(ad.log(nig.alpha)))

    cases["evidential_head"] = (head_obj, enc_params)

    shape = (B, cfg.T, cfg.d_model)
    dist_params = {}
    for i in range(3):
        dist_params[f"g{i}"] = rng.standard_normal(shape)
        dist_params[f"b{i}"] = rng.uniform(0.3, 2.0, shape)
        dist_params[f"d{i}"] = rng.uniform(0.3, 2.0, (B, 1, 1))
        dist_params[f"a{i}"] = rng.uniform(2.1, 4.0, (B, 1, 1))

    def dists(p):
        return [nig_to_student(NIGParams(p[f"g{i}"], p[f"b{i}"], p[f"d{i}"], p[f"a{i}"])) for i in range(3)]

    def fuse_obj(p):
        f = fusion_mod.fuse(*dists(p))
        return ad.sum(f.u_F * proj_feat) + ad.sum(f.sigma_F * feat)

    cases["fuse"] = (fuse_obj, dist_params)
    cases["uncertainty_score"] = (lambda p: ad.sum(fusion_mod.fuse(*dists(p)).U_F * feat), dist_params)
    t_frozen = rng.standard_t(5.0, size=shape)
    cases["rrm_sample"] = (
        lambda p: ad.sum(fusion_mod.rrm_sample(fusion_mod.fuse(*dists(p)), mode="train", t=t_frozen) * proj_feat),
        dist_params,
    )

    logits_t = rng.standard_normal((B, cfg.n_classes))
    cases["ce_loss"] = (lambda p: loss_mod.ce_loss(p["z"], labels), {"z": rng.standard_normal((B, cfg.n_classes))})
    cases["js_logits_loss"] = (lambda p: loss_mod.js_logits_loss(p["z"], logits_t, 1.5),
                               {"z": rng.standard_normal((B, cfg.n_classes))})
    U_t = rng.uniform(0.5, 3.0, shape)
    cases["uncertainty_consistency_loss"] = (lambda p: loss_mod.uncertainty_consistency_loss(p["U"], U_t),
                                             {"U": rng.uniform(0.5, 3.0, shape)})

    t_out = enc_mod.forward(teacher.bind(ad.Tape()), xs, sample=False)
    t_logits, t_U = t_out.logits.data, t_out.fused.U_F.data
    noise = rng.standard_t(4.0, size=shape)
    weights = loss_mod.LossWeights(alpha=1.0, beta=0.1, temperature=1.0)

    def total(p):
        model = Model.from_state(cfg, p)
        out = enc_mod.forward(model, xs, sample=True, noise=noise)
        ce = loss_mod.ce_loss(out.logits, labels)
        jl = loss_mod.js_logits_loss(out.logits, t_logits, weights.temperature)
        ul = loss_mod.uncertainty_consistency_loss(out.fused.U_F, t_U)
        return loss_mod.total_loss(ce, jl, ul, weights)

    cases["total_loss"] = (total, student.state())
    return cases


def run_suite(seed: int = 0, eps: float = EPS) -> List[Tuple[str, float, float]]:
    """Return ``(component, worst relative error, seconds)`` for every check."""
    rng = np.random.default_rng(seed)
    results = []
    for name, (f, params) in {**primitive_cases(rng), **component_cases(rng)}.items():
        t0 = time.perf_counter()
        err = ad.grad_check(f, params, eps)
        results.append((name, err, time.perf_counter() - t0))
    return results
