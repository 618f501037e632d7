"""Registry of finite-difference gradient checks for every differentiable op.

Each check builds seeded inputs, wraps the op into a scalar function (via a
fixed random projection so output adjoints are non-uniform), and compares
reverse-mode gradients against central differences.  The final entry runs the
complete training objective: fused queries against gated interpolation
targets through the in-batch classification loss.

The checks run at unit temperature: central differences at eps=1e-5 lose
accuracy when third derivatives blow up with 1/tau^3, so sharp temperatures
are exercised end-to-end by the training tests instead.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import GradCheckReport, Tensor, grad_check
from .losses import LossConfig, bbc_loss
from .network import ModelConfig, fuse_queries, init_params, target_features, transformer_block


def _scalarize(out: Tensor, rng: np.random.Generator) -> Tensor:
    probe = ad.mul(out, Tensor(rng.standard_normal(out.shape)))
    while probe.data.ndim > 0:
        probe = ad.reduce_mean(probe, axis=0)
    return probe


def _leaf(rng: np.random.Generator, shape, name: str, positive: bool = False) -> Tensor:
    data = rng.standard_normal(shape)
    if positive:
        data = np.abs(data) + 0.5
    return Tensor(data, requires_grad=True, name=name)


def _check(name, f, inputs, eps, tol, results) -> None:
    report = grad_check(f, inputs, eps=eps, tol=tol)
    results.append((name, report))


def run_suite(seed: int = 0, eps: float = 1e-5, tol: float = 1e-4) -> list[tuple[str, GradCheckReport]]:
    rng = np.random.default_rng(seed)
    results: list[tuple[str, GradCheckReport]] = []

    def simple(name: str, build: Callable[[], tuple[Callable, list[Tensor]]]) -> None:
        f, inputs = build()
        _check(name, f, inputs, eps, tol, results)

    def projected(name: str, op: Callable[..., Tensor], *inputs: Tensor) -> None:
        # fresh generator per call keeps the projection identical across FD evals
        _check(
            name,
            lambda *ts: _scalarize(op(*ts), np.random.default_rng(seed + 1)),
            list(inputs),
            eps,
            tol,
            results,
        )

    projected("matmul", ad.matmul, _leaf(rng, (4, 5), "a"), _leaf(rng, (5, 3), "b"))
    projected("matmul_batched", ad.matmul, _leaf(rng, (2, 4, 5), "a"), _leaf(rng, (5, 3), "b"))
    projected("matmul_batch_pair", ad.matmul, _leaf(rng, (2, 4, 5), "a"), _leaf(rng, (2, 5, 3), "b"))
    projected("add", ad.add, _leaf(rng, (3, 4), "x"), _leaf(rng, (3, 4), "y"))
    projected("add_broadcast", ad.add, _leaf(rng, (3, 2, 4), "x"), _leaf(rng, (2, 4), "y"))
    projected("add_scalar", lambda x: ad.add(x, 1.5), _leaf(rng, (3, 4), "x"))
    projected("sub", ad.sub, _leaf(rng, (3, 4), "x"), _leaf(rng, (3, 4), "y"))
    projected("mul", ad.mul, _leaf(rng, (3, 4), "x"), _leaf(rng, (3, 4), "y"))
    projected("mul_broadcast", ad.mul, _leaf(rng, (3, 2, 4), "x"), _leaf(rng, (2, 4), "y"))
    projected("scale", lambda x: ad.scale(x, -2.5), _leaf(rng, (3, 4), "x"))
    projected("div", ad.div, _leaf(rng, (3, 4), "x"), _leaf(rng, (3, 4), "y", positive=True))
    projected("sqrt", ad.sqrt, _leaf(rng, (3, 4), "x", positive=True))
    projected("sigmoid", ad.sigmoid, _leaf(rng, (3, 4), "x"))
    projected("gelu", ad.gelu, _leaf(rng, (3, 4), "x"))
    projected("softmax_lastdim", ad.softmax_lastdim, _leaf(rng, (2, 3, 5), "x"))
    projected("logsumexp_lastdim", ad.logsumexp_lastdim, _leaf(rng, (3, 5), "x"))
    projected(
        "layer_norm",
        lambda x, g, b: ad.layer_norm(x, g, b, 1e-5),
        _leaf(rng, (3, 6), "x"),
        _leaf(rng, (6,), "gamma"),
        _leaf(rng, (6,), "beta"),
    )
    projected("reduce_mean_axis0", lambda x: ad.reduce_mean(x, 0), _leaf(rng, (3, 4), "x"))
    projected("reduce_mean_axis1", lambda x: ad.reduce_mean(x, 1), _leaf(rng, (2, 3, 4), "x"))
    projected("sum_lastdim", lambda x: ad.sum_lastdim(x), _leaf(rng, (3, 4), "x"))
    projected("transpose_last2", ad.transpose_last2, _leaf(rng, (2, 3, 4), "x"))
    projected("slice_lastdim", lambda x: ad.slice_lastdim(x, 1, 3), _leaf(rng, (2, 3, 4), "x"))
    projected(
        "concat_lastdim",
        lambda a, b: ad.concat_lastdim([a, b]),
        _leaf(rng, (2, 3, 2), "a"),
        _leaf(rng, (2, 3, 3), "b"),
    )
    projected("take_token", lambda x: ad.take_token(x, 1), _leaf(rng, (2, 3, 4), "x"))
    projected("take_diag", ad.take_diag, _leaf(rng, (4, 4), "x"))

    def build_bbc():
        fused = _leaf(rng, (4, 8), "fused")
        targets = _leaf(rng, (4, 8), "targets")
        cfg = LossConfig(tau=1.0)
        return (lambda f, t: bbc_loss(f, t, cfg)), [fused, targets]

    simple("bbc_loss", build_bbc)

    def build_block():
        cfg = ModelConfig(dim=8, union_heads=2, head_dim=4, fusion_heads=2, ffn_mult=2, seed=seed)
        layer = init_params(cfg).union[0]
        x = _leaf(rng, (2, 2, 8), "x")
        tensors = [x] + [getattr(layer, f) for f in layer.FIELDS]
        proj_rng_seed = seed + 1

        def f(*_):
            return _scalarize(transformer_block(x, layer, 2, 4), np.random.default_rng(proj_rng_seed))

        return f, tensors

    simple("transformer_block", build_block)

    def build_pipeline():
        cfg = ModelConfig(
            dim=16, union_layers=2, union_heads=2, head_dim=8,
            fusion_layers=2, fusion_heads=2, ffn_mult=2, tau=1.0, seed=seed,
        )
        params = init_params(cfg)
        data_rng = np.random.default_rng(seed + 2)
        e_r = data_rng.standard_normal((4, 16))
        e_c = data_rng.standard_normal((4, 16))
        e_t = data_rng.standard_normal((4, 16))
        eta = data_rng.standard_normal(16)
        loss_cfg = LossConfig(tau=cfg.tau)

        def f(*_):
            fused = fuse_queries(e_r, e_c, params, cfg)
            targets = target_features("union", e_t, eta, params, cfg)
            return bbc_loss(fused, targets, loss_cfg)

        return f, [t for _, t in params.named()]

    simple("pipeline_eq4", build_pipeline)
    return results
