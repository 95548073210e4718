"""Finite-difference checks for every differentiable op and the composed blocks.

Each case reduces an op's output to a scalar through a fixed random projection
and compares the autodiff gradient against central differences in 64-bit.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .attention import MixAttentionBlock, MixAttentionConfig
from .tensor import Tensor, grad_check
from .upsampler import EchoUpsampler

OP_THRESHOLD = 1e-4
BLOCK_THRESHOLD = 1e-3
STEP = 1e-6


@dataclass
class Case:
    op: str
    label: str
    func: Callable[[Tensor], Tensor]
    x: np.ndarray
    threshold: float = OP_THRESHOLD


def _proj(rng, shape):
    return Tensor(rng.standard_normal(shape))


def _scalar(out: Tensor, proj: Tensor) -> Tensor:
    return T.tsum(out * proj)


@contextlib.contextmanager
def _swapped(module, attr, value):
    old = getattr(module, attr)
    object.__setattr__(module, attr, value)
    try:
        yield
    finally:
        object.__setattr__(module, attr, old)


def _param_case(op, label, module, owner, attr, run, rng, threshold):
    base = getattr(owner, attr).data.copy()
    out_shape = run().shape
    proj = _proj(rng, out_shape)

    def func(p):
        with _swapped(owner, attr, p):
            return _scalar(run(), proj)

    return Case(op, label, func, base, threshold)


def _unary(op, fn, rng, shape=(2, 3, 4), low=-2.0, high=2.0):
    x = rng.uniform(low, high, size=shape)
    proj = _proj(rng, fn(Tensor(x)).shape)
    return [Case(op, "x", lambda t: _scalar(fn(t), proj), x)]


def _binary(op, fn, rng, sa=(2, 3, 4), sb=(3, 1), positive_b=False):
    a = rng.uniform(-2, 2, size=sa)
    b = rng.uniform(0.5, 2.0, size=sb) if positive_b else rng.uniform(-2, 2, size=sb)
    proj = _proj(rng, fn(Tensor(a), Tensor(b)).shape)
    return [
        Case(op, "a", lambda t: _scalar(fn(t, Tensor(b)), proj), a),
        Case(op, "b (broadcast)", lambda t: _scalar(fn(Tensor(a), t), proj), b),
    ]


def _conv_cases(rng):
    cases = []
    for groups, stride, pad, label in ((1, 1, 1, "dense"), (4, 1, 1, "depthwise"), (2, 2, 1, "grouped stride2")):
        x = rng.standard_normal((4, 6, 6))
        w = rng.standard_normal((4, 4 // groups, 3, 3)) * 0.5
        b = rng.standard_normal(4)

        def run(xx, ww, bb, g=groups, s=stride, p=pad):
            return T.conv2d(xx, ww, bb, s, p, g)

        proj = _proj(rng, run(Tensor(x), Tensor(w), Tensor(b)).shape)
        cases += [
            Case("conv2d", f"{label}: input", lambda t, w=w, b=b, run=run, proj=proj: _scalar(run(t, Tensor(w), Tensor(b)), proj), x),
            Case("conv2d", f"{label}: weight", lambda t, x=x, b=b, run=run, proj=proj: _scalar(run(Tensor(x), t, Tensor(b)), proj), w),
            Case("conv2d", f"{label}: bias", lambda t, x=x, w=w, run=run, proj=proj: _scalar(run(Tensor(x), Tensor(w), t), proj), b),
        ]
    return cases


def _convt_cases(rng):
    x = rng.standard_normal((3, 3, 4))
    w = rng.standard_normal((3, 2, 2, 2))
    b = rng.standard_normal(2)
    proj = _proj(rng, (2, 6, 8))
    return [
        Case("conv_transpose2d", "input", lambda t: _scalar(T.conv_transpose2d(t, Tensor(w), Tensor(b)), proj), x),
        Case("conv_transpose2d", "weight", lambda t: _scalar(T.conv_transpose2d(Tensor(x), t, Tensor(b)), proj), w),
        Case("conv_transpose2d", "bias", lambda t: _scalar(T.conv_transpose2d(Tensor(x), Tensor(w), t), proj), b),
    ]


def _layer_norm_cases(rng):
    x = rng.standard_normal((4, 3, 3))
    g = rng.uniform(0.5, 1.5, 4)
    b = rng.standard_normal(4)
    proj = _proj(rng, x.shape)

    def run(xx, gg, bb):
        return T.layer_norm(xx, gg, bb, axis=0, eps=1e-5)

    return [
        Case("layer_norm", "input", lambda t: _scalar(run(t, Tensor(g), Tensor(b)), proj), x),
        Case("layer_norm", "gamma", lambda t: _scalar(run(Tensor(x), t, Tensor(b)), proj), g),
        Case("layer_norm", "beta", lambda t: _scalar(run(Tensor(x), Tensor(g), t), proj), b),
    ]


def _block_cases(rng):
    cfg = MixAttentionConfig(channels=4, heads=2)
    block = MixAttentionBlock(cfg, rng=np.random.default_rng(7), dtype=T.WIDE)
    x = rng.standard_normal((4, 4, 4))
    proj = _proj(rng, x.shape)
    cases = [Case("mix_attention_block", "input", lambda t: _scalar(block(t), proj), x, BLOCK_THRESHOLD)]
    for owner, attr, label in (
        (block.attn.qkv, "weight", "qkv weight"),
        (block.ca.fc1, "weight", "channel-attention fc1"),
        (block.ffn.dwconv, "weight", "gdfn depthwise weight"),
        (block.norm2, "gamma", "norm2 gamma"),
    ):
        cases.append(_param_case("mix_attention_block", label, block, owner, attr,
                                 lambda: block(Tensor(x)), rng, BLOCK_THRESHOLD))
    return cases


def _upsampler_cases(rng):
    cases = []
    for combine in ("add", "multiply"):
        up = EchoUpsampler(4, 3, embed=4, radius=2, combine=combine, rng=np.random.default_rng(3),
                           sigma_spatial=0.9, sigma_range=1.3, dtype=T.WIDE)
        f_down = rng.standard_normal((4, 4, 4))
        f_ref = rng.standard_normal((3, 8, 8)) * 0.5
        proj = _proj(rng, (2, 8, 8))
        run = lambda up=up, f_down=f_down, f_ref=f_ref: up(Tensor(f_down), Tensor(f_ref))
        cases.append(Case("echo_upsampler", f"{combine}: f_down",
                          lambda t, up=up, f_ref=f_ref, proj=proj: _scalar(up(t, Tensor(f_ref)), proj), f_down, BLOCK_THRESHOLD))
        cases.append(Case("echo_upsampler", f"{combine}: f_ref",
                          lambda t, up=up, f_down=f_down, proj=proj: _scalar(up(Tensor(f_down), t), proj), f_ref, BLOCK_THRESHOLD))
        for owner, attr, label in (
            (up, "log_sigma_spatial", "sigma_spatial"),
            (up, "log_sigma_range", "sigma_range"),
            (up.mlp1, "weight", "range mlp layer 1"),
            (up.mlp2, "weight", "range mlp layer 2"),
        ):
            cases.append(_param_case("echo_upsampler", f"{combine}: {label}", up, owner, attr, run, rng, OP_THRESHOLD))
    return cases


def build_cases(seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    cases = []
    cases += _binary("add", T.add, rng)
    cases += _binary("sub", T.sub, rng)
    cases += _binary("mul", T.mul, rng)
    cases += _binary("div", T.div, rng, positive_b=True)
    cases += _unary("neg", T.neg, rng)
    cases += _unary("sigmoid", T.sigmoid, rng, low=-4, high=4)
    cases += _unary("gelu", T.gelu, rng, low=-3, high=3)
    cases += _unary("exp", T.exp, rng)
    cases += _unary("log", T.log, rng, low=0.3, high=3.0)
    cases += _unary("square", T.square, rng)
    x = rng.choice([-1.0, 1.0], size=(2, 3, 4)) * rng.uniform(0.1, 2.0, size=(2, 3, 4))
    proj = _proj(rng, x.shape)
    cases.append(Case("abs", "x (away from 0)", lambda t: _scalar(T.tabs(t), proj), x))
    cases += _unary("sum", lambda t: T.tsum(t, axis=1), rng)
    cases += _unary("mean", lambda t: T.mean(t, axis=(0, 2)), rng)
    cases += _unary("reshape", lambda t: T.reshape(t, (6, 4)), rng)
    cases += _unary("transpose", lambda t: T.transpose(t, (2, 0, 1)), rng)
    idx = (slice(None), np.array([[0, 2, 2], [1, 1, 0]]), np.array([[3, 3, 0], [1, 2, 3]]))
    cases += _unary("getitem", lambda t: t[idx], rng)
    cases += _unary("concat", lambda t: T.concat([t, T.square(t)], axis=1), rng)
    cases += _binary("matmul", T.matmul, rng, sa=(2, 3, 4), sb=(4, 5))
    cases += _conv_cases(rng)
    cases += _convt_cases(rng)
    cases += _unary("softmax", lambda t: T.softmax(t, axis=-1), rng)
    cases += _layer_norm_cases(rng)
    cases += _unary("adaptive_avg_pool", T.adaptive_avg_pool, rng, shape=(3, 4, 4))
    cases += _block_cases(rng)
    cases += _upsampler_cases(rng)
    return cases


@dataclass
class Result:
    op: str
    label: str
    error: float
    threshold: float

    @property
    def passed(self) -> bool:
        return self.error < self.threshold


def run_suite(cases: list | None = None, step: float = STEP) -> list:
    cases = build_cases() if cases is None else cases
    out = []
    for c in cases:
        try:
            err = grad_check(c.func, Tensor(c.x, dtype=T.WIDE), step)
        except FloatingPointError:
            err = float("inf")
        out.append(Result(c.op, c.label, err, c.threshold))
    return out


def format_report(results: list) -> str:
    lines = [f"{'op':<22} {'case':<32} {'max rel err':>12}  {'limit':>7}  status"]
    for r in results:
        lines.append(f"{r.op:<22} {r.label:<32} {r.error:>12.3e}  {r.threshold:>7.0e}  {'ok' if r.passed else 'FAIL'}")
    return "\n".join(lines)
