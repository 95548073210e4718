"""Toy-scale training (SL or AS-BLO) and evaluation of EchoIR."""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .. import tensor as T
from ..asblo import BarrierSchedule, BilevelProblem, asblo_train, write_trace
from ..metrics import psnr, ssim
from ..network import PRESETS, EchoIR, l1_loss
from ..tensor import ConfigError, Tensor
from .checkpoint import load_checkpoint, load_into, save_checkpoint
from .config import RunConfig
from .data import dataset, pad_to_multiple, random_crop

log = logging.getLogger(__name__)

LOSS_HEADER = ("step", "loss")
METRICS_HEADER = ("image", "psnr_degraded", "ssim_degraded", "psnr_restored", "ssim_restored")


def build_network(cfg: RunConfig) -> EchoIR:
    net_cfg = PRESETS[cfg.preset](
        upsampler_kind=cfg.upsampler_kind, eu_reference=cfg.eu_reference, combine_mode=cfg.combine_mode,
        window_radius=cfg.window_radius, enable_channel_attention=cfg.channel_attention, enable_gdfn=cfg.gdfn,
    )
    return EchoIR(net_cfg, rng=np.random.default_rng(cfg.seed), dtype=T.PRECISIONS[cfg.precision])


class AdamW:
    """Adam with decoupled weight decay, updating Tensor.data in place."""

    def __init__(self, params, lr=3e-4, b1=0.9, b2=0.999, weight_decay=1e-4, eps=1e-8):
        self.params = list(params)
        self.lr, self.b1, self.b2, self.wd, self.eps = lr, b1, b2, weight_decay, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p.data *= 1.0 - self.lr * self.wd
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _prepare_out(cfg: RunConfig) -> str:
    os.makedirs(cfg.output_dir, exist_ok=True)
    with open(os.path.join(cfg.output_dir, "effective_config.txt"), "w") as fh:
        fh.write(cfg.dumps())
    return cfg.output_dir


def _batch_loss(net, pairs, dtype) -> Tensor:
    total = None
    for deg, clean in pairs:
        loss = l1_loss(net(Tensor(deg, dtype=dtype)), clean)
        total = loss if total is None else total + loss
    return total * (1.0 / len(pairs))


# -- single-level ----------------------------------------------------------------------

def train_sl(cfg: RunConfig, net: EchoIR | None = None) -> dict:
    out = _prepare_out(cfg)
    net = net or build_network(cfg)
    train = dataset(cfg, "train")
    if not train:
        raise ConfigError("training split is empty")
    rng = np.random.default_rng([cfg.seed, 1])
    opt = AdamW(net.parameters(), cfg.lr, cfg.beta1, cfg.beta2, cfg.weight_decay)
    rows = []
    for step in range(cfg.steps):
        idx = rng.integers(0, len(train), cfg.batch_size)
        batch = [random_crop(train[i], cfg.patch_size, rng) for i in idx]
        net.zero_grad()
        loss = _batch_loss(net, batch, net.dtype)
        value = float(loss.data)
        if not math.isfinite(value):
            raise FloatingPointError(f"non-finite training loss at step {step}")
        loss.backward()
        opt.step()
        rows.append((step, repr(value)))
        if (step + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(os.path.join(out, f"checkpoint_{step + 1:06d}.ckpt"), net.named_parameters())
    save_checkpoint(os.path.join(out, "final.ckpt"), net.named_parameters())
    _write_csv(os.path.join(out, "loss.csv"), LOSS_HEADER, rows)
    return {"net": net, "losses": [float(r[1]) for r in rows]}


# -- bilevel -----------------------------------------------------------------------

class ParameterVector:
    """Flat float64 view of an ordered group of parameters."""

    def __init__(self, params: dict):
        self.names = list(params)
        self.tensors = [params[n] for n in self.names]
        self.sizes = [t.size for t in self.tensors]

    def get(self) -> np.ndarray:
        return np.concatenate([t.data.ravel().astype(np.float64) for t in self.tensors])

    def set(self, flat) -> None:
        off = 0
        for t, n in zip(self.tensors, self.sizes):
            t.data[...] = np.asarray(flat[off:off + n]).reshape(t.data.shape)
            off += n

    def grad(self) -> np.ndarray:
        return np.concatenate([
            (np.zeros(t.size) if t.grad is None else t.grad.ravel().astype(np.float64)) for t in self.tensors
        ])


def echoir_bilevel_binding(net: EchoIR, d_val: list, d_tr: list, swap: bool = False) -> BilevelProblem:
    """beta = Echo-Upsampler parameters, omega = everything else (reversed with swap).

    Both levels use the mean L1 loss: the upper on d_val, the lower on d_tr.
    """
    ids_val = {id(p.degraded) for p in d_val}
    if not d_val or not d_tr or any(id(p.degraded) in ids_val for p in d_tr):
        raise ConfigError("bilevel binding needs non-empty, disjoint train and validation sets")
    ups, rest = net.upsampler_parameters(), net.other_parameters()
    if not ups:
        raise ConfigError("network has no upsampler parameters to act as beta")
    beta_vec, omega_vec = (ParameterVector(rest), ParameterVector(ups)) if swap else (ParameterVector(ups), ParameterVector(rest))

    def objective(data):
        pairs = [(p.degraded, p.clean) for p in data]

        def fn(beta, omega):
            beta_vec.set(beta)
            omega_vec.set(omega)
            net.zero_grad()
            loss = _batch_loss(net, pairs, net.dtype)
            loss.backward()
            return float(loss.data), beta_vec.grad(), omega_vec.grad()

        return fn

    def on_update(beta, omega):
        beta_vec.set(beta)
        omega_vec.set(omega)

    return BilevelProblem(objective(d_val), objective(d_tr), beta_vec.get(), omega_vec.get(),
                          d_val=d_val, d_tr=d_tr, name="echoir", on_update=on_update)


def schedule_from(cfg: RunConfig) -> BarrierSchedule:
    return BarrierSchedule(start=cfg.schedule_start, decay=cfg.schedule_decay, every=cfg.schedule_every,
                           floor=cfg.schedule_floor, kappa=cfg.kappa, inner_steps=cfg.inner_steps,
                           inner_lr=cfg.inner_lr, feasibility_eps=cfg.feasibility_eps)


def train_asblo(cfg: RunConfig, net: EchoIR | None = None) -> dict:
    out = _prepare_out(cfg)
    net = net or build_network(cfg)
    d_tr, d_val = dataset(cfg, "train"), dataset(cfg, "val")
    problem = echoir_bilevel_binding(net, d_val, d_tr, swap=cfg.asblo_swap)
    sched = schedule_from(cfg)

    def callback(k, row, res):
        if (k + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(os.path.join(out, f"checkpoint_{k + 1:06d}.ckpt"), net.named_parameters())

    trace = asblo_train(problem, sched, cfg.steps, cfg.outer_lr, callback)
    problem.on_update(problem.beta, problem.omega)
    final_val, _, _ = problem.upper(problem.beta, problem.omega)
    save_checkpoint(os.path.join(out, "final.ckpt"), net.named_parameters())
    write_trace(trace, os.path.join(out, "trace.csv"))
    _write_csv(os.path.join(out, "loss.csv"), LOSS_HEADER, [(r.step, repr(float(r.F_val))) for r in trace])
    return {"net": net, "trace": trace, "problem": problem, "final_val": final_val}


def train(cfg: RunConfig) -> dict:
    return train_sl(cfg) if cfg.optimizer == "SL" else train_asblo(cfg)


# -- evaluation --------------------------------------------------------------------

def restore(net: EchoIR, img: np.ndarray) -> np.ndarray:
    padded, (h, w) = pad_to_multiple(img, 8)
    with T.no_grad():
        out = net(Tensor(padded, dtype=net.dtype)).data
    return np.clip(out[:, :h, :w].astype(np.float64), 0.0, 1.0)


def _fmt(v: float) -> str:
    return "inf" if math.isinf(v) else repr(float(v))


def evaluate(cfg: RunConfig, checkpoint=None, net: EchoIR | None = None, split: str = "test",
             workers: int = 1) -> dict:
    """Write metrics.csv (one row per image plus a ``mean`` row).

    ``workers > 1`` evaluates images on a thread pool; rows keep their order but
    the bitwise-determinism guarantee is not made for that mode.
    """
    out = _prepare_out(cfg)
    if net is None:
        net = build_network(cfg)
        if checkpoint is not None:
            load_into(net, load_checkpoint(checkpoint))
    pairs = dataset(cfg, split)
    if not pairs:
        raise ConfigError(f"{split} split is empty")

    def one(pair):
        restored = restore(net, pair.degraded)
        return (psnr(pair.degraded, pair.clean), ssim(pair.degraded, pair.clean),
                psnr(restored, pair.clean), ssim(restored, pair.clean))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            metrics = list(pool.map(one, pairs))
    else:
        metrics = [one(p) for p in pairs]
    arr = np.array(metrics)
    means = arr.mean(axis=0)
    rows = [(p.name,) + tuple(_fmt(v) for v in m) for p, m in zip(pairs, metrics)]
    rows.append(("mean",) + tuple(_fmt(v) for v in means))
    _write_csv(os.path.join(out, "metrics.csv"), METRICS_HEADER, rows)
    return {"per_image": metrics, "mean": dict(zip(METRICS_HEADER[1:], means))}
