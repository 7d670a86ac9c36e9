"""Mean-field Bayesian networks with per-task FiLM layers and heads.

A net owns shared mean-field layers (dense / conv), one FiLM parameter set
per (task, site), and one mean-field head per task. Sampling uses the
reparameterization theta = mu + exp(logvar / 2) * eps with noise shared
across the batch.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .gaussians import DiagGaussian

DEFAULT_INIT_LOGVAR = np.log(1e-6)


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # "dense" | "conv" | "pool" | "flatten"
    # dense: (fan_in, fan_out); conv: (in_ch, out_ch, k, pad, stride)
    dims: tuple = ()
    film: bool = False


@dataclass(frozen=True)
class Architecture:
    """Layer stack plus head geometry; identifies FiLM sites."""

    name: str
    layers: tuple
    head_in: int  # features entering a task head; 0 means no heads
    binary_logit: bool = False  # single-logit sigmoid model (no heads)

    @staticmethod
    def mlp(input_dim=784, hidden=(256, 256)):
        layers = []
        fan_in = input_dim
        for h in hidden:
            layers.append(LayerSpec("dense", (fan_in, h), film=True))
            fan_in = h
        return Architecture("mlp", tuple(layers), head_in=fan_in)

    @staticmethod
    def conv_small(in_shape=(1, 28, 28), channels=(16, 32), dense=100):
        c, h, w = in_shape
        layers = []
        for ch in channels:
            layers.append(LayerSpec("conv", (c, ch, 3, 1, 1), film=True))
            layers.append(LayerSpec("pool"))
            c, h, w = ch, h // 2, w // 2
        flat = c * h * w
        layers.append(LayerSpec("flatten", (flat,)))
        layers.append(LayerSpec("dense", (flat, dense), film=True))
        return Architecture("conv_small", tuple(layers), head_in=dense)

    @staticmethod
    def logistic(input_dim=2):
        # single shared logit, shared across tasks; no heads, no FiLM
        return Architecture(
            "logistic",
            (LayerSpec("dense", (input_dim, 1), film=False),),
            head_in=0,
            binary_logit=True,
        )

    def weighted_specs(self):
        return [s for s in self.layers if s.kind in ("dense", "conv")]

    def film_sites(self):
        return [i for i, s in enumerate(self.weighted_specs()) if s.film]


class MeanFieldLayer:
    """Gaussian weight and bias parameters of one dense or conv layer."""

    def __init__(self, weight_shape, bias_shape, rng, init_logvar=DEFAULT_INIT_LOGVAR):
        fan_in = int(np.prod(weight_shape[:-1])) if len(weight_shape) == 2 else int(
            np.prod(weight_shape[1:])
        )
        std = 0.1 / np.sqrt(fan_in)
        self.weight_mu = Tensor(rng.normal(0.0, std, size=weight_shape), requires_grad=True)
        self.weight_logvar = Tensor(
            np.full(weight_shape, init_logvar), requires_grad=True
        )
        self.bias_mu = Tensor(np.zeros(bias_shape), requires_grad=True)
        self.bias_logvar = Tensor(np.full(bias_shape, init_logvar), requires_grad=True)

    def params(self):
        return {
            "weight_mu": self.weight_mu,
            "weight_logvar": self.weight_logvar,
            "bias_mu": self.bias_mu,
            "bias_logvar": self.bias_logvar,
        }

    def variational_params(self):
        return [self.weight_mu, self.weight_logvar, self.bias_mu, self.bias_logvar]

    def sample(self, noise):
        """Draw (weight, bias) tensors; noise is a dict or None for eps = 0."""
        if noise is None:
            return self.weight_mu, self.bias_mu
        w_std = ad.exp(ad.mul(self.weight_logvar, Tensor(np.full((), 0.5))))
        b_std = ad.exp(ad.mul(self.bias_logvar, Tensor(np.full((), 0.5))))
        w = ad.add(self.weight_mu, ad.mul(w_std, Tensor(noise["weight"])))
        b = ad.add(self.bias_mu, ad.mul(b_std, Tensor(noise["bias"])))
        return w, b

    def posterior(self):
        mu = np.concatenate([self.weight_mu.data.ravel(), self.bias_mu.data.ravel()])
        var = np.concatenate(
            [
                np.exp(self.weight_logvar.data.ravel()),
                np.exp(self.bias_logvar.data.ravel()),
            ]
        )
        return DiagGaussian(mu, var)


class FiLMParams:
    """Per-task feature/filter-wise scale and shift (point estimates)."""

    def __init__(self, width):
        self.gamma = Tensor(np.ones(width), requires_grad=True)
        self.shift = Tensor(np.zeros(width), requires_grad=True)

    def params(self):
        return {"gamma": self.gamma, "shift": self.shift}


class VariationalNet:
    def __init__(self, arch: Architecture, rng, init_logvar=DEFAULT_INIT_LOGVAR):
        self.arch = arch
        self.init_logvar = init_logvar
        self.shared = []
        for spec in arch.weighted_specs():
            if spec.kind == "dense":
                fi, fo = spec.dims
                self.shared.append(MeanFieldLayer((fi, fo), (fo,), rng, init_logvar))
            else:
                ci, co, k, _, _ = spec.dims
                self.shared.append(MeanFieldLayer((co, ci, k, k), (co,), rng, init_logvar))
        self.film = {}
        self.heads = {}
        self.film_enabled = True

    # -- task management ---------------------------------------------------

    def add_task(self, task, classes, rng):
        """Lazily create the head (and fresh identity FiLM params) for a task."""
        if task in self.heads:
            raise ValueError(f"task {task!r} already present")
        if self.arch.head_in:
            self.heads[task] = MeanFieldLayer(
                (self.arch.head_in, classes), (classes,), rng, self.init_logvar
            )
        sites = []
        for spec in self.arch.weighted_specs():
            if spec.film:
                width = spec.dims[1]
                sites.append(FiLMParams(width))
        self.film[task] = sites

    def has_task(self, task):
        return task in self.film

    # -- forward -----------------------------------------------------------

    def forward_sample(self, task, x, noise=None):
        """Logits for a batch; noise maps parameter paths to N(0,1) draws."""
        if not self.has_task(task):
            raise KeyError(f"unknown task id {task!r}")
        h = x if isinstance(x, Tensor) else Tensor(x)
        w_idx = 0
        film_idx = 0
        for spec in self.arch.layers:
            if spec.kind == "pool":
                h = ad.max_pool2(h)
                continue
            if spec.kind == "flatten":
                h = ad.reshape(h, (h.shape[0], spec.dims[0]))
                continue
            layer = self.shared[w_idx]
            w, b = layer.sample(_sub_noise(noise, f"shared.{w_idx}"))
            if spec.kind == "dense":
                h = ad.add(ad.matmul(h, w), b)
            else:
                _, _, _, pad, stride = spec.dims
                h = ad.conv2d(h, w, stride=stride, padding=pad)
                h = _conv_bias(h, b)
            if spec.film and self.film_enabled:
                fp = self.film[task][film_idx]
                h = ad.scale_shift(h, fp.gamma, fp.shift)
            if spec.film:
                film_idx += 1
            h = ad.relu(h) if not self._is_output(w_idx) else h
            w_idx += 1
        if self.arch.head_in:
            head = self.heads[task]
            w, b = head.sample(_sub_noise(noise, f"head.{task!r}"))
            h = ad.add(ad.matmul(h, w), b)
        return h

    def _is_output(self, w_idx):
        # the shared stack is all hidden (ReLU) unless there are no heads
        return self.arch.head_in == 0 and w_idx == len(self.shared) - 1

    # -- noise -------------------------------------------------------------

    def sample_noise(self, task, rng):
        noise = {}
        for i, layer in enumerate(self.shared):
            noise[f"shared.{i}"] = {
                "weight": rng.standard_normal(layer.weight_mu.shape),
                "bias": rng.standard_normal(layer.bias_mu.shape),
            }
        if self.arch.head_in:
            head = self.heads[task]
            noise[f"head.{task!r}"] = {
                "weight": rng.standard_normal(head.weight_mu.shape),
                "bias": rng.standard_normal(head.bias_mu.shape),
            }
        return noise

    # -- parameter access --------------------------------------------------

    def shared_variational_params(self):
        out = []
        for layer in self.shared:
            out.extend(layer.variational_params())
        return out

    def task_params(self, task):
        out = []
        for fp in self.film[task]:
            out.extend([fp.gamma, fp.shift])
        if self.arch.head_in:
            out.extend(self.heads[task].variational_params())
        return out

    def trainable_params(self, task):
        return self.shared_variational_params() + self.task_params(task)

    def named_params(self):
        out = {}
        for i, layer in enumerate(self.shared):
            for k, t in layer.params().items():
                out[f"shared.{i}.{k}"] = t
        for task in sorted(self.film, key=repr):
            for j, fp in enumerate(self.film[task]):
                for k, t in fp.params().items():
                    out[f"film.{task!r}.{j}.{k}"] = t
            if self.arch.head_in:
                for k, t in self.heads[task].params().items():
                    out[f"head.{task!r}.{k}"] = t
        return out

    def shared_posterior(self):
        """Flattened DiagGaussian over all shared weights and biases."""
        parts = [layer.posterior() for layer in self.shared]
        mu = np.concatenate([p.mu for p in parts])
        var = np.concatenate([p.var for p in parts])
        return DiagGaussian(mu, var)


def _conv_bias(h, b):
    # (N, C, H, W) + per-channel bias via the scale-shift gradient machinery
    ones = Tensor(np.ones(b.shape))
    return ad.scale_shift(h, ones, b)


def _sub_noise(noise, key):
    if noise is None:
        return None
    return noise.get(key)


def init_net(arch: Architecture, seed: int, init_logvar=DEFAULT_INIT_LOGVAR) -> VariationalNet:
    rng = np.random.default_rng(seed)
    return VariationalNet(arch, rng, init_logvar)


def predict(net, task, x, num_samples=1, mode="sampled", rng=None):
    """Class probabilities averaged over posterior samples (softmax per draw)."""
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    if mode not in ("sampled", "mean"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "mean":
        logits = net.forward_sample(task, x, noise=None).data
        return _probs(logits, net.arch.binary_logit)
    if rng is None:
        rng = np.random.default_rng(0)
    acc = None
    for _ in range(num_samples):
        noise = net.sample_noise(task, rng)
        logits = net.forward_sample(task, x, noise=noise).data
        p = _probs(logits, net.arch.binary_logit)
        acc = p if acc is None else acc + p
    return acc / num_samples


def _probs(logits, binary_logit):
    if binary_logit:
        p1 = 1.0 / (1.0 + np.exp(-logits[:, 0]))
        return np.stack([1.0 - p1, p1], axis=1)
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def prune_diagnostics(net, prior_var: float, task):
    """Per-node deviation of incoming-weight posteriors from the prior.

    Score of a node is the mean symmetric KL between each incoming weight's
    posterior and N(0, prior_var); returned with each node's bias posterior
    mean, one row per weighted shared layer.
    """
    rows = []
    for layer in net.shared:
        w_mu = layer.weight_mu.data
        w_var = np.exp(layer.weight_logvar.data)
        # symmetric KL of N(mu, v) vs N(0, pv), per weight
        pv = prior_var
        skl = 0.5 * (w_var / pv + pv / w_var - 2.0) + 0.5 * w_mu**2 * (1.0 / pv + 1.0 / w_var)
        if w_mu.ndim == 2:
            scores = skl.mean(axis=0)  # (out,)
        else:
            scores = skl.mean(axis=tuple(range(1, w_mu.ndim)))  # per filter
        rows.append({"scores": scores, "bias_mu": layer.bias_mu.data.copy()})
    return rows


# -- checkpoint format -----------------------------------------------------


def save_checkpoint(net, path):
    """Versioned JSON checkpoint; values as hex floats for bit-exact round-trip."""
    params = {}
    for name, t in net.named_params().items():
        params[name] = {
            "shape": list(t.shape),
            "hex": [v.hex() for v in t.data.ravel().tolist()],
        }
    doc = {"version": 1, "arch": net.arch.name, "params": params}
    with open(path, "w") as f:
        json.dump(doc, f)


def load_checkpoint(net, path):
    """Load values into an already-structured net; shapes must match."""
    with open(path) as f:
        doc = json.load(f)
    if doc.get("version") != 1:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    named = net.named_params()
    for name, entry in doc["params"].items():
        if name not in named:
            raise KeyError(f"checkpoint parameter {name} not present in net")
        t = named[name]
        vals = np.array([float.fromhex(h) for h in entry["hex"]])
        if list(t.shape) != entry["shape"]:
            raise ValueError(f"shape mismatch for {name}")
        t.data = vals.reshape(t.shape)
