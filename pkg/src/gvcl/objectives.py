"""Training objectives: tempered ELBO, EWC quadratic penalty, curvature.

The ELBO's KL term is built from autodiff ops on the shared-layer
parameters so gradients flow to means and log-variances; FiLM and head
parameters enter the likelihood only.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import autodiff as ad
from .autodiff import Tensor
from .gaussians import DiagGaussian


@dataclass
class GVCLConfig:
    beta: float = 1.0
    lam: float = 1.0
    gamma: float = 1.0
    mc_samples: int = 1
    lr: float = 1e-3
    epochs: int = 100
    batch_size: int = 64
    eval_samples: int = 100
    film: bool = False

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be >= 1")
        if self.lam < 1:
            warnings.warn(f"lam={self.lam} < 1 is outside the recommended range", stacklevel=2)


@dataclass
class LayerPrior:
    """Per-layer prior arrays: base posterior plus clipped quadratic precision."""

    w_mu: np.ndarray
    w_var: np.ndarray
    w_prec: np.ndarray
    b_mu: np.ndarray
    b_var: np.ndarray
    b_prec: np.ndarray


@dataclass
class NetPrior:
    layers: list
    prior0_var: float

    def flatten(self) -> DiagGaussian:
        mu = np.concatenate([np.r_[l.w_mu.ravel(), l.b_mu.ravel()] for l in self.layers])
        var = np.concatenate([np.r_[l.w_var.ravel(), l.b_var.ravel()] for l in self.layers])
        return DiagGaussian(mu, var)


def initial_prior(net, prior0_var=1.0) -> NetPrior:
    layers = []
    for layer in net.shared:
        ws, bs = layer.weight_mu.shape, layer.bias_mu.shape
        layers.append(
            LayerPrior(
                w_mu=np.zeros(ws),
                w_var=np.full(ws, prior0_var),
                w_prec=np.full(ws, 1.0 / prior0_var),
                b_mu=np.zeros(bs),
                b_var=np.full(bs, prior0_var),
                b_prec=np.full(bs, 1.0 / prior0_var),
            )
        )
    return NetPrior(layers, prior0_var)


def posterior_to_prior(net, prior0_var: float, lam: float) -> NetPrior:
    """Wrap the current shared posterior as the next task's tempered prior."""
    layers = []
    for layer in net.shared:
        w_var = np.exp(layer.weight_logvar.data)
        b_var = np.exp(layer.bias_logvar.data)
        layers.append(
            LayerPrior(
                w_mu=layer.weight_mu.data.copy(),
                w_var=w_var,
                w_prec=_clipped_prec(w_var, prior0_var, lam),
                b_mu=layer.bias_mu.data.copy(),
                b_var=b_var,
                b_prec=_clipped_prec(b_var, prior0_var, lam),
            )
        )
    return NetPrior(layers, prior0_var)


def _clipped_prec(var, prior0_var, lam):
    return lam * np.maximum(0.0, 1.0 / var - 1.0 / prior0_var) + 1.0 / prior0_var


def shared_kl_node(net, prior: NetPrior):
    """Differentiable KL(q_shared || prior) with the lam-tilde quadratic term."""
    total = None
    const = 0.0
    for layer, lp in zip(net.shared, prior.layers):
        for mu, logvar, pm, pv, prec in (
            (layer.weight_mu, layer.weight_logvar, lp.w_mu, lp.w_var, lp.w_prec),
            (layer.bias_mu, layer.bias_logvar, lp.b_mu, lp.b_var, lp.b_prec),
        ):
            diff = ad.sub(mu, Tensor(pm))
            quad = ad.tsum(ad.mul(ad.square(diff), Tensor(prec)))
            trace = ad.tsum(ad.mul(ad.exp(logvar), Tensor(1.0 / pv)))
            neg_logdet = ad.tsum(ad.mul(logvar, Tensor(np.full(logvar.shape, -1.0))))
            const += float(np.sum(np.log(pv)) - pv.size)
            term = ad.add(ad.add(quad, trace), neg_logdet)
            total = term if total is None else ad.add(total, term)
    half = Tensor(np.full((), 0.5))
    return ad.mul(ad.add(total, Tensor(np.full((), const))), half)


def nll_node(net, task, x, y, noise):
    """Mean negative log-likelihood of a batch under one sampled network."""
    logits = net.forward_sample(task, x, noise=noise)
    if net.arch.binary_logit:
        return _binary_nll(logits, y)
    return ad.tmean(ad.softmax_cross_entropy(logits, y))


def _binary_nll(logits, y):
    # mean of softplus(s * z) with s = 1 - 2y, stable via relu/exp/log ops
    y = np.asarray(y)
    s = Tensor((1.0 - 2.0 * y)[:, None])
    u = ad.mul(logits, s)
    neg_abs = ad.mul(ad.add(ad.relu(u), ad.relu(ad.mul(u, Tensor(np.full((), -1.0))))),
                     Tensor(np.full((), -1.0)))
    softplus = ad.add(ad.relu(u), ad.log(ad.add(ad.exp(neg_abs), Tensor(np.ones(u.shape)))))
    return ad.tmean(softplus)


def beta_elbo_loss(net, task, x, y, prior: NetPrior, cfg: GVCLConfig, n_task: int, rng):
    """Loss = mean NLL (MC average) + beta * KL_tilde / N_task."""
    if len(np.asarray(y)) == 0:
        raise ValueError("batch must be nonempty")
    nll = None
    for _ in range(cfg.mc_samples):
        noise = net.sample_noise(task, rng) if rng is not None else None
        term = nll_node(net, task, x, y, noise)
        nll = term if nll is None else ad.add(nll, term)
    if cfg.mc_samples > 1:
        nll = ad.mul(nll, Tensor(np.full((), 1.0 / cfg.mc_samples)))
    kl = shared_kl_node(net, prior)
    return ad.add(nll, ad.mul(kl, Tensor(np.full((), cfg.beta / n_task))))


# -- EWC -------------------------------------------------------------------


@dataclass
class EWCState:
    fisher_acc: np.ndarray
    anchor_mu: np.ndarray
    lam: float = 1.0
    gamma: float = 1.0


def flat_shared_mu(net) -> np.ndarray:
    return np.concatenate(
        [np.r_[l.weight_mu.data.ravel(), l.bias_mu.data.ravel()] for l in net.shared]
    )


def fresh_ewc_state(net, lam=1.0, gamma=1.0) -> EWCState:
    n = flat_shared_mu(net).size
    return EWCState(np.zeros(n), flat_shared_mu(net), lam, gamma)


def fisher_diag(net, task, x, y, mode="empirical", rng=None, max_samples=None):
    """Diagonal empirical/model Fisher at the current means, scaled by N.

    empirical: squared gradients at observed labels, averaged then scaled
    by the dataset size; model: labels drawn from the net's predictive.
    """
    x = np.asarray(x)
    y = np.asarray(y)
    n_total = x.shape[0]
    if n_total == 0:
        raise ValueError("fisher_diag: empty dataset")
    if mode not in ("empirical", "model"):
        raise ValueError(f"unknown fisher mode {mode!r}")
    idx = np.arange(n_total)
    if max_samples is not None and max_samples < n_total:
        idx = (rng or np.random.default_rng(0)).choice(n_total, max_samples, replace=False)
    params = [p for l in net.shared for p in (l.weight_mu, l.bias_mu)]
    acc = np.zeros(sum(p.size for p in params))
    for i in idx:
        xi = x[i : i + 1]
        yi = y[i : i + 1]
        if mode == "model":
            from .nets import predict

            probs = predict(net, task, xi, mode="mean")
            yi = np.array([(rng or np.random.default_rng(0)).choice(len(probs[0]), p=probs[0])])
            if net.arch.binary_logit:
                yi = yi.astype(y.dtype)
        for p in params:
            p.grad = None
        loss = nll_node(net, task, xi, yi, noise=None)
        ad.backward(loss)
        g = np.concatenate([
            np.r_[
                (l.weight_mu.grad if l.weight_mu.grad is not None else np.zeros(l.weight_mu.shape)).ravel(),
                (l.bias_mu.grad if l.bias_mu.grad is not None else np.zeros(l.bias_mu.shape)).ravel(),
            ]
            for l in net.shared
        ])
        acc += g * g
    for p in params:
        p.grad = None
    return acc / len(idx) * n_total


def ewc_penalty_node(net, state: EWCState):
    """(lam/2) sum_i fisher_acc_i (theta_i - anchor_i)^2 as a graph node."""
    total = None
    offset = 0
    for layer in net.shared:
        for mu in (layer.weight_mu, layer.bias_mu):
            n = mu.size
            f = state.fisher_acc[offset : offset + n].reshape(mu.shape)
            a = state.anchor_mu[offset : offset + n].reshape(mu.shape)
            offset += n
            term = ad.tsum(ad.mul(ad.square(ad.sub(mu, Tensor(a))), Tensor(f)))
            total = term if total is None else ad.add(total, term)
    return ad.mul(total, Tensor(np.full((), 0.5 * state.lam)))


def ewc_loss(net, task, x, y, state: EWCState, n_task=None):
    """Point-estimate loss: mean NLL at the means plus the anchor penalty.

    The accumulated curvature is at whole-dataset scale, so when n_task is
    given the penalty is divided by it to match the per-example NLL.
    """
    expected = flat_shared_mu(net).size
    if state.fisher_acc.size != expected:
        raise ValueError(
            f"EWC state size {state.fisher_acc.size} does not match net ({expected})"
        )
    nll = nll_node(net, task, x, y, noise=None)
    penalty = ewc_penalty_node(net, state)
    if n_task is not None:
        penalty = ad.mul(penalty, Tensor(np.full((), 1.0 / n_task)))
    return ad.add(nll, penalty)


def ewc_update_state(state: EWCState, fisher_new: np.ndarray, theta_now: np.ndarray) -> EWCState:
    if fisher_new.shape != state.fisher_acc.shape or theta_now.shape != state.anchor_mu.shape:
        raise ValueError("EWC update: shape mismatch")
    if np.any(fisher_new < 0):
        warnings.warn("negative Fisher entries clipped to 0", stacklevel=2)
        fisher_new = np.maximum(fisher_new, 0.0)
    return EWCState(
        state.gamma * state.fisher_acc + fisher_new,
        theta_now.copy(),
        state.lam,
        state.gamma,
    )


# -- 1-parameter curvature probe ------------------------------------------

_TOY_SIGMA0_SQ = 30.0


def _toy_f(which):
    eps = 1e-12
    if which == "f1":
        f = lambda t: np.abs(t) ** 1.6
        df = lambda t: 1.6 * np.abs(t) ** 0.6 * np.sign(t)
    elif which == "f2":
        f = lambda t: np.abs(t) ** 0.25
        df = lambda t: 0.25 * (np.abs(t) + eps) ** (-0.75) * np.sign(t)
    elif which == "f3":
        f = lambda t: np.cbrt((np.abs(t) - 0.5) ** 3 + 0.4)
        df = lambda t: (
            (np.abs(t) - 0.5) ** 2
            * ((np.abs(t) - 0.5) ** 3 + 0.4 + eps) ** (-2.0 / 3.0)
            * np.sign(t)
        )
    elif which == "linear":
        f = lambda t: t
        df = lambda t: np.ones_like(np.asarray(t, dtype=float))
    else:
        raise ValueError(f"unknown toy function {which!r}")
    return f, df


def curvature_probe(beta, toy, seed, n_points=1000):
    """Effective curvature variance from tempered VI on the 1-parameter model.

    Fits q = N(mu, s2) to the generative model x ~ N(f(theta), 30) by
    maximizing the tempered ELBO (Gauss-Hermite quadrature for the
    expected log-likelihood), then removes the tempering scale from the
    fitted precision: the returned value is 1 / (beta * (1/s2 - 1)).
    """
    f, df = _toy_f(toy)
    rng = np.random.default_rng(seed)
    data = rng.standard_normal(n_points)
    s1 = data.sum()
    s2 = (data**2).sum()
    n = n_points
    nodes, weights = np.polynomial.hermite_e.hermegauss(61)
    weights = weights / weights.sum()

    def loglik(theta):
        ft = f(theta)
        return -(s2 - 2.0 * s1 * ft + n * ft * ft) / (2.0 * _TOY_SIGMA0_SQ)

    def dloglik(theta):
        return (s1 - n * f(theta)) * df(theta) / _TOY_SIGMA0_SQ

    def neg_elbo_and_grad(z):
        mu, s = z  # s = log variance
        sig = np.exp(0.5 * s)
        theta = mu + sig * nodes
        e = np.sum(weights * loglik(theta))
        dl = weights * dloglik(theta)
        de_dmu = dl.sum()
        de_ds = 0.5 * sig * np.sum(dl * nodes)
        kl = 0.5 * (np.exp(s) + mu * mu - 1.0 - s)
        dkl_dmu = mu
        dkl_ds = 0.5 * (np.exp(s) - 1.0)
        val = -(e - beta * kl)
        return val, np.array([-(de_dmu - beta * dkl_dmu), -(de_ds - beta * dkl_ds)])

    best = None
    bounds = [(None, None), (-40.0, 10.0)]  # keep exp(s) finite during line search
    for mu0 in (0.3, 1.0, -0.7):
        res = minimize(
            neg_elbo_and_grad, x0=np.array([mu0, -2.0]), jac=True,
            method="L-BFGS-B", bounds=bounds,
        )
        if best is None or res.fun < best.fun:
            best = res
    if not np.isfinite(best.fun):
        raise FloatingPointError(f"curvature probe diverged: beta={beta}, toy={toy}")
    s2_fit = np.exp(best.x[1])
    denom = beta * (1.0 / s2_fit - 1.0)
    if denom <= 0:
        raise FloatingPointError(
            f"curvature probe: posterior no tighter than prior (beta={beta}, toy={toy})"
        )
    return 1.0 / denom
