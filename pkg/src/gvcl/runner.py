"""Sequential-task orchestration: train, roll the prior forward, evaluate.

Methods: gvcl / vcl (tempered or plain variational training, with or
without FiLM), ewc (point training with accumulated Fisher penalty) and
map_sgd (no penalty). After each task the result-matrix row over all seen
tasks is filled in.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import objectives as obj
from .autodiff import NonFiniteError
from .nets import Architecture, init_net, predict, save_checkpoint
from .objectives import EWCState, GVCLConfig, NetPrior
from .optim import SGD, Adam

VI_METHODS = {"gvcl", "gvcl_film", "vcl", "vcl_film"}
POINT_METHODS = {"ewc", "ewc_film", "map_sgd"}
METHODS = VI_METHODS | POINT_METHODS


@dataclass
class RunnerConfig:
    gvcl: GVCLConfig = field(default_factory=GVCLConfig)
    prior0_var: float = 1.0
    map_lr: float = 5e-2
    map_lr_decay: float = 0.98
    map_epochs: int = 200
    patience: int = 20
    fisher_samples: int = 600
    ewc_lam: float = 1.0
    ewc_gamma: float = 1.0


@dataclass
class RunRecord:
    method: str
    config: dict
    seed: int
    result_matrix: list  # lower-triangular rows
    task_ids: list
    wall_times: list
    checkpoints: list
    error: str = ""

    def to_json(self):
        return json.dumps(dataclasses.asdict(self), indent=2)

    @staticmethod
    def from_json(text):
        return RunRecord(**json.loads(text))


def _shuffled_batches(n, batch_size, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def train_task_vi(net, task, train, prior: NetPrior, cfg: GVCLConfig, rng):
    params = net.shared_variational_params()
    if net.film_enabled:
        for fp in net.film[task]:
            params += [fp.gamma, fp.shift]
    if net.arch.head_in:
        params += net.heads[task].variational_params()
    optimizer = Adam(params, lr=cfg.lr)
    n = len(train)
    for _ in range(cfg.epochs):
        for idx in _shuffled_batches(n, cfg.batch_size, rng):
            optimizer.zero_grad()
            loss = obj.beta_elbo_loss(
                net, task, train.inputs[idx], train.labels[idx], prior, cfg, n, rng
            )
            ad.backward(loss)
            optimizer.step()


def _accuracy_point(net, task, ds):
    probs = predict(net, task, ds.inputs, mode="mean")
    return float((probs.argmax(axis=1) == ds.labels).mean())


def train_task_point(net, task, train, val, state: EWCState, cfg: RunnerConfig, gcfg, rng):
    params = [p for l in net.shared for p in (l.weight_mu, l.bias_mu)]
    for fp in net.film[task]:
        if net.film_enabled:
            params += [fp.gamma, fp.shift]
    if net.arch.head_in:
        head = net.heads[task]
        params += [head.weight_mu, head.bias_mu]
    optimizer = SGD(params, lr=cfg.map_lr, decay=cfg.map_lr_decay)
    n = len(train)
    best_acc = -1.0
    best_snapshot = None
    stale = 0
    for _ in range(cfg.map_epochs):
        for idx in _shuffled_batches(n, gcfg.batch_size, rng):
            optimizer.zero_grad()
            loss = obj.ewc_loss(net, task, train.inputs[idx], train.labels[idx], state, n)
            ad.backward(loss)
            optimizer.step()
        acc = _accuracy_point(net, task, val)
        if acc > best_acc:
            best_acc = acc
            best_snapshot = [p.data.copy() for p in params]
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    if best_snapshot is not None:
        for p, d in zip(params, best_snapshot):
            p.data = d


def temper_transition(net, factor):
    """Scale every shared-posterior variance by a constant factor."""
    if factor <= 0:
        raise ValueError(f"tempering factor must be positive, got {factor}")
    for layer in net.shared:
        layer.weight_logvar.data = np.log(np.exp(layer.weight_logvar.data) * factor)
        layer.bias_logvar.data = np.log(np.exp(layer.bias_logvar.data) * factor)


def evaluate_matrix_row(net, tasks_seen, num_samples, rng):
    """Sampled test accuracy on every task trained so far."""
    row = []
    for spec in tasks_seen:
        if num_samples == 0:
            probs = predict(net, spec.task_id, spec.test.inputs, mode="mean")
        else:
            probs = predict(
                net, spec.task_id, spec.test.inputs, num_samples=num_samples, rng=rng
            )
        row.append(float((probs.argmax(axis=1) == spec.test.labels).mean()))
    return row


def _default_arch(tasks):
    x = tasks[0].train.inputs
    if x.ndim == 4:
        return Architecture.conv_small(in_shape=x.shape[1:])
    return Architecture.mlp(input_dim=x.shape[1])


def run_continual(method, tasks, cfg: RunnerConfig, seed, arch=None, out_dir=None):
    """Train a task sequence and return the filled RunRecord."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {sorted(METHODS)}")
    if arch is None:
        arch = _default_arch(tasks)
    gcfg = dataclasses.replace(cfg.gvcl)
    if method in ("vcl", "vcl_film"):
        gcfg = dataclasses.replace(gcfg, beta=1.0, lam=1.0)
    film = method.endswith("_film")

    seq = np.random.SeedSequence(seed)
    init_seed, train_seed, eval_seed = [int(s.generate_state(1)[0]) for s in seq.spawn(3)]
    net = init_net(arch, init_seed)
    net.film_enabled = film
    train_rng = np.random.default_rng(train_seed)
    eval_rng = np.random.default_rng(eval_seed)

    prior = obj.initial_prior(net, cfg.prior0_var)
    state = None  # EWC state, created after the net exists

    record = RunRecord(
        method=method,
        config=dataclasses.asdict(cfg),
        seed=seed,
        result_matrix=[],
        task_ids=[t.task_id for t in tasks],
        wall_times=[],
        checkpoints=[],
    )
    is_vi = method in VI_METHODS
    for t, spec in enumerate(tasks):
        t0 = time.perf_counter()
        net.add_task(spec.task_id, spec.classes, train_rng)
        try:
            if is_vi:
                train_task_vi(net, spec.task_id, spec.train, prior, gcfg, train_rng)
            else:
                if state is None:
                    state = obj.fresh_ewc_state(net, cfg.ewc_lam, cfg.ewc_gamma)
                    if method == "map_sgd":
                        state = dataclasses.replace(state, lam=0.0)
                train_task_point(net, spec.task_id, spec.train, spec.val, state, cfg, gcfg, train_rng)
        except NonFiniteError as e:
            record.error = f"divergence during task {spec.task_id}: {e}"
            break
        if is_vi:
            prior = obj.posterior_to_prior(net, cfg.prior0_var, gcfg.lam)
        elif method != "map_sgd":
            fisher = obj.fisher_diag(
                net,
                spec.task_id,
                spec.train.inputs,
                spec.train.labels,
                mode="empirical",
                rng=train_rng,
                max_samples=cfg.fisher_samples,
            )
            state = obj.ewc_update_state(state, fisher, obj.flat_shared_mu(net))
        n_eval = gcfg.eval_samples if is_vi else 0
        record.result_matrix.append(
            evaluate_matrix_row(net, tasks[: t + 1], n_eval, eval_rng)
        )
        record.wall_times.append(time.perf_counter() - t0)
        if out_dir is not None:
            path = f"{out_dir}/ckpt_{t}.json"
            save_checkpoint(net, path)
            record.checkpoints.append(path)
    return record, net


def run_independent(tasks, cfg: RunnerConfig, seed, family="vi", arch=None):
    """Reference accuracies from single-task training (one fresh net each)."""
    accs = []
    method = "gvcl" if family == "vi" else "map_sgd"
    for i, spec in enumerate(tasks):
        record, _ = run_continual(method, [spec], cfg, seed + i, arch=arch)
        accs.append(record.result_matrix[0][0])
    return accs
