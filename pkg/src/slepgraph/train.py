"""Loss, optimiser, dataset splitting and the training / evaluation loops."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .model import GraphContext, ModelConfig, ModelState, backward, forward, init_state, mask_penalty
from .model import SLEPNET
from .synth import LabeledDataset


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 300
    lr: float = 1e-3
    weight_decay: float = 1e-4
    label_smoothing: float = 0.1
    batch_size: int = 32
    split_fraction: float = 0.8
    n_runs: int = 10
    seed: int = 0

    def validate(self) -> None:
        if not 0 < self.split_fraction < 1:
            raise ValueError("train.split_fraction must lie in (0, 1)")
        if not 0 <= self.label_smoothing < 1:
            raise ValueError("train.label_smoothing must lie in [0, 1)")
        if self.epochs < 0 or self.batch_size < 1 or self.n_runs < 1:
            raise ValueError("train.epochs, batch_size and n_runs must be positive")
        if self.lr <= 0 or self.weight_decay < 0:
            raise ValueError("train.lr must be positive and weight_decay non-negative")


@dataclass
class Metrics:
    train_loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    test_loss: list = field(default_factory=list)
    test_acc: list = field(default_factory=list)
    best_test_acc: float = 0.0
    best_epoch: int = 0
    best_subject_acc: float = 0.0
    final_test_acc: float = 0.0
    final_subject_acc: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


# -- loss ---------------------------------------------------------------------

def _log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy_smoothed(logits, label, eps: float = 0.1):
    """Label-smoothed cross-entropy and its gradient with respect to the logits.

    Targets are ``(1 - eps) * onehot + eps / c``. Accepts a single logit vector
    with an integer label, or a (B, c) batch with a label vector, in which case
    the loss (and gradient) is the batch mean.
    """
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise FloatingPointError("non-finite logits")
    single = z.ndim == 1
    if single:
        z = z[None]
    y = np.atleast_1d(np.asarray(label, dtype=int))
    B, c = z.shape
    if c < 2:
        raise ValueError("need at least two classes")
    if not 0 <= eps < 1:
        raise ValueError("label smoothing must lie in [0, 1)")
    q = np.full((B, c), eps / c)
    q[np.arange(B), y] += 1.0 - eps
    logp = _log_softmax(z)
    loss = -np.sum(q * logp, axis=1)
    grad = np.exp(logp) - q
    if single:
        return float(loss[0]), grad[0]
    return float(loss.mean()), grad / B


# -- optimiser ----------------------------------------------------------------

@dataclass
class AdamWState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict) -> "AdamWState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adamw_step(params: dict, grads: dict, moments: AdamWState, lr: float, weight_decay: float = 0.0,
               beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One in-place AdamW update with decoupled weight decay and bias correction."""
    moments.t += 1
    t = moments.t
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {k} {p.shape}")
        m = moments.m[k]
        v = moments.v[k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p *= 1.0 - lr * weight_decay
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


# -- splitting ----------------------------------------------------------------

def split_dataset(ds: LabeledDataset, fraction: float = 0.8, seed: int = 0):
    """Stratified split at subject level: every subject lands wholly in one side.

    With one sample per subject this is an ordinary per-sample stratified split.
    Returns ``(train_idx, test_idx)`` as sorted index arrays.
    """
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    subjects = np.unique(ds.subjects)
    subj_label = {}
    for s in subjects:
        labs = np.unique(ds.labels[ds.subjects == s])
        if labs.size != 1:
            raise ValueError(f"subject {s} carries more than one label")
        subj_label[s] = int(labs[0])
    train_s, test_s = [], []
    for c in sorted(set(subj_label.values())):
        members = np.array([s for s in subjects if subj_label[s] == c])
        n_samples = np.count_nonzero(ds.labels == c)
        if n_samples < 2 or members.size < 2:
            raise ValueError(f"class {c} has too few samples/subjects to split")
        members = rng.permutation(members)
        n_train = int(round(fraction * members.size))
        n_train = min(max(n_train, 1), members.size - 1)
        train_s.extend(members[:n_train])
        test_s.extend(members[n_train:])
    train_idx = np.nonzero(np.isin(ds.subjects, train_s))[0]
    test_idx = np.nonzero(np.isin(ds.subjects, test_s))[0]
    return train_idx, test_idx


# -- training -----------------------------------------------------------------

def predict_logits(state: ModelState, ctx: GraphContext, ds: LabeledDataset, batch_size: int = 64) -> np.ndarray:
    out = []
    for start in range(0, len(ds), batch_size):
        sl = slice(start, start + batch_size)
        logits, _ = forward(state, ctx, ds.X[sl], ds.timepoints[sl])
        out.append(np.atleast_2d(logits))
    if not out:
        return np.zeros((0, state.config.n_classes))
    return np.concatenate(out)


def evaluate(state: ModelState, ctx: GraphContext, ds: LabeledDataset, eps: float = 0.0) -> dict:
    """Per-snapshot accuracy/loss and per-subject accuracy by mean-logit vote."""
    logits = predict_logits(state, ctx, ds)
    if len(ds) == 0:
        return {"acc": 0.0, "loss": 0.0, "subject_acc": 0.0}
    loss, _ = cross_entropy_smoothed(logits, ds.labels, eps)
    acc = float(np.mean(np.argmax(logits, axis=1) == ds.labels))
    hits = []
    for s in np.unique(ds.subjects):
        sel = ds.subjects == s
        vote = int(np.argmax(logits[sel].mean(axis=0)))
        hits.append(vote == int(ds.labels[sel][0]))
    return {"acc": acc, "loss": float(loss), "subject_acc": float(np.mean(hits))}


def train(model_config: ModelConfig, train_config: TrainConfig, ds: LabeledDataset,
          ctx: Optional[GraphContext] = None, split=None, verbose: bool = False, callback=None):
    """Train one model and return ``(best_state, metrics, ctx)``.

    The returned state is the one with the highest test accuracy seen at the
    end of any epoch (latest on ties); epoch 0 is the initial model.
    ``callback(epoch, state, metrics)`` runs after every epoch if given.
    """
    train_config.validate()
    mc = replace(model_config, in_features=ds.n_features, n_classes=max(model_config.n_classes, ds.n_classes))
    mc.validate(ds.graph.n_nodes)
    if ctx is None:
        ctx = GraphContext.build(ds.graph, mc)
    if split is None:
        split = split_dataset(ds, train_config.split_fraction, train_config.seed)
    tr, te = ds.subset(split[0]), ds.subset(split[1])
    state = init_state(mc)
    opt = AdamWState.zeros_like(state.params)
    rng = np.random.default_rng([train_config.seed, 1])
    eps = train_config.label_smoothing
    use_penalty = mc.arch == SLEPNET

    metrics = Metrics()
    first = evaluate(state, ctx, te, eps)
    best_state = state.copy()
    metrics.best_test_acc, metrics.best_subject_acc = first["acc"], first["subject_acc"]
    metrics.final_test_acc, metrics.final_subject_acc = first["acc"], first["subject_acc"]
    for epoch in range(1, train_config.epochs + 1):
        ctx.clear_cache()
        order = rng.permutation(len(tr))
        tot_loss, tot_hit = 0.0, 0
        for start in range(0, len(tr), train_config.batch_size):
            idx = order[start:start + train_config.batch_size]
            try:
                logits, cache = forward(state, ctx, tr.X[idx], tr.timepoints[idx])
                loss, dlogits = cross_entropy_smoothed(logits, tr.labels[idx], eps)
                if use_penalty:
                    m = cache["basis"]["m"]
                    pen, _ = mask_penalty(m)
                    loss += pen + mc.mask_l1 * float(m.mean())
                backward(state, cache, dlogits, ctx, penalty=use_penalty)
            except (ArithmeticError, FloatingPointError) as exc:
                raise TrainingError(f"epoch {epoch}, batch starting at {start}: {exc}") from exc
            adamw_step(state.params, state.grads, opt, train_config.lr, train_config.weight_decay)
            tot_loss += loss * idx.size
            tot_hit += int(np.sum(np.argmax(logits, axis=1) == tr.labels[idx]))
        state.epoch = epoch
        ctx.clear_cache()
        ev = evaluate(state, ctx, te, eps)
        metrics.train_loss.append(tot_loss / len(tr))
        metrics.train_acc.append(tot_hit / len(tr))
        metrics.test_loss.append(ev["loss"])
        metrics.test_acc.append(ev["acc"])
        metrics.final_test_acc, metrics.final_subject_acc = ev["acc"], ev["subject_acc"]
        if ev["acc"] >= metrics.best_test_acc:
            metrics.best_test_acc, metrics.best_epoch = ev["acc"], epoch
            metrics.best_subject_acc = ev["subject_acc"]
            best_state = state.copy()
        if callback is not None:
            callback(epoch, state, metrics)
        if verbose:
            print(f"epoch {epoch:4d} loss {metrics.train_loss[-1]:.4f} train {metrics.train_acc[-1]:.3f} "
                  f"test {ev['acc']:.3f} subj {ev['subject_acc']:.3f}")
    return best_state, metrics, ctx


def _ablation_run(args):
    K, seed, model_config, train_config, ds = args
    mc = replace(model_config, K=int(K), seed=seed)
    tc = replace(train_config, seed=seed)
    _, metrics, _ = train(mc, tc, ds)
    return metrics.best_test_acc


def ablation_sweep(K_list, model_config: ModelConfig, train_config: TrainConfig, ds: LabeledDataset,
                   n_runs: Optional[int] = None, jobs: int = 1) -> list:
    """Train ``n_runs`` seeded models per bandwidth and tabulate best test accuracy.

    Run ``r`` uses seed ``train_config.seed + r`` for both the split and the
    model. With ``jobs > 1`` runs execute in worker processes; results do not
    depend on ``jobs``. Returns rows ``{"K", "mean_acc", "std_acc", "n_runs", "accs"}``.
    """
    n_runs = train_config.n_runs if n_runs is None else n_runs
    for K in K_list:
        if K > ds.graph.n_nodes:
            raise ValueError(f"K={K} exceeds graph size {ds.graph.n_nodes}")
    tasks = [(K, train_config.seed + r, model_config, train_config, ds) for K in K_list for r in range(n_runs)]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            accs_flat = list(pool.map(_ablation_run, tasks))
    else:
        accs_flat = [_ablation_run(t) for t in tasks]
    rows = []
    for i, K in enumerate(K_list):
        accs = accs_flat[i * n_runs:(i + 1) * n_runs]
        rows.append({"K": int(K), "mean_acc": float(np.mean(accs)), "std_acc": float(np.std(accs)),
                     "n_runs": n_runs, "accs": accs})
    return rows


def write_ablation_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["K", "mean_acc", "std_acc", "n_runs"])
        for r in rows:
            w.writerow([r["K"], repr(r["mean_acc"]), repr(r["std_acc"]), r["n_runs"]])


def write_metrics_json(metrics: Metrics, path, **extra) -> None:
    doc = metrics.to_dict()
    doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
