"""Training loop for the supervised, pseudo-labeling, FixMatch, FlexMatch and
MarginMatch variants.

Per epoch ``t``:

1. class thresholds are recomputed from the previous epoch's weak-view
   predictions (all equal to ``tau`` in epoch 1);
2. for every batch, unlabeled weak-view margins and erroneous strong-view
   margins are folded into the ledger, unlabeled examples are gated, and one
   SGD step is taken on ``L_s + lam * (L_u + L_e)``;
3. gamma becomes the q-th percentile accumulated virtual-class score of the
   erroneous cohort.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, IO, List, Optional

import numpy as np

from . import __version__
from .augment import AugmentSpec, strong, weak
from .config import TrainConfig
from .dataflow import (
    SslDataset,
    Split,
    TrainingView,
    batches,
    generate,
    inject_label_noise,
    split_ssl,
    stream,
)
from .ledger import Combine, MarginLedger, Measure, ScoreTracker
from .metrics import EpochMetrics, MetricsWriter, PurityAuditor, mask_rate
from .nncore import (
    LrSchedule,
    NetworkParams,
    NonFiniteError,
    OptimizerState,
    cosine_lr,
    init_params,
    logits,
    loss_and_grads,
    sgd_step,
    softmax,
)
from .sslloss import MaskDecision, decide
from .thresholds import ThresholdState

log = logging.getLogger(__name__)

DECISION_COLUMNS = ["epoch", "batch", "id", "pseudo_label", "confidence", "conf_gate", "apm_gate", "included"]


class TrainingAborted(RuntimeError):
    def __init__(self, message: str, epoch: int, batch: int) -> None:
        super().__init__(f"epoch {epoch}, batch {batch}: {message}")
        self.epoch = epoch
        self.batch = batch


@dataclass
class RunResult:
    params: NetworkParams
    history: List[EpochMetrics]
    final_test_error: float
    wall_seconds: float
    dataset: SslDataset = field(repr=False)
    config: TrainConfig = field(repr=False)


def build_dataset(cfg: TrainConfig) -> SslDataset:
    """Generate and split the dataset; depends only on the dataset section and seed."""
    d = cfg.dataset
    ds = generate(d.name, d.n, d.n_classes, d.noise, cfg.seed)
    ds = split_ssl(ds, d.labels_per_class, d.erroneous_frac, d.test_frac, cfg.seed)
    return inject_label_noise(ds, d.label_noise, cfg.seed)


def evaluate(params: NetworkParams, features: np.ndarray, gold: np.ndarray, n_classes: int) -> float:
    """Error rate of the argmax over the task classes (the virtual class is ignored)."""
    if len(features) == 0:
        raise ValueError("empty evaluation set")
    pred = np.argmax(logits(params, features)[:, :n_classes], axis=1)
    return float(np.mean(pred != np.asarray(gold)))


def batches_per_epoch(cfg: TrainConfig, view: TrainingView) -> int:
    n_unl = int(np.sum(view.split == Split.UNLABELED))
    return -(-n_unl // (cfg.ratio * cfg.batch_size))


class _Scorer:
    """Accumulated trust scores for the APM gate, for whichever measure is configured."""

    def __init__(self, cfg: TrainConfig, n_rows: int, n_outputs: int) -> None:
        self.measure = Measure(cfg.measure)
        combine = Combine(cfg.combine)
        if self.measure is Measure.MARGIN:
            self.table = MarginLedger(n_rows, n_outputs, combine, cfg.delta)
        else:
            self.table = ScoreTracker(n_rows, n_outputs, self.measure, combine, cfg.delta)

    def update(self, rows: np.ndarray, z: np.ndarray, epoch: int) -> None:
        if self.measure is Measure.MARGIN:
            self.table.update(rows, z, epoch)
        else:
            self.table.update(rows, softmax(z), epoch)

    def trust(self, rows: np.ndarray, classes: np.ndarray) -> np.ndarray:
        if self.measure is Measure.MARGIN:
            return self.table.query(rows, classes)
        return self.table.trust(rows, classes)


def run(
    cfg: TrainConfig,
    *,
    metrics_sink: Optional[IO[str]] = None,
    decision_sink: Optional[IO[str]] = None,
    ledger_sink: Optional[IO[str]] = None,
    should_abort: Optional[Callable[[], bool]] = None,
    dataset: Optional[SslDataset] = None,
) -> RunResult:
    cfg.validate()
    started = time.perf_counter()
    ds = dataset if dataset is not None else build_dataset(cfg)
    view = ds.training_view()
    auditor = PurityAuditor(ds.gold_labels, ds.ids)
    test_rows = ds.indices(Split.TEST)
    test_x, test_y = ds.features[test_rows], ds.gold_labels[test_rows]

    method = cfg.method
    n_cls = view.n_classes
    n_out = n_cls + 1
    virtual = view.virtual_class
    semi = method != "supervised"
    uses_err = method == "marginmatch"

    train_x = view.features[view.train_mask]
    aug = AugmentSpec(
        cfg.augment.weak_noise_sd,
        cfg.augment.strong_noise_sd,
        cfg.augment.strong_dropout_p,
        (cfg.augment.strong_scale_low, cfg.augment.strong_scale_high),
    ).absolute(train_x.std(axis=0))
    rng_lab = stream(cfg.seed, "aug-lab")
    rng_uw = stream(cfg.seed, "aug-uw")
    rng_us = stream(cfg.seed, "aug-us")
    rng_err = stream(cfg.seed, "aug-err")

    params = init_params((view.features.shape[1], *cfg.network.hidden, n_out), stream(cfg.seed, "init"))
    opt = OptimizerState.for_params(params, cfg.momentum)
    per_epoch = batches_per_epoch(cfg, view)
    sched = LrSchedule(cfg.base_lr, cfg.total_steps or cfg.epochs * per_epoch)

    n = len(view.features)
    state = ThresholdState(cfg.tau, cfg.q, n_out)
    scorer = _Scorer(cfg, n, n_out) if uses_err else None
    err_rows = view.indices(Split.ERRONEOUS)
    unl_rows = view.indices(Split.UNLABELED)
    last_conf = np.full(n, np.nan)
    last_pred = np.full(n, -1, dtype=np.int64)

    metrics_writer = MetricsWriter(metrics_sink) if metrics_sink is not None else None
    dec_writer = csv.writer(decision_sink, lineterminator="\n") if decision_sink is not None else None
    if dec_writer:
        dec_writer.writerow(DECISION_COLUMNS)
    led_writer = None
    if ledger_sink is not None and uses_err:
        led_writer = csv.writer(ledger_sink, lineterminator="\n")
        led_writer.writerow(
            ["id", "epoch", "split", *[f"apm_{c}" for c in range(n_out)],
             "pseudo_label", "conf_gate", "apm_gate", "included", "gamma"]
        )

    history: List[EpochMetrics] = []
    for epoch in range(1, cfg.epochs + 1):
        if should_abort is not None and should_abort():
            log.warning("abort requested before epoch %d", epoch)
            break
        seen = last_pred[unl_rows] >= 0
        state.refresh_flex(last_conf[unl_rows][seen], last_pred[unl_rows][seen])
        flex = state.flex.copy()
        gamma = state.gamma
        epoch_decisions: List[MaskDecision] = []
        err_updated = np.zeros(n, dtype=bool)
        sums = {"s": 0.0, "u": 0.0, "e": 0.0}
        lr = cosine_lr(opt.step_count, sched)

        for b, plan in enumerate(batches(view, cfg.batch_size, cfg.ratio, cfg.seed, epoch, uses_err)):
            lr = cosine_lr(opt.step_count, sched)
            xs, ts, ws, groups = [], [], [], []

            lab_x = weak(view.features[plan.labeled], aug, rng_lab)
            xs.append(lab_x)
            ts.append(view.target(plan.labeled))
            ws.append(np.full(len(plan.labeled), 1.0 / len(plan.labeled)))
            groups.append(np.full(len(plan.labeled), 0))

            if semi:
                u = plan.unlabeled
                u_weak = weak(view.features[u], aug, rng_uw)
                z_weak = logits(params, u_weak)
                probs = softmax(z_weak)
                trust = None
                if uses_err:
                    scorer.update(u, z_weak, epoch)
                    trust = scorer.trust(u, np.argmax(probs, axis=1))
                decisions = decide(
                    view.ids[u], probs, method=method, tau=cfg.tau, flex=flex,
                    virtual_class=virtual, trust=trust, gamma=gamma,
                )
                pseudo = np.array([d.pseudo_label for d in decisions])
                keep = np.array([d.included for d in decisions], dtype=bool)
                last_conf[u] = probs[np.arange(len(u)), pseudo]
                last_pred[u] = pseudo
                epoch_decisions.extend(decisions)
                if dec_writer:
                    for d in decisions:
                        dec_writer.writerow(
                            [epoch, b, d.example_id, d.pseudo_label, repr(d.confidence),
                             int(d.conf_gate), int(d.apm_gate), int(d.included)]
                        )
                # normalize_sums divides both unlabeled-side sums by |U_b|, which keeps
                # the per-example weight of unlabeled and erroneous terms equal
                w_u = cfg.lam / len(u) if cfg.normalize_sums else cfg.lam
                # pseudo-labeling trains on the weak view itself, the others on a strong view
                u_view = u_weak if method == "pseudolabel" else strong(view.features[u], aug, rng_us)
                xs.append(u_view)
                ts.append(pseudo)
                ws.append(np.where(keep, w_u, 0.0))
                groups.append(np.full(len(u), 1))

            if uses_err and len(plan.erroneous):
                e = plan.erroneous
                e_strong = strong(view.features[e], aug, rng_err)
                # margins recorded once per example per epoch: its first presentation
                _, first = np.unique(e, return_index=True)
                first = np.sort(first)
                fresh = first[~err_updated[e[first]]]
                if len(fresh):
                    scorer.update(e[fresh], logits(params, e_strong[fresh]), epoch)
                    err_updated[e[fresh]] = True
                w_e = cfg.lam / len(plan.unlabeled) if cfg.normalize_sums else cfg.lam
                # zero-weight rows would still perturb the summation order of the update
                if w_e > 0:
                    xs.append(e_strong)
                    ts.append(view.target(e))
                    ws.append(np.full(len(e), w_e))
                    groups.append(np.full(len(e), 2))

            x_all, t_all, w_all = np.vstack(xs), np.concatenate(ts), np.concatenate(ws)
            g_all = np.concatenate(groups)
            loss, grads, terms = loss_and_grads(params, x_all, t_all, w_all, return_terms=True)
            if not math.isfinite(loss):
                raise TrainingAborted("non-finite loss", epoch, b)
            sums["s"] += float(np.mean(terms[g_all == 0]))
            sums["u"] += float(np.nansum(terms[g_all == 1]))
            sums["e"] += float(np.nansum(terms[g_all == 2]))
            try:
                sgd_step(params, grads, opt, lr)
            except NonFiniteError as exc:
                raise TrainingAborted(str(exc), epoch, b) from exc

        if uses_err:
            seen_err = err_rows[scorer.table.seen(err_rows)]
            if len(seen_err):
                err_scores = scorer.trust(seen_err, np.full(len(seen_err), virtual))
                state.refresh_gamma(err_scores)
        else:
            err_scores = np.empty(0)

        test_error = evaluate(params, test_x, test_y, n_cls)
        n_batches = per_epoch
        if epoch_decisions:
            mr = mask_rate(epoch_decisions)
            imp = auditor.impurity(epoch_decisions)
            inc = sum(d.included for d in epoch_decisions)
            pres = len(epoch_decisions)
        else:
            mr, imp, inc, pres = 1.0, None, 0, len(unl_rows)
        has_err = uses_err and len(err_scores) > 0
        m = EpochMetrics(
            epoch=epoch,
            method=method,
            seed=cfg.seed,
            lr=lr,
            loss_s=sums["s"] / n_batches,
            loss_u=sums["u"] / n_batches,
            loss_e=sums["e"] / n_batches,
            mask_rate=mr,
            impurity=imp,
            test_error=test_error,
            gamma=gamma,
            err_apm_mean=float(np.mean(err_scores)) if has_err else None,
            err_apm_p50=float(np.median(err_scores)) if has_err else None,
            err_apm_p95=state.gamma if has_err else None,
            included=inc,
            presentations=pres,
            flex_thresholds=";".join(repr(float(v)) for v in flex),
        )
        history.append(m)
        if metrics_writer:
            metrics_writer.append_epoch(m)
        if led_writer:
            _dump_ledger(led_writer, scorer, view, epoch, epoch_decisions, gamma)
            ledger_sink.flush()
        log.debug("epoch %d: test error %.4f mask rate %.3f", epoch, test_error, mr)

    return RunResult(
        params=params,
        history=history,
        final_test_error=history[-1].test_error if history else float("nan"),
        wall_seconds=time.perf_counter() - started,
        dataset=ds,
        config=cfg,
    )


def _dump_ledger(writer, scorer: _Scorer, view: TrainingView, epoch, decisions, gamma) -> None:
    by_id = {d.example_id: d for d in decisions}
    rows = np.concatenate([view.indices(Split.UNLABELED), view.indices(Split.ERRONEOUS)])
    values = scorer.table.values
    for r in rows:
        d = by_id.get(int(view.ids[r]))
        tail = ["", "", "", ""] if d is None else [d.pseudo_label, int(d.conf_gate), int(d.apm_gate), int(d.included)]
        writer.writerow(
            [int(view.ids[r]), epoch, Split(view.split[r]).value,
             *[repr(float(v)) for v in values[r]], *tail, "-inf" if gamma == -math.inf else repr(gamma)]
        )


__all__ = ["RunResult", "TrainingAborted", "build_dataset", "evaluate", "run", "__version__"]
