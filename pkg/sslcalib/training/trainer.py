"""FixMatch-style training loop with optional VCC gating and INFUSE core sets."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from tqdm import tqdm

from ..analysis.metrics import evaluate_model
from ..analysis.report import REPORT_FILE, REPORT_SCHEMA_VERSION
from ..calibration.consistency import ensemble_score, temporal_scores, view_score
from ..calibration.queue import (
    CalibrationQueue, ConsistencyTraceWriter, FusionSettings, PredictionHistory,
    approx_calibrated_batch, fuse, normalize_scores,
)
from ..calibration.vcc import VccLossTerms, kl_closed_form, recon_loss, select_pseudo_labels, total_loss
from ..config import ExperimentConfig, config_from_flat, config_hash, flatten_config
from ..core import seeding
from ..core.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from ..core.tensor import (
    NonFiniteError, Tensor, add, backward, cross_entropy, one_hot, scale, sgd_step,
)
from ..data.augment import augment_strong, augment_weak
from ..data.dataset import Dataset, LabeledSplit
from ..nn.classifier import MlpClassifier, ModelPair, ema_update, mlp_forward, predict_proba
from ..nn.vae import VaeNet, reparameterize, vae_decode, vae_encode
from ..selection.infuse import CoreSet, build_core_set, refresh_schedule, write_coreset_csv

logger = logging.getLogger(__name__)

MODEL_FILE = "model.sslc"
TRACE_FILE = "consistency_trace.csv"
CORESET_FILE = "coreset.csv"


class TrainingDivergedError(RuntimeError):
    """A loss or gradient became non-finite."""

    def __init__(self, iteration: int, components: Dict[str, float]) -> None:
        self.iteration = iteration
        self.components = dict(components)
        detail = ", ".join(f"{k}={v!r}" for k, v in sorted(self.components.items())) or "no finished terms"
        super().__init__(f"training diverged at iteration {iteration}: {detail}")


# ----------------------------------------------------------------------
# Schedule and unlabeled loss
# ----------------------------------------------------------------------

def cosine_lr(k: int, total_iterations: int, eta0: float) -> float:
    """``eta0 * cos(7 pi k / (16 K))``."""
    if not 0 <= k <= total_iterations:
        raise ValueError(f"iteration {k} outside [0, {total_iterations}]")
    return eta0 * math.cos(7.0 * math.pi * k / (16.0 * total_iterations))


def fixmatch_unlabeled_loss(
    weak_probs: np.ndarray,
    strong_logits: Tensor,
    selection_score: np.ndarray,
    tau: float,
) -> Tuple[Tensor, np.ndarray]:
    """Masked pseudo-label cross-entropy on the strong view.

    The pseudo-label is the weak view's argmax; a row counts when its
    selection score reaches *tau*.  The mean runs over the whole batch.

    Returns
    -------
    (loss, mask)
    """
    weak_probs = np.asarray(weak_probs, dtype=np.float64)
    mask = select_pseudo_labels(selection_score, tau)
    targets = one_hot(weak_probs.argmax(axis=1), weak_probs.shape[1])
    return cross_entropy(strong_logits, targets, weights=mask.astype(np.float64)), mask


# ----------------------------------------------------------------------
# State
# ----------------------------------------------------------------------

@dataclass
class StepMetrics:
    iteration: int
    lr: float
    loss: float
    l_lab: float
    l_unlab: float
    l_recon: float = 0.0
    l_kl: float = 0.0
    mask_rate: float = 0.0
    n_calibrated: int = 0
    vcc_active: bool = False


@dataclass
class EvalRecord:
    iteration: int
    error_rate: float
    ece: float
    mce: float
    ace: float
    mask_rate: float
    lr: float


@dataclass
class TrainState:
    """Everything needed to continue a run bit-exactly."""

    iteration: int
    pair: ModelPair
    vae: Optional[VaeNet]
    queue: CalibrationQueue
    history: PredictionHistory
    streams: seeding.SeedStreams
    core_set: Optional[CoreSet] = None
    eval_records: List[EvalRecord] = field(default_factory=list)
    refresh_log: List[Dict[str, Any]] = field(default_factory=list)
    mask_window: List[float] = field(default_factory=list)
    unlabeled_consumed: int = 0
    elapsed: float = 0.0


def init_state(cfg: ExperimentConfig, n_features: int, n_classes: int) -> TrainState:
    streams = seeding.SeedStreams(cfg.seed)
    live = MlpClassifier.init(n_features, n_classes, streams[seeding.INIT], hidden=tuple(cfg.train.hidden))
    vae = None
    if cfg.vcc.enabled and cfg.vcc.reconstruction:
        vae = VaeNet.init(n_classes, n_features, streams[seeding.VAE_INIT], cfg.vcc.z_dim, tuple(cfg.vcc.vae_hidden))
    return TrainState(
        iteration=0,
        pair=ModelPair.from_live(live, cfg.train.ema_beta),
        vae=vae,
        queue=CalibrationQueue(cfg.consistency.queue_capacity),
        history=PredictionHistory(cfg.consistency.history_window),
        streams=streams,
    )


def save_state(state: TrainState, path: Union[str, Path], cfg: ExperimentConfig) -> Path:
    """Tensor records to *path* (SSLC) and bookkeeping to a JSON sidecar next to it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays: Dict[str, Any] = {}
    arrays.update(state.pair.live.named_parameters("clf"))
    arrays.update(state.pair.ema.named_parameters("ema"))
    if state.vae is not None:
        arrays.update(state.vae.named_parameters("vae"))
    arrays.update(state.queue.state_arrays("queue"))
    arrays.update(state.history.state_arrays("history"))
    save_checkpoint(path, arrays)
    sidecar = {
        "iteration": state.iteration,
        "config": flatten_config(cfg),
        "streams": state.streams.state_dict(),
        "core_set": state.core_set.to_dict() if state.core_set is not None else None,
        "eval_records": [asdict(r) for r in state.eval_records],
        "refresh_log": state.refresh_log,
        "mask_window": state.mask_window,
        "unlabeled_consumed": state.unlabeled_consumed,
        "elapsed": state.elapsed,
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True), encoding="utf-8")
    logger.debug("saved state at iteration %d to %s", state.iteration, path)
    return path


def read_sidecar(path: Union[str, Path]) -> Dict[str, Any]:
    sidecar = Path(path).with_suffix(".json")
    try:
        return json.loads(sidecar.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint sidecar {sidecar}: {exc}") from exc


def load_classifier(path: Union[str, Path]) -> Tuple[MlpClassifier, ExperimentConfig]:
    """Live classifier from a checkpoint, sized by the config echoed in its sidecar."""
    sidecar = read_sidecar(path)
    cfg = config_from_flat(sidecar["config"])
    arrays = load_checkpoint(path)
    try:
        n_features = arrays["clf.backbone.0.weight" if cfg.train.hidden else "clf.head.weight"].shape[0]
        n_classes = arrays["clf.head.weight"].shape[1]
    except KeyError as exc:
        raise CheckpointError(f"checkpoint {path} has no record {exc.args[0]}") from None
    model = MlpClassifier.init(n_features, n_classes, np.random.default_rng(0), hidden=tuple(cfg.train.hidden))
    model.load(arrays, "clf")
    return model, cfg


def load_state(path: Union[str, Path], cfg: ExperimentConfig, n_features: int, n_classes: int) -> TrainState:
    sidecar = read_sidecar(path)
    arrays = load_checkpoint(path)
    state = init_state(cfg, n_features, n_classes)
    state.pair.live.load(arrays, "clf")
    state.pair.ema.load(arrays, "ema")
    if state.vae is not None:
        state.vae.load(arrays, "vae")
    state.queue = CalibrationQueue.from_state_arrays(arrays, "queue")
    state.history = PredictionHistory.from_state_arrays(arrays, "history")
    state.streams = seeding.SeedStreams.from_state_dict(sidecar["streams"])
    state.iteration = int(sidecar["iteration"])
    state.core_set = CoreSet.from_dict(sidecar["core_set"]) if sidecar["core_set"] else None
    state.eval_records = [EvalRecord(**r) for r in sidecar["eval_records"]]
    state.refresh_log = list(sidecar["refresh_log"])
    state.mask_window = [float(v) for v in sidecar["mask_window"]]
    state.unlabeled_consumed = int(sidecar["unlabeled_consumed"])
    state.elapsed = float(sidecar["elapsed"])
    logger.debug("resumed state at iteration %d from %s", state.iteration, path)
    return state


# ----------------------------------------------------------------------
# One step
# ----------------------------------------------------------------------

def _fusion_settings(cfg: ExperimentConfig) -> FusionSettings:
    c = cfg.consistency
    return FusionSettings(c.invert_confidence_channel, c.use_ensemble, c.use_temporal, c.use_view)


def _calibrated_selection(
    state: TrainState,
    cfg: ExperimentConfig,
    u_ids: np.ndarray,
    xu_weak: np.ndarray,
    weak_probs: np.ndarray,
    epoch: int,
    trace: Optional[ConsistencyTraceWriter],
) -> Tuple[Optional[VccLossTerms], np.ndarray, int]:
    """Consistency scores, queue update, r~ targets and the VAE pass.

    Returns the VAE loss terms (None when no row had a valid target), the
    calibrated gating score per row (NaN where it falls back), and the count
    of calibrated rows.
    """
    c = cfg.consistency
    conf = weak_probs.max(axis=1)
    pseudo = weak_probs.argmax(axis=1)
    s_ens, _ = ensemble_score(xu_weak, state.pair.live, c.k_mc, c.mc_dropout, state.streams[seeding.MC_DROPOUT])
    s_tem = temporal_scores(weak_probs, state.history, u_ids)
    s_view = view_score(state.pair, xu_weak)
    raw = np.column_stack([s_ens, s_tem, s_view, conf])
    for example_id, y in zip(u_ids, weak_probs):
        state.history.update(int(example_id), y, epoch)
    state.queue.push_batch(u_ids, pseudo, raw, epoch)

    settings = _fusion_settings(cfg)
    normalized = normalize_scores(state.queue, raw)
    fused = np.asarray(fuse(normalized, settings))
    r_tilde, valid = approx_calibrated_batch(state.queue, pseudo, fused, settings)
    if trace is not None:
        trace.write(u_ids, epoch, pseudo, raw, normalized, fused, r_tilde)

    calibrated = np.full(len(u_ids), np.nan)
    n_valid = int(valid.sum())
    if n_valid == 0:
        return None, calibrated, 0
    if state.vae is None:
        calibrated[valid] = r_tilde[valid]
        return None, calibrated, n_valid

    c_in, x_in = weak_probs[valid], xu_weak[valid]
    mu, sigma = vae_encode(state.vae, c_in, x_in)
    noise = state.streams[seeding.VAE_NOISE]
    n_samples = cfg.vcc.z_samples
    r_sum: Optional[Tensor] = None
    recon_sum: Optional[Tensor] = None
    for _ in range(n_samples):
        z = reparameterize(mu, sigma, noise.standard_normal(mu.shape))
        r = vae_decode(state.vae, c_in, z, x_in)
        rl = recon_loss(r, r_tilde[valid])
        r_sum = r if r_sum is None else add(r_sum, r)
        recon_sum = rl if recon_sum is None else add(recon_sum, rl)
    assert r_sum is not None and recon_sum is not None
    calibrated[valid] = r_sum.data / n_samples
    terms = VccLossTerms(scale(recon_sum, 1.0 / n_samples), kl_closed_form(mu, sigma), cfg.vcc.lambda_vcc, cfg.train.lambda_unlab)
    return terms, calibrated, n_valid


def train_step(
    state: TrainState,
    lab_x: np.ndarray,
    lab_y: np.ndarray,
    u_ids: np.ndarray,
    u_x: np.ndarray,
    cfg: ExperimentConfig,
    total_iterations: int,
    trace: Optional[ConsistencyTraceWriter] = None,
) -> StepMetrics:
    """One SGD step on a labeled and an unlabeled batch, then the EMA update."""
    t = cfg.train
    k = state.iteration
    epoch = k // t.epoch_iterations
    lr = cosine_lr(k, total_iterations, t.eta0)
    live = state.pair.live
    n_classes = live.n_classes

    aug = state.streams[seeding.AUGMENT]
    policy = cfg.augment.to_policy()
    xl_weak = augment_weak(lab_x, policy, aug)
    xu_weak = augment_weak(u_x, policy, aug)
    xu_strong = augment_strong(u_x, policy, aug)

    components: Dict[str, float] = {}
    try:
        weak_probs = predict_proba(live, xu_weak)
        selection = weak_probs.max(axis=1)
        terms = VccLossTerms(lambda_vcc=cfg.vcc.lambda_vcc, lambda_unlab=t.lambda_unlab)
        n_calibrated = 0
        vcc_active = False
        if cfg.vcc.enabled:
            vae_terms, calibrated, n_calibrated = _calibrated_selection(
                state, cfg, u_ids, xu_weak, weak_probs, epoch, trace
            )
            if vae_terms is not None:
                terms = vae_terms
                components["l_recon"] = terms.recon.item()  # type: ignore[union-attr]
                components["l_kl"] = terms.kl.item()  # type: ignore[union-attr]
            vcc_active = epoch >= cfg.vcc.warmup_epochs
            if vcc_active:
                selection = np.where(np.isnan(calibrated), selection, calibrated)

        dropout = state.streams[seeding.DROPOUT]
        logits_l = mlp_forward(live, Tensor(xl_weak), t.train_dropout, train_mode=True, rng=dropout)
        l_lab = cross_entropy(logits_l, one_hot(lab_y, n_classes))
        components["l_lab"] = l_lab.item()
        logits_s = mlp_forward(live, Tensor(xu_strong), t.train_dropout, train_mode=True, rng=dropout)
        l_unlab, mask = fixmatch_unlabeled_loss(weak_probs, logits_s, selection, t.tau)
        components["l_unlab"] = l_unlab.item()
        loss = total_loss(l_lab, l_unlab, terms, cfg.vcc.literal_eq13_sign)
        components["loss"] = loss.item()
        if not math.isfinite(components["loss"]):
            raise TrainingDivergedError(k, components)
        backward(loss)
        params = live.parameters()
        if terms.has_vae and state.vae is not None:
            params = params + state.vae.parameters()
        sgd_step(params, lr)
    except NonFiniteError as exc:
        raise TrainingDivergedError(k, components) from exc

    ema_update(state.pair)
    state.iteration += 1
    state.unlabeled_consumed += len(u_ids)
    return StepMetrics(
        iteration=k,
        lr=lr,
        loss=components["loss"],
        l_lab=components["l_lab"],
        l_unlab=components["l_unlab"],
        l_recon=components.get("l_recon", 0.0),
        l_kl=components.get("l_kl", 0.0),
        mask_rate=float(mask.mean()),
        n_calibrated=n_calibrated,
        vcc_active=vcc_active,
    )


# ----------------------------------------------------------------------
# Run
# ----------------------------------------------------------------------

@dataclass
class RunReport:
    config: Dict[str, Any]
    config_hash: str
    seed: int
    iterations: int
    unlabeled_consumed: int
    eval_records: List[EvalRecord]
    final: Dict[str, float]
    wall_seconds: float
    coreset_refresh_log: List[Dict[str, Any]]
    completed: bool = True
    schema_version: int = REPORT_SCHEMA_VERSION

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def outcome(self) -> Dict[str, Any]:
        """The report without its wall-clock time."""
        data = self.to_dict()
        data.pop("wall_seconds")
        return data

    def write(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
        return path

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunReport":
        if data.get("schema_version") != REPORT_SCHEMA_VERSION:
            raise ValueError(
                f"unsupported report schema version {data.get('schema_version')!r} (expected {REPORT_SCHEMA_VERSION})"
            )
        data = dict(data)
        data["eval_records"] = [EvalRecord(**r) for r in data["eval_records"]]
        return cls(**data)

    @classmethod
    def read(cls, path: Union[str, Path]) -> "RunReport":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ValueError(f"cannot read report {path}: {exc}") from exc
        return cls.from_dict(data)


class Trainer:
    """Drive :func:`train_step` over a dataset.

    Parameters
    ----------
    cfg : ExperimentConfig
        Full experiment configuration; ``cfg.seed`` is the root seed.
    dataset : Dataset
        Must carry labeled, unlabeled and test splits.
    output_dir : Path, optional
        Where checkpoints, the report and optional dumps go.  Nothing is
        written when omitted.
    progress : bool
        Show a tqdm bar over iterations.
    """

    def __init__(
        self,
        cfg: ExperimentConfig,
        dataset: Dataset,
        output_dir: Optional[Union[str, Path]] = None,
        progress: bool = False,
    ) -> None:
        counts = dataset.counts()
        for split_name in ("labeled", "unlabeled", "test"):
            if counts[split_name] == 0:
                raise ValueError(f"dataset has an empty {split_name} split")
        self.cfg = cfg
        self.dataset = dataset
        self.output_dir = Path(output_dir) if output_dir is not None else None
        self.progress = progress
        self.labeled = dataset.labeled()
        self.unlabeled = dataset.unlabeled()
        self.test = dataset.test()
        self.validation: Optional[LabeledSplit] = dataset.validation() if counts["validation"] else None
        self._position = {int(i): p for p, i in enumerate(self.unlabeled.ids)}

    @property
    def total_iterations(self) -> int:
        """Iterations scaled by the keep ratio."""
        return max(1, math.ceil(round(self.cfg.infuse.keep_ratio * self.cfg.train.total_iterations, 9)))

    def init_state(self) -> TrainState:
        return init_state(self.cfg, self.dataset.n_features, self.dataset.n_classes)

    # ------------------------------------------------------------------
    def _maybe_refresh(self, state: TrainState) -> None:
        t, inf = self.cfg.train, self.cfg.infuse
        if inf.keep_ratio >= 1.0 or state.iteration % t.epoch_iterations:
            return
        epoch = state.iteration // t.epoch_iterations
        if not refresh_schedule(epoch, inf.refresh_period):
            return
        stream = seeding.CORESET if inf.selection == "random" else seeding.MIXUP
        state.core_set = build_core_set(
            state.pair.live, self.labeled, self.unlabeled, self.validation, inf,
            t.tau, t.lambda_unlab, state.streams[stream], epoch,
        )
        state.refresh_log.append({
            "epoch": epoch, "iteration": state.iteration,
            "size": state.core_set.size, "method": state.core_set.method,
        })
        logger.info("core set refreshed at epoch %d: kept %d of %d", epoch, state.core_set.size, len(self.unlabeled))
        if self.output_dir is not None:
            write_coreset_csv(state.core_set, self.output_dir / CORESET_FILE)

    def _pool(self, state: TrainState) -> np.ndarray:
        if state.core_set is None:
            return np.arange(len(self.unlabeled))
        return np.array([self._position[i] for i in state.core_set.sorted_ids()], dtype=np.int64)

    def _sample(self, state: TrainState) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        data = state.streams[seeding.DATA]
        t = self.cfg.train
        lab = data.integers(0, len(self.labeled), t.labeled_batch)
        pool = self._pool(state)
        unl = pool[data.integers(0, pool.size, t.unlabeled_batch)]
        return (
            self.labeled.features[lab], self.labeled.labels[lab],
            self.unlabeled.ids[unl], self.unlabeled.features[unl],
        )

    def _evaluate(self, state: TrainState, lr: float) -> EvalRecord:
        _, summary = evaluate_model(state.pair.live, self.test.features, self.test.labels, self.cfg.train.calibration_bins)
        mask_rate = float(np.mean(state.mask_window)) if state.mask_window else 0.0
        record = EvalRecord(state.iteration, mask_rate=mask_rate, lr=lr, **summary)
        state.eval_records.append(record)
        state.mask_window = []
        logger.info(
            "iter %d: error %.2f%% ece %.4f mce %.4f ace %.4f mask %.3f lr %.5f",
            record.iteration, record.error_rate, record.ece, record.mce, record.ace, record.mask_rate, record.lr,
        )
        return record

    def _checkpoint_path(self, iteration: int) -> Optional[Path]:
        if self.output_dir is None:
            return None
        return self.output_dir / "checkpoints" / f"ckpt-{iteration:08d}.sslc"

    def _report(self, state: TrainState, completed: bool) -> RunReport:
        final: Dict[str, float] = {}
        if completed and state.eval_records:
            last = state.eval_records[-1]
            final = {k: v for k, v in asdict(last).items() if k not in ("iteration", "lr")}
        return RunReport(
            config=flatten_config(self.cfg),
            config_hash=config_hash(self.cfg),
            seed=self.cfg.seed,
            iterations=state.iteration,
            unlabeled_consumed=state.unlabeled_consumed,
            eval_records=list(state.eval_records),
            final=final,
            wall_seconds=state.elapsed,
            coreset_refresh_log=list(state.refresh_log),
            completed=completed,
        )

    # ------------------------------------------------------------------
    def run(
        self,
        resume_from: Optional[Union[str, Path]] = None,
        stop_after: Optional[int] = None,
    ) -> RunReport:
        """Train to the scaled iteration count, or pause after *stop_after* iterations.

        A paused run writes a checkpoint (when an output directory is set)
        that ``run(resume_from=...)`` continues from bit-exactly.
        """
        if resume_from is not None:
            state = load_state(resume_from, self.cfg, self.dataset.n_features, self.dataset.n_classes)
        else:
            state = self.init_state()
        total = self.total_iterations
        stop = total if stop_after is None else min(int(stop_after), total)
        t = self.cfg.train

        trace = None
        if self.cfg.consistency.trace and self.output_dir is not None:
            trace_path = self.output_dir / TRACE_FILE
            if resume_from is None and trace_path.exists():
                trace_path.unlink()
            trace = ConsistencyTraceWriter(trace_path)

        logger.info(
            "training %d iterations (vcc=%s, keep_ratio=%s, seed=%d)",
            total, self.cfg.vcc.enabled, self.cfg.infuse.keep_ratio, self.cfg.seed,
        )
        started = time.perf_counter()
        with tqdm(total=stop, initial=state.iteration, disable=not self.progress, desc="train", unit="it") as bar:
            while state.iteration < stop:
                self._maybe_refresh(state)
                lab_x, lab_y, u_ids, u_x = self._sample(state)
                metrics = train_step(state, lab_x, lab_y, u_ids, u_x, self.cfg, total, trace)
                state.mask_window.append(metrics.mask_rate)
                bar.update(1)
                if state.iteration % t.eval_period == 0 or state.iteration == total:
                    self._evaluate(state, metrics.lr)
                path = self._checkpoint_path(state.iteration)
                if path is not None and t.checkpoint_period and state.iteration % t.checkpoint_period == 0:
                    state.elapsed += time.perf_counter() - started
                    started = time.perf_counter()
                    save_state(state, path, self.cfg)
        state.elapsed += time.perf_counter() - started

        completed = state.iteration >= total
        if self.output_dir is not None:
            if completed:
                save_state(state, self.output_dir / MODEL_FILE, self.cfg)
            else:
                path = self._checkpoint_path(state.iteration)
                assert path is not None
                save_state(state, path, self.cfg)
        report = self._report(state, completed)
        if self.output_dir is not None and completed:
            report.write(self.output_dir / REPORT_FILE)
        return report


def train_run(
    cfg: ExperimentConfig,
    dataset: Dataset,
    output_dir: Optional[Union[str, Path]] = None,
    progress: bool = False,
) -> RunReport:
    return Trainer(cfg, dataset, output_dir, progress).run()
