"""Session protocol: class splits, episodic sampling, base-session
finetuning, incremental classifier updates with a frozen extractor,
cumulative evaluation, and repeated-run aggregation.

Session 0 finetunes the extractor on one few-shot episode and fits the
classifier from the resulting embeddings. Sessions 1..M freeze the
extractor, extract embeddings for a new episode of unseen classes, and
update the classifier analytically. After session m the model is scored
on the union of the test sets of sessions 0..m.
"""

from __future__ import annotations

import concurrent.futures
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import classifiers as cls
from . import encoder as enc
from .audio import (
    SynthConfig,
    fit_to_length,
    load_wav,
    log_mel_spectrogram,
    patch_split,
    read_manifest,
    synth_class_waveform,
)
from .config import ExperimentConfig
from .errors import (
    DivergenceError,
    FfcacError,
    PlanError,
    ProtocolViolationError,
    SamplingError,
    UsageError,
)

# sub-stream tags for seed derivation (SeedSequence entropy tuples)
_TAG_PLAN = 11
_TAG_INIT = 23
_TAG_EPISODE = 37
_TAG_HEAD = 53


def _rng(*entropy) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


# ---------------------------------------------------------------------------
# clip references and datasets


@dataclass(frozen=True)
class ClipRef:
    """One clip: either a WAV on disk or a synthesizable (class, seed)."""

    label: str
    path: str | None = None
    synth_class: int | None = None
    synth_seed: int | None = None


@dataclass(frozen=True)
class DatasetItem:
    ref: ClipRef
    split: str  # train | test


def dataset_from_manifest(manifest_path) -> list[DatasetItem]:
    root = Path(manifest_path).parent
    items = []
    for row in read_manifest(manifest_path):
        ref = ClipRef(label=row.label, path=str(root / row.path))
        items.append(DatasetItem(ref=ref, split=row.split))
    return items


def synthetic_dataset(num_classes: int, clips_per_class: int, train_per_class: int,
                      seed: int) -> list[DatasetItem]:
    """Virtual dataset of synthesizable clips; no files are written."""
    items = []
    for c in range(num_classes):
        label = f"class{c:02d}"
        for i in range(clips_per_class):
            inst = int(_rng(seed, c, i).integers(0, 2**31 - 1))
            ref = ClipRef(label=label, synth_class=c, synth_seed=inst)
            items.append(DatasetItem(ref=ref, split="train" if i < train_per_class else "test"))
    return items


# ---------------------------------------------------------------------------
# session plans and episodes


@dataclass
class SessionPlan:
    session_labels: list[list[str]]  # disjoint label sets Y_0..Y_M
    shots: list[int]  # K_m per session
    train_items: dict[str, list[ClipRef]]
    test_items: dict[str, list[ClipRef]]

    @property
    def num_incremental(self) -> int:
        return len(self.session_labels) - 1

    def labels_through(self, m: int) -> list[str]:
        out: list[str] = []
        for s in self.session_labels[: m + 1]:
            out.extend(s)
        return out


def make_splits(items: list[DatasetItem], num_incremental: int, base_classes: int,
                inc_classes_per_session: int, seed: int, shots: int = 5) -> SessionPlan:
    """Deterministically assign classes to sessions and index the items.

    Labels are shuffled once (seeded) and dealt out: the first
    ``base_classes`` go to session 0, then ``inc_classes_per_session`` per
    incremental session. Train/test membership follows the items' splits.
    """
    train_items: dict[str, list[ClipRef]] = {}
    test_items: dict[str, list[ClipRef]] = {}
    for item in items:
        bucket = train_items if item.split == "train" else test_items
        bucket.setdefault(item.ref.label, []).append(item.ref)
    labels = sorted(set(train_items) | set(test_items))
    needed = base_classes + num_incremental * inc_classes_per_session
    if len(labels) < needed:
        raise PlanError(
            f"plan needs {needed} classes ({base_classes} base + "
            f"{num_incremental} x {inc_classes_per_session}), dataset has {len(labels)}"
        )
    order = list(labels)
    _rng(seed, _TAG_PLAN).shuffle(order)
    session_labels = [sorted(order[:base_classes])]
    at = base_classes
    for _ in range(num_incremental):
        session_labels.append(sorted(order[at : at + inc_classes_per_session]))
        at += inc_classes_per_session

    short = []
    for sess in session_labels:
        for label in sess:
            n_train = len(train_items.get(label, ()))
            n_test = len(test_items.get(label, ()))
            if n_train < shots:
                short.append(f"{label}: {n_train} train items < {shots} shots")
            if n_test < 1:
                short.append(f"{label}: no test items")
    if short:
        raise PlanError("plan infeasible — " + "; ".join(short))
    return SessionPlan(
        session_labels=session_labels,
        shots=[shots] * len(session_labels),
        train_items=train_items,
        test_items=test_items,
    )


@dataclass
class Episode:
    session: int
    pairs: list[ClipRef]  # exactly N_m * K_m refs, grouped by class

    @property
    def labels(self) -> list[str]:
        seen: list[str] = []
        for ref in self.pairs:
            if ref.label not in seen:
                seen.append(ref.label)
        return seen


def sample_episode(plan: SessionPlan, m: int, seed: int) -> Episode:
    """K_m training clips per class of session m, without replacement."""
    if not 0 <= m < len(plan.session_labels):
        raise UsageError(f"session {m} outside plan with {len(plan.session_labels)} sessions")
    k = plan.shots[m]
    rng = _rng(seed, _TAG_EPISODE, m)
    pairs: list[ClipRef] = []
    for label in plan.session_labels[m]:
        pool = plan.train_items.get(label, [])
        if len(pool) < k:
            raise SamplingError(f"class {label} has {len(pool)} train items, episode needs {k}")
        chosen = rng.choice(len(pool), size=k, replace=False)
        pairs.extend(pool[i] for i in sorted(chosen))
    return Episode(session=m, pairs=pairs)


# ---------------------------------------------------------------------------
# clip -> patches -> embedding pipeline


class ClipPipeline:
    """Caches the deterministic clip -> log-mel -> patch-matrix stage so
    repeated epochs and evaluations do not redo frontend work."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.enc_cfg = cfg.encoder_config()
        self.synth_cfg: SynthConfig = cfg.synth_signal_config()
        self._patches: dict[ClipRef, np.ndarray] = {}

    def waveform(self, ref: ClipRef):
        if ref.path is not None:
            return load_wav(ref.path, expected_rate_hz=self.cfg.frontend.sample_rate_hz)
        return synth_class_waveform(ref.synth_class, ref.synth_seed, self.synth_cfg)

    def patches(self, ref: ClipRef) -> np.ndarray:
        cached = self._patches.get(ref)
        if cached is None:
            w = fit_to_length(self.waveform(ref), self.cfg.frontend.clip_samples)
            lms = log_mel_spectrogram(w, self.cfg.frontend)
            seq = patch_split(lms, self.cfg.patch.s_f, self.cfg.patch.s_t, self.cfg.patch.stride)
            cached = seq.patches
            self._patches[ref] = cached
        return cached

    def embed(self, ref: ClipRef, params: enc.MeeParams) -> np.ndarray:
        return enc.extract_embedding(self.patches(ref), params, self.enc_cfg)

    def embed_batch(self, refs, params: enc.MeeParams) -> np.ndarray:
        return np.stack([self.embed(ref, params) for ref in refs])


# ---------------------------------------------------------------------------
# base and incremental sessions


@dataclass
class BaseSessionResult:
    params: enc.MeeParams
    head: cls.CosineHead
    classifier: "cls.RidgeState | cls.Prototypes"
    epoch_losses: list[float]
    lam: float | None


def _episode_onehot(episode: Episode, labels: list[str]) -> np.ndarray:
    index = {label: i for i, label in enumerate(labels)}
    y = np.zeros((len(episode.pairs), len(labels)))
    for r, ref in enumerate(episode.pairs):
        y[r, index[ref.label]] = 1.0
    return y


def run_base_session(episode: Episode, pipeline: ClipPipeline, cfg: ExperimentConfig,
                     seed: int) -> BaseSessionResult:
    """Finetune the extractor on the base episode under the scaled
    cosine-softmax loss, then fit the classifier from the final embeddings."""
    enc_cfg = pipeline.enc_cfg
    labels = episode.labels
    label_index = {label: i for i, label in enumerate(labels)}
    targets = np.array([label_index[ref.label] for ref in episode.pairs])

    params = enc.init_mee_params(enc_cfg, int(_rng(seed, _TAG_INIT).integers(0, 2**31 - 1)))
    head = cls.init_cosine_head(
        len(labels), enc_cfg.dim, cfg.train.eta,
        int(_rng(seed, _TAG_HEAD).integers(0, 2**31 - 1)),
    )
    trainable = params.tensors() + [head.weight]
    patch_mats = [pipeline.patches(ref) for ref in episode.pairs]

    losses: list[float] = []
    for epoch in range(cfg.train.epochs):
        rows = []
        for mat in patch_mats:
            feats = enc.encoder_forward(mat, params, enc_cfg)
            out = enc.fuse(feats, params) if enc_cfg.use_fusion else enc.EmbeddingOutput(e=feats[-1])
            rows.append(ad.reshape(out.e, (1, enc_cfg.dim)))
        loss = cls.cosine_loss(ad.concat(rows, axis=0), targets, head)
        value = loss.values.item()
        if not np.isfinite(value):
            raise DivergenceError(f"non-finite training loss at epoch {epoch}")
        losses.append(value)
        ad.zero_grads(trainable)
        ad.backward(loss)
        ad.sgd_step(trainable, [p.grad for p in trainable],
                    cfg.train.learning_rate, cfg.train.weight_decay)

    embeddings = pipeline.embed_batch(episode.pairs, params)
    onehot = _episode_onehot(episode, labels)
    if cfg.classifier.kind == "pbc":
        classifier = cls.prototype_fit(embeddings, onehot, labels)
        lam = None
    else:
        lam = cfg.classifier.fixed_lam()
        if lam is None:
            lam = cls.select_lambda_cv(embeddings, onehot, cfg.classifier.lam_grid,
                                       cfg.classifier.cv_folds, seed)
        classifier = cls.fit_base(embeddings, onehot, lam, labels)
    return BaseSessionResult(params=params, head=head, classifier=classifier,
                             epoch_losses=losses, lam=lam)


def run_incremental_session(params: enc.MeeParams, classifier, episode: Episode,
                            pipeline: ClipPipeline, cfg: ExperimentConfig, seed: int = 0):
    """Frozen-extractor session: embed the episode, update the classifier
    analytically. The extractor is checksummed before and after."""
    before = enc.params_checksum(params)
    labels = episode.labels
    embeddings = pipeline.embed_batch(episode.pairs, params)
    onehot = _episode_onehot(episode, labels)
    if isinstance(classifier, cls.Prototypes):
        updated = cls.prototype_update(classifier, embeddings, onehot, labels)
    else:
        updated = cls.update_incremental(classifier, embeddings, onehot, labels)
        if cfg.classifier.relambda_each_session and cfg.classifier.fixed_lam() is None:
            # optional per-session re-selection on the new episode only
            updated.lam = cls.select_lambda_cv(embeddings, onehot, cfg.classifier.lam_grid,
                                               min(cfg.classifier.cv_folds, len(embeddings)), seed)
            updated._weights = None
    after = enc.params_checksum(params)
    if before != after:
        raise ProtocolViolationError("extractor weights changed during an incremental session")
    return updated


# ---------------------------------------------------------------------------
# evaluation and metrics


@dataclass
class EvalResult:
    accuracy: float
    correct: int
    total: int


def evaluate_items(predict_fn, refs) -> EvalResult:
    refs = list(refs)
    if not refs:
        raise UsageError("no test items to evaluate")
    correct = sum(int(predict_fn(ref) == ref.label) for ref in refs)
    return EvalResult(accuracy=correct / len(refs), correct=correct, total=len(refs))


def evaluate(params: enc.MeeParams, classifier, plan: SessionPlan, m: int,
             pipeline: ClipPipeline) -> EvalResult:
    """Accuracy over the union of the test sets of sessions 0..m."""
    registry = classifier.registry
    refs = []
    for label in plan.labels_through(m):
        if label not in registry:
            raise ProtocolViolationError(f"test class {label!r} not yet registered")
        refs.extend(plan.test_items[label])
    if isinstance(classifier, cls.Prototypes):
        def predict_fn(ref):
            return cls.prototype_predict(classifier, pipeline.embed(ref, params))[0]
    else:
        w = cls.solve_weights(classifier)

        def predict_fn(ref):
            return cls.predict(w, registry, pipeline.embed(ref, params))[0]
    return evaluate_items(predict_fn, refs)


def compute_aa(accuracies) -> float:
    """Mean accuracy over sessions."""
    accuracies = list(accuracies)
    if not accuracies:
        raise UsageError("compute_aa of empty accuracy list")
    return float(np.mean(accuracies))


def compute_pd(accuracies) -> float:
    """Accuracy drop from the first to the last session."""
    accuracies = list(accuracies)
    if not accuracies:
        raise UsageError("compute_pd of empty accuracy list")
    return accuracies[0] - accuracies[-1]


# ---------------------------------------------------------------------------
# repeated runs


@dataclass
class RunReport:
    seed: int
    accuracies: list[float]  # A_0..A_M
    aa: float
    pd: float


@dataclass
class ExperimentReport:
    runs: list[RunReport]
    mean_accuracies: list[float]
    std_accuracies: list[float]
    mean_aa: float
    std_aa: float
    mean_pd: float
    std_pd: float


def aggregate_runs(runs: list[RunReport]) -> ExperimentReport:
    if not runs:
        raise UsageError("no runs to aggregate")
    acc = np.array([r.accuracies for r in runs])
    aas = np.array([r.aa for r in runs])
    pds = np.array([r.pd for r in runs])
    return ExperimentReport(
        runs=runs,
        mean_accuracies=acc.mean(axis=0).tolist(),
        std_accuracies=acc.std(axis=0).tolist(),
        mean_aa=float(aas.mean()),
        std_aa=float(aas.std()),
        mean_pd=float(pds.mean()),
        std_pd=float(pds.std()),
    )


def build_plan(cfg: ExperimentConfig) -> SessionPlan:
    if cfg.data.source == "manifest":
        items = dataset_from_manifest(cfg.data.manifest)
    else:
        items = synthetic_dataset(cfg.synth.num_classes, cfg.synth.clips_per_class,
                                  cfg.synth.train_per_class, cfg.run.seed)
    return make_splits(items, cfg.plan.sessions, cfg.plan.base_classes,
                       cfg.plan.inc_classes, cfg.run.seed, shots=cfg.plan.shots)


def run_single(cfg: ExperimentConfig, run_seed: int, plan: SessionPlan,
               pipeline: ClipPipeline) -> tuple[RunReport, BaseSessionResult]:
    base_episode = sample_episode(plan, 0, run_seed)
    base = run_base_session(base_episode, pipeline, cfg, run_seed)
    classifier = base.classifier
    accuracies = [evaluate(base.params, classifier, plan, 0, pipeline).accuracy]
    for m in range(1, plan.num_incremental + 1):
        episode = sample_episode(plan, m, run_seed)
        classifier = run_incremental_session(base.params, classifier, episode, pipeline, cfg, run_seed)
        accuracies.append(evaluate(base.params, classifier, plan, m, pipeline).accuracy)
    report = RunReport(seed=run_seed, accuracies=accuracies,
                       aa=compute_aa(accuracies), pd=compute_pd(accuracies))
    base.classifier = classifier  # final state after all sessions
    return report, base


def run_repeated(cfg: ExperimentConfig, n_runs: int | None = None,
                 keep_last: bool = False):
    """``n_runs`` independent runs (seed = base_seed + r), aggregated.

    Returns the ExperimentReport, or (report, last BaseSessionResult) when
    ``keep_last`` so callers can persist the trained artifacts.
    """
    n_runs = cfg.run.repeats if n_runs is None else n_runs
    if n_runs < 1:
        raise UsageError(f"n_runs must be >= 1, got {n_runs}")
    plan = build_plan(cfg)
    pipeline = ClipPipeline(cfg)

    def one(r: int):
        try:
            return run_single(cfg, cfg.run.seed + r, plan, pipeline)
        except FfcacError as e:
            raise type(e)(f"run {r}: {e}") from e

    if cfg.run.threads > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=cfg.run.threads) as pool:
            results = list(pool.map(one, range(n_runs)))
    else:
        results = [one(r) for r in range(n_runs)]
    report = aggregate_runs([r for r, _ in results])
    if keep_last:
        return report, results[-1][1]
    return report


# ---------------------------------------------------------------------------
# report rendering


def report_to_json(report: ExperimentReport, cfg: ExperimentConfig) -> str:
    """Deterministic JSON: fractions at 6 decimal places, keys in fixed
    order, no timestamps."""

    def r6(x):
        return round(float(x), 6)

    doc = {
        "sessions": len(report.mean_accuracies),
        "config": cfg.to_flat_dict(),
        "aggregate": {
            "mean_accuracies": [r6(a) for a in report.mean_accuracies],
            "std_accuracies": [r6(a) for a in report.std_accuracies],
            "mean_aa": r6(report.mean_aa),
            "std_aa": r6(report.std_aa),
            "mean_pd": r6(report.mean_pd),
            "std_pd": r6(report.std_pd),
        },
        "runs": [
            {
                "seed": run.seed,
                "accuracies": [r6(a) for a in run.accuracies],
                "aa": r6(run.aa),
                "pd": r6(run.pd),
            }
            for run in report.runs
        ],
    }
    return json.dumps(doc, indent=2) + "\n"


def report_to_csv(report: ExperimentReport) -> str:
    """Per-session table: one row per run plus mean and std rows."""
    n_sessions = len(report.mean_accuracies)
    header = ["run"] + [f"A_{m}" for m in range(n_sessions)] + ["AA", "PD"]
    lines = [",".join(header)]

    def fmt(tag, accs, aa, pd):
        return ",".join([tag] + [f"{a:.6f}" for a in accs] + [f"{aa:.6f}", f"{pd:.6f}"])

    for i, run in enumerate(report.runs):
        lines.append(fmt(str(i), run.accuracies, run.aa, run.pd))
    lines.append(fmt("mean", report.mean_accuracies, report.mean_aa, report.mean_pd))
    lines.append(fmt("std", report.std_accuracies, report.std_aa, report.std_pd))
    return "\n".join(lines) + "\n"


def json_report_to_csv(json_text: str) -> str:
    doc = json.loads(json_text)
    agg = doc["aggregate"]
    report = ExperimentReport(
        runs=[RunReport(seed=r["seed"], accuracies=r["accuracies"], aa=r["aa"], pd=r["pd"])
              for r in doc["runs"]],
        mean_accuracies=agg["mean_accuracies"],
        std_accuracies=agg["std_accuracies"],
        mean_aa=agg["mean_aa"],
        std_aa=agg["std_aa"],
        mean_pd=agg["mean_pd"],
        std_pd=agg["std_pd"],
    )
    return report_to_csv(report)
