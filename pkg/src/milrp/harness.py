"""Subject-independent evaluation: fold construction, runs, and reports.

Each of the nine folds trains on both sessions of the other eight subjects
and tests on the held-out subject's evaluation session.  The proposed
classifier and the CSP+LDA baseline run on identical folds; the report
carries per-subject and mean accuracies plus everything needed to
reproduce the run.
"""

from __future__ import annotations

import concurrent.futures
import json
from dataclasses import dataclass, field
from decimal import Decimal, ROUND_HALF_UP

import numpy as np

from . import autonet, cspbase, featmap
from .config import RunConfig

__all__ = [
    "SUBJECTS",
    "LosoFold",
    "ExperimentReport",
    "make_folds",
    "accuracy",
    "run_experiment",
    "render_report_figure",
]

SUBJECTS = tuple(f"A0{i}" for i in range(1, 10))
SESSIONS = ("T", "E")
CLASSES = ("left", "right")


@dataclass(frozen=True)
class LosoFold:
    """One leave-one-subject-out split."""

    evaluated_subject: str
    train_members: tuple[tuple[str, str], ...]
    test_members: tuple[tuple[str, str], ...]


def make_folds(subjects, available=None) -> list[LosoFold]:
    """One fold per subject: test on its E session, train on everyone else.

    ``available``, when given, is the set of (subject, session) pairs the
    dataset actually holds; a missing session fails fast naming it.
    """
    subjects = tuple(subjects)
    if len(subjects) != 9:
        raise ValueError(f"the protocol evaluates exactly 9 subjects, got {len(subjects)}")
    if len(set(subjects)) != 9:
        raise ValueError("duplicate subject ids")
    if available is not None:
        available = set(available)
        for subj in subjects:
            for sess in SESSIONS:
                if (subj, sess) not in available:
                    raise ValueError(f"dataset is missing session {sess} of subject {subj}")
    folds = []
    for subj in subjects:
        train = tuple((other, sess) for other in subjects if other != subj
                      for sess in SESSIONS)
        folds.append(LosoFold(evaluated_subject=subj,
                              train_members=train,
                              test_members=((subj, "E"),)))
    return folds


def accuracy(predictions, labels) -> float:
    """Percent of matching entries; rejects empty or mismatched input."""
    predictions = list(predictions)
    labels = list(labels)
    if len(predictions) != len(labels):
        raise ValueError(
            f"{len(predictions)} predictions vs {len(labels)} labels")
    if not labels:
        raise ValueError("cannot score an empty prediction set")
    hits = sum(p == y for p, y in zip(predictions, labels))
    return 100.0 * hits / len(labels)


def round2(x: float) -> float:
    """Half-up rounding to 2 decimals, as the report table prints."""
    return float(Decimal(repr(x)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


@dataclass
class ExperimentReport:
    """Everything a run produced, minus wall-clock noise."""

    config_digest: str
    base_seed: int
    subjects: tuple[str, ...]
    proposed: dict[str, float] = field(default_factory=dict)
    baseline: dict[str, float] = field(default_factory=dict)
    n_train_trials: dict[str, int] = field(default_factory=dict)
    n_test_trials: dict[str, int] = field(default_factory=dict)
    fold_seeds: dict[str, int] = field(default_factory=dict)
    failures: dict[str, str] = field(default_factory=dict)

    @property
    def partial(self) -> bool:
        return bool(self.failures)

    def _mean(self, values: dict[str, float]) -> float:
        scored = [values[s] for s in self.subjects if s in values]
        return float(np.mean(scored)) if scored else float("nan")

    @property
    def proposed_mean(self) -> float:
        return self._mean(self.proposed)

    @property
    def baseline_mean(self) -> float:
        return self._mean(self.baseline)

    def table(self) -> str:
        """Aligned per-subject table with a mean row."""
        lines = [
            f"config digest: {self.config_digest}   base seed: {self.base_seed}",
            "",
            f"{'Subject':<10}{'Baseline':>10}{'Proposed':>10}",
        ]
        for subj in self.subjects:
            base = f"{round2(self.baseline[subj]):.2f}" if subj in self.baseline else "-"
            prop = f"{round2(self.proposed[subj]):.2f}" if subj in self.proposed else "-"
            lines.append(f"{subj:<10}{base:>10}{prop:>10}")
        base_m = f"{round2(self.baseline_mean):.2f}" if self.baseline else "-"
        prop_m = f"{round2(self.proposed_mean):.2f}" if self.proposed else "-"
        lines.append(f"{'mean':<10}{base_m:>10}{prop_m:>10}")
        if self.partial:
            lines.append("")
            lines.append("PARTIAL RESULTS - failed folds:")
            for subj, err in sorted(self.failures.items()):
                lines.append(f"  {subj}: {err}")
        return "\n".join(lines) + "\n"

    def to_machine(self) -> str:
        """Key/value document with a per-subject array, stable ordering."""
        doc = {
            "config_digest": self.config_digest,
            "base_seed": self.base_seed,
            "partial": self.partial,
            "baseline_mean": self._mean(self.baseline) if self.baseline else None,
            "proposed_mean": self._mean(self.proposed) if self.proposed else None,
            "subjects": [
                {
                    "subject": subj,
                    "baseline_accuracy": self.baseline.get(subj),
                    "proposed_accuracy": self.proposed.get(subj),
                    "n_train_trials": self.n_train_trials.get(subj),
                    "n_test_trials": self.n_test_trials.get(subj),
                    "seed": self.fold_seeds.get(subj),
                    "error": self.failures.get(subj),
                }
                for subj in self.subjects
            ],
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        lines = ["subject,baseline_accuracy,proposed_accuracy,n_test_trials"]
        for subj in self.subjects:
            base = f"{round2(self.baseline[subj]):.2f}" if subj in self.baseline else ""
            prop = f"{round2(self.proposed[subj]):.2f}" if subj in self.proposed else ""
            lines.append(f"{subj},{base},{prop},{self.n_test_trials.get(subj, '')}")
        return "\n".join(lines) + "\n"


def _prepare_session(tset, config: RunConfig, grid, tensors=None):
    """Per-session feature tensors and mu-band baseline segments."""
    if tensors is None:
        tensors = featmap.tensors_from_trialset(tset, config, grid)
    segments = cspbase._mu_band_segments(tset, config.window, config.filter_order)
    labels = [t.label for t in tset.trials]
    return tensors, segments, labels


def _run_fold(fold: LosoFold, prepared, config: RunConfig, seed: int, grid,
              run_proposed: bool = True):
    """Train and evaluate the pipelines on one fold."""
    train_tensors, train_segs, train_labels = [], [], []
    for member in fold.train_members:
        tensors, segments, labels = prepared[member]
        train_tensors.extend(tensors)
        train_segs.extend(segments)
        train_labels.extend(labels)
    test_tensors, test_segs, test_labels = [], [], []
    for member in fold.test_members:
        tensors, segments, labels = prepared[member]
        test_tensors.extend(tensors)
        test_segs.extend(segments)
        test_labels.extend(labels)
    if not test_labels:
        raise ValueError(f"fold {fold.evaluated_subject}: empty test set")

    model = None
    proposed = None
    if run_proposed:
        model = autonet.CnnModel.initialize(
            seed=seed, band_order=config.bands, grid_hash=grid.hash(),
            config_digest=config.digest())
        model, _ = autonet.train(model, train_tensors, config.train_config(seed))
        predictions = [autonet.predict(model, t)[0] for t in test_tensors]
        proposed = accuracy(predictions, test_labels)

    csp, lda = cspbase.fit_baseline(train_segs, train_labels, CLASSES,
                                    m=config.csp_pairs)
    base_preds = [cspbase.predict_baseline(csp, lda, s, CLASSES)
                  for s in test_segs]
    baseline = accuracy(base_preds, test_labels)
    return {
        "subject": fold.evaluated_subject,
        "proposed": proposed,
        "baseline": baseline,
        "n_train": len(train_labels),
        "n_test": len(test_labels),
        "model": model,
        "csp": csp,
        "lda": lda,
    }


def _fold_worker(args):
    return _run_fold(*args)


def run_experiment(dataset, config: RunConfig, jobs: int = 1,
                   subjects_filter=None, tensors_by_session=None,
                   model_sink=None, run_proposed: bool = True) -> ExperimentReport:
    """Run the full subject-independent protocol over a 9-subject dataset.

    ``dataset`` maps (subject, session) to a TrialSet.  Folds are
    independent; with ``jobs > 1`` they run as parallel processes.  Each
    fold trains with seed ``config.seed + fold_index``.  Per-fold failures
    are recorded and the remaining folds still run.  ``model_sink(subject,
    model, csp, lda)``, when given, receives every fold's trained models.
    ``run_proposed=False`` fits only the baseline.
    """
    subjects = tuple(sorted({subj for subj, _ in dataset}))
    folds = make_folds(subjects, available=dataset.keys())
    fold_seeds = {fold.evaluated_subject: config.seed + i
                  for i, fold in enumerate(folds)}
    if subjects_filter is not None:
        wanted = set(subjects_filter)
        unknown = wanted - set(subjects)
        if unknown:
            raise ValueError(f"unknown subjects requested: {sorted(unknown)}")
        folds = [f for f in folds if f.evaluated_subject in wanted]

    grid = featmap.default_grid()
    prepared = {}
    broken: dict[tuple[str, str], str] = {}
    for member, tset in sorted(dataset.items()):
        cached = None if tensors_by_session is None else tensors_by_session.get(member)
        try:
            prepared[member] = _prepare_session(tset, config, grid, tensors=cached)
        except Exception as e:  # noqa: BLE001 - session isolation
            broken[member] = f"session {member[0]}{member[1]}: {e}"

    report = ExperimentReport(config_digest=config.digest(),
                              base_seed=config.seed, subjects=subjects)
    report.fold_seeds = {f.evaluated_subject: fold_seeds[f.evaluated_subject]
                         for f in folds}

    runnable = []
    for fold in folds:
        bad = [broken[m] for m in fold.train_members + fold.test_members
               if m in broken]
        if bad:
            report.failures[fold.evaluated_subject] = bad[0]
        else:
            runnable.append(fold)
    folds = runnable

    tasks = [(fold, prepared, config, fold_seeds[fold.evaluated_subject], grid,
              run_proposed)
             for fold in folds]
    results = []
    if jobs > 1 and len(tasks) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {pool.submit(_fold_worker, task): task[0] for task in tasks}
            for future, fold in futures.items():
                try:
                    results.append(future.result())
                except Exception as e:  # noqa: BLE001 - fold isolation
                    report.failures[fold.evaluated_subject] = str(e)
    else:
        for task in tasks:
            try:
                results.append(_fold_worker(task))
            except Exception as e:  # noqa: BLE001 - fold isolation
                report.failures[task[0].evaluated_subject] = str(e)

    for res in sorted(results, key=lambda r: r["subject"]):
        subj = res["subject"]
        if res["proposed"] is not None:
            report.proposed[subj] = res["proposed"]
        report.baseline[subj] = res["baseline"]
        report.n_train_trials[subj] = res["n_train"]
        report.n_test_trials[subj] = res["n_test"]
        if model_sink is not None:
            model_sink(subj, res["model"], res["csp"], res["lda"])
    return report


def render_report_figure(report: ExperimentReport, path) -> None:
    """Per-subject accuracy bars for both pipelines, written as SVG."""
    from matplotlib.figure import Figure

    from .topoviz import save_figure

    subjects = [s for s in report.subjects if s in report.baseline]
    with_cnn = bool(report.proposed)
    x = np.arange(len(subjects))
    fig = Figure(figsize=(7.0, 3.2))
    ax = fig.add_subplot(111)
    width = 0.38 if with_cnn else 0.6
    offset = width / 2 if with_cnn else 0.0
    ax.bar(x - offset, [report.baseline[s] for s in subjects], width,
           label="CSP+LDA baseline", color="#888888")
    if with_cnn:
        ax.bar(x + offset, [report.proposed[s] for s in subjects], width,
               label="proposed CNN", color="#c23b22")
    if subjects:
        ax.axhline(report.baseline_mean, color="#888888", lw=0.8, ls="--")
        if with_cnn:
            ax.axhline(report.proposed_mean, color="#c23b22", lw=0.8, ls="--")
    ax.set_xticks(x)
    ax.set_xticklabels(subjects)
    ax.set_ylabel("accuracy [%]")
    ax.set_ylim(0, 100)
    ax.legend(loc="lower right", fontsize=8)
    ax.set_title(f"subject-independent accuracy (digest {report.config_digest})",
                 fontsize=9)
    fig.tight_layout()
    save_figure(fig, path)
