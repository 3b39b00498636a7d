"""Feature ranking, Fisher-score baseline, least-squares classifier,
average-precision metrics, and the benchmark experiment runner."""

import itertools
import json
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .dataset import MultiTaskDataset, TaskData, ValidationError, apply_label_fraction
from .solver import Hyperparams, fit, _spd_solve

METHODS = ("sfmc", "fisher", "all_features")


@dataclass(frozen=True)
class FeatureRanking:
    """Feature indices in descending score order plus the per-feature scores."""

    indices: np.ndarray
    scores: np.ndarray


def _rank_from_scores(scores):
    scores = np.asarray(scores, dtype=np.float64)
    order = np.lexsort((np.arange(scores.size), -scores))
    return FeatureRanking(indices=order, scores=scores)


def rank_features(model, task_index):
    """Rank features for one task by the row norms of its weight matrix.

    Stable descending sort; ties go to the lower feature index.
    """
    if not 0 <= task_index < model.n_tasks:
        raise IndexError(f"task index {task_index} out of range")
    return _rank_from_scores(model.feature_scores[task_index])


def select_top(ranking, count):
    """First `count` indices of a ranking."""
    d = ranking.indices.size
    if not 1 <= count <= d:
        raise ValidationError(f"count must be in [1, {d}], got {count}")
    return ranking.indices[:count].copy()


def fisher_score(task, var_floor=1e-12):
    """Classical between/within class variance ratio per feature.

    score_j = sum_c n_c (mu_cj - mu_j)^2 / sum_c n_c var_cj, computed over
    labeled samples only; the within-class variance is floored at var_floor.
    """
    labeled = np.flatnonzero(task.labeled_mask)
    classes = np.argmax(task.Y[labeled], axis=1)
    present = np.unique(classes)
    if present.size < 2:
        raise ValidationError(
            f"task {task.name!r}: Fisher score needs at least 2 labeled classes"
        )
    X = task.X[:, labeled]
    mu = X.mean(axis=1)
    between = np.zeros(task.n_features)
    within = np.zeros(task.n_features)
    for c in present:
        Xc = X[:, classes == c]
        nc = Xc.shape[1]
        mu_c = Xc.mean(axis=1)
        between += nc * (mu_c - mu) ** 2
        within += nc * Xc.var(axis=1)
    return between / np.maximum(within, var_floor)


@dataclass(frozen=True)
class LSClassifier:
    """One-vs-rest regularized least squares, bias unpenalized."""

    W: np.ndarray
    b: np.ndarray

    def decision(self, X):
        """Per-class scores for samples given column-wise (features x n)."""
        return X.T @ self.W + self.b

    def predict(self, X):
        return np.argmax(self.decision(X), axis=1)


def train_ls_classifier(X, Y, ridge):
    """Fit min_W,b ||X'W + 1b' - Y||_F^2 + ridge ||W||_F^2 in closed form.

    X is features x samples, Y is the n x c one-hot target matrix.
    """
    if ridge <= 0:
        raise ValidationError(f"ridge must be positive, got {ridge}")
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.shape[1] == 0:
        raise ValidationError("no training samples")
    mu_x = X.mean(axis=1)
    Xc = X - mu_x[:, None]
    mu_y = Y.mean(axis=0)
    G = Xc @ Xc.T + ridge * np.eye(X.shape[0])
    W = _spd_solve(G, Xc @ (Y - mu_y))
    b = mu_y - W.T @ mu_x
    return LSClassifier(W=W, b=b)


def average_precision(scores, relevant):
    """Mean of precision-at-rank over the relevant items.

    Items are ranked by descending score, ties broken by lower index.
    """
    scores = np.asarray(scores, dtype=np.float64)
    relevant = np.asarray(relevant, dtype=bool)
    if relevant.sum() == 0:
        raise ValidationError("average precision needs at least one relevant item")
    order = np.lexsort((np.arange(scores.size), -scores))
    rel = relevant[order]
    hits = np.cumsum(rel)
    ranks = np.arange(1, rel.size + 1)
    return float((hits[rel] / ranks[rel]).mean())


def mean_average_precision(scores, Y):
    """Mean AP over the classes that have at least one relevant sample."""
    Y = np.asarray(Y, dtype=np.float64)
    aps = [
        average_precision(scores[:, c], Y[:, c] > 0)
        for c in range(Y.shape[1])
        if (Y[:, c] > 0).any()
    ]
    if not aps:
        raise ValidationError("no class has a relevant sample")
    return float(np.mean(aps))


@dataclass(frozen=True)
class CellResult:
    """Aggregated result for one (method, label fraction, feature count)."""

    method: str
    fraction: float
    count: int
    map_mean: float
    map_std: float
    map_per_repeat: tuple
    recovery_mean: float = None
    recovery_std: float = None
    recovery_per_repeat: tuple = None
    best_params: dict = None
    runtime_s: float = 0.0


@dataclass(frozen=True)
class ExperimentReport:
    """All cells of one experiment plus the protocol that produced them."""

    cells: tuple
    methods: tuple
    fractions: tuple
    feature_counts: tuple
    repeats: int
    seed: int
    test_fraction: float

    def to_json_dict(self):
        # runtime is wall-clock and therefore excluded so reruns with the
        # same seed serialize byte-identically
        cells = []
        for c in self.cells:
            entry = {
                "method": c.method,
                "fraction": c.fraction,
                "count": c.count,
                "map_mean": c.map_mean,
                "map_std": c.map_std,
                "map_per_repeat": list(c.map_per_repeat),
            }
            if c.recovery_per_repeat is not None:
                entry["recovery_mean"] = c.recovery_mean
                entry["recovery_std"] = c.recovery_std
                entry["recovery_per_repeat"] = list(c.recovery_per_repeat)
            if c.best_params is not None:
                entry["best_params"] = c.best_params
            cells.append(entry)
        return {
            "cells": cells,
            "methods": list(self.methods),
            "fractions": list(self.fractions),
            "feature_counts": list(self.feature_counts),
            "repeats": self.repeats,
            "seed": self.seed,
            "test_fraction": self.test_fraction,
        }

    def save(self, path):
        Path(path).write_text(
            json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n"
        )
        return Path(path)

    def to_text(self):
        header = f"{'method':<14}{'fraction':>10}{'count':>8}{'MAP':>10}{'std':>9}"
        has_recovery = any(c.recovery_mean is not None for c in self.cells)
        if has_recovery:
            header += f"{'recovery':>10}"
        header += f"{'time[s]':>10}"
        lines = [header, "-" * len(header)]
        for c in self.cells:
            line = (
                f"{c.method:<14}{c.fraction:>10.3g}{c.count:>8d}"
                f"{c.map_mean:>10.4f}{c.map_std:>9.4f}"
            )
            if has_recovery:
                rec = "" if c.recovery_mean is None else f"{c.recovery_mean:.4f}"
                line += f"{rec:>10}"
            line += f"{c.runtime_s:>10.2f}"
            lines.append(line)
        return "\n".join(lines)


def write_cells_csv(report, path):
    """Flat per-cell CSV for external plotting."""
    lines = ["method,fraction,count,repeat,map,recovery"]
    for c in report.cells:
        for r, m in enumerate(c.map_per_repeat):
            rec = "" if c.recovery_per_repeat is None else repr(c.recovery_per_repeat[r])
            lines.append(f"{c.method},{c.fraction!r},{c.count},{r},{m!r},{rec}")
    Path(path).write_text("\n".join(lines) + "\n")
    return Path(path)


def _child_seed(*parts):
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _stratified_split(task, rng, test_fraction):
    """Split one fully labeled task into train task data and test arrays."""
    classes = np.argmax(task.Y, axis=1)
    train_idx, test_idx = [], []
    for c in range(task.n_classes):
        members = rng.permutation(np.flatnonzero(classes == c))
        n_test = int(round(test_fraction * members.size))
        n_test = min(n_test, members.size - 1)  # train keeps >= 1 per class
        test_idx.append(members[:n_test])
        train_idx.append(members[n_test:])
    train_idx = np.sort(np.concatenate(train_idx))
    test_idx = np.sort(np.concatenate(test_idx))
    train = TaskData(
        name=task.name,
        X=task.X[:, train_idx],
        Y=task.Y[train_idx],
        labeled_mask=np.ones(train_idx.size, dtype=bool),
    )
    return train, task.X[:, test_idx], task.Y[test_idx]


def _score_selection(train_tasks, test_sets, selections, ridge):
    """Train per-task classifiers on selected features, return mean MAP."""
    maps = []
    for task, (X_test, Y_test), sel in zip(train_tasks, test_sets, selections):
        labeled = np.flatnonzero(task.labeled_mask)
        clf = train_ls_classifier(
            task.X[np.ix_(sel, labeled)], task.Y[labeled], ridge
        )
        maps.append(mean_average_precision(clf.decision(X_test[sel]), Y_test))
    return float(np.mean(maps))


def _recovery(selections, support, count):
    sup = set(support)
    vals = [len(sup & set(sel.tolist())) / min(count, len(sup)) for sel in selections]
    return float(np.mean(vals))


def _evaluate_rankings(rankings, train_tasks, test_sets, counts, ridge, support):
    """MAP (and recovery, when a support is known) at every feature count."""
    res = {}
    for count in counts:
        selections = [select_top(r, count) for r in rankings]
        m = _score_selection(train_tasks, test_sets, selections, ridge)
        rec = None if support is None else _recovery(selections, support, count)
        res[count] = (m, rec)
    return res


def run_experiment(
    dataset,
    methods,
    fractions,
    feature_counts,
    repeats,
    seed,
    grid=None,
    hp_base=None,
    test_fraction=0.5,
    ridge=1e-2,
    n_threads=1,
):
    """Benchmark feature-selection methods over label fractions and counts.

    Per repeat: stratified train/test split of every (fully labeled) task,
    label masking at each fraction, fit/rank per method, then a regularized
    least-squares classifier on the selected features of the labeled samples,
    scored by mean average precision on the test split.  For the joint solver
    a hyperparameter grid is crossed and the best cell (by mean MAP over
    repeats) is reported.  When the dataset carries a planted support,
    support-recovery precision at each count is reported as well.
    Deterministic for a fixed seed.
    """
    methods = [m.lower() for m in methods]
    for m in methods:
        if m not in METHODS:
            raise ValidationError(f"unknown method {m!r}; choose from {METHODS}")
    if repeats < 1:
        raise ValidationError("repeats must be at least 1")
    if not 0 < test_fraction < 1:
        raise ValidationError("test_fraction must be in (0, 1)")
    for task in dataset.tasks:
        if not task.labeled_mask.all():
            raise ValidationError(
                "run_experiment expects a fully labeled dataset; label fractions "
                "are applied internally"
            )
    d = dataset.n_features
    feature_counts = sorted(set(int(c) for c in feature_counts))
    for c in feature_counts:
        if not 1 <= c <= d:
            raise ValidationError(f"feature count {c} out of range [1, {d}]")
    hp_base = hp_base if hp_base is not None else Hyperparams()
    grid = grid or {}
    combos = [
        dict(zip(("alpha", "beta", "gamma"), vals))
        for vals in itertools.product(
            grid.get("alpha", [hp_base.alpha]),
            grid.get("beta", [hp_base.beta]),
            grid.get("gamma", [hp_base.gamma]),
        )
    ]
    support = dataset.support

    def one_repeat(rep):
        """Per-combo MAP/recovery tables for every (method, fraction)."""
        rng = np.random.default_rng([seed, rep])
        splits = [_stratified_split(t, rng, test_fraction) for t in dataset.tasks]
        train_tasks = [s[0] for s in splits]
        test_sets = [(s[1], s[2]) for s in splits]
        train_ds = MultiTaskDataset(tasks=tuple(train_tasks), metadata=dataset.metadata)
        k = min(hp_base.k, min(t.n_samples for t in train_tasks))
        scores = {}
        times = {}
        for fi, fraction in enumerate(fractions):
            masked = apply_label_fraction(
                train_ds, fraction, _child_seed(seed, rep, fi)
            )
            for method in methods:
                t0 = time.perf_counter()
                if method == "sfmc":
                    per_combo = {}
                    for ci, combo in enumerate(combos):
                        hp = replace(hp_base, k=k, **combo)
                        model = fit(masked, hp, n_threads=n_threads)
                        rankings = [
                            rank_features(model, l) for l in range(model.n_tasks)
                        ]
                        per_combo[ci] = _evaluate_rankings(
                            rankings, masked.tasks, test_sets, feature_counts,
                            ridge, support,
                        )
                elif method == "fisher":
                    rankings = [_rank_from_scores(fisher_score(t)) for t in masked.tasks]
                    per_combo = {
                        0: _evaluate_rankings(
                            rankings, masked.tasks, test_sets, feature_counts,
                            ridge, support,
                        )
                    }
                else:  # all_features: identity ranking, full count only
                    rankings = [_rank_from_scores(np.zeros(d)) for _ in masked.tasks]
                    per_combo = {
                        0: _evaluate_rankings(
                            rankings, masked.tasks, test_sets, [d], ridge, support
                        )
                    }
                scores[(method, fraction)] = per_combo
                times[(method, fraction)] = (
                    times.get((method, fraction), 0.0) + time.perf_counter() - t0
                )
        return scores, times

    if n_threads > 1 and repeats > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            repeat_results = list(pool.map(one_repeat, range(repeats)))
    else:
        repeat_results = [one_repeat(rep) for rep in range(repeats)]

    cells = []
    for method in methods:
        counts = [d] if method == "all_features" else feature_counts
        n_combos = len(combos) if method == "sfmc" else 1
        for fraction in fractions:
            times = [t[(method, fraction)] for _, t in repeat_results]
            for count in counts:
                best = None
                for ci in range(n_combos):
                    maps = [
                        s[(method, fraction)][ci][count][0] for s, _ in repeat_results
                    ]
                    recs = [
                        s[(method, fraction)][ci][count][1] for s, _ in repeat_results
                    ]
                    mean = float(np.mean(maps))
                    if best is None or mean > best[0]:
                        best = (mean, ci, maps, recs)
                mean, ci, maps, recs = best
                has_rec = recs[0] is not None
                cells.append(
                    CellResult(
                        method=method,
                        fraction=float(fraction),
                        count=int(count),
                        map_mean=mean,
                        map_std=float(np.std(maps)),
                        map_per_repeat=tuple(maps),
                        recovery_mean=float(np.mean(recs)) if has_rec else None,
                        recovery_std=float(np.std(recs)) if has_rec else None,
                        recovery_per_repeat=tuple(recs) if has_rec else None,
                        best_params=combos[ci] if method == "sfmc" else None,
                        runtime_s=float(np.mean(times)),
                    )
                )
    return ExperimentReport(
        cells=tuple(cells),
        methods=tuple(methods),
        fractions=tuple(float(f) for f in fractions),
        feature_counts=tuple(feature_counts),
        repeats=repeats,
        seed=seed,
        test_fraction=test_fraction,
    )
