"""Sampling-rate sweeps over nested operators."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

from spx.errors import InvalidArgument
from spx.patterns import PatternLibrary, gen_speckle, select
from spx.recognisability import (
    AccuracyCurve,
    CurvePoint,
    LabeledMeasurementSet,
    Task,
    accuracy,
    feature_columns,
    summarize,
    train_softmax,
)
from spx.rng import derive_seed, generator
from spx.synthdata import SynthSpec, instance_features, instance_table

logger = logging.getLogger(__name__)

_LIBRARY_STREAM = 11
_TRIAL_STREAM = 12
_PERMUTE_STREAM = 13


@dataclass(frozen=True)
class TrainSettings:
    epochs: int = 500
    lr: float = 0.05
    l2: float = 1e-4


def sweep_library(spec: SynthSpec, n: int, seed: int) -> PatternLibrary:
    """Default speckle library for a sweep, shared by every rate and trial."""
    return gen_speckle(n, spec.height, spec.width, derive_seed(seed, _LIBRARY_STREAM))


def _run_trial(
    task: Task,
    rates: tuple[int, ...],
    spec: SynthSpec,
    library: PatternLibrary,
    trial_seed: int,
    settings: TrainSettings,
    permute_labels: bool,
) -> list[float]:
    # One acquisition at the largest rate; smaller rates use its leading rows,
    # which is exactly what the nested operators would have measured.
    trial_spec = spec.replace(master_seed=trial_seed)
    m_max = rates[-1]
    op = select(library, m_max)
    table = instance_table(trial_spec, task)
    features = instance_features(trial_spec, op, table)
    labels = table.labels.copy()
    k = spec.num_identities if task == "privacy" else spec.num_behaviors
    train = table.split == "train"
    test = table.split == "test"
    if permute_labels:
        rng = generator(derive_seed(trial_seed, _PERMUTE_STREAM))
        labels[train] = rng.permutation(labels[train])
    accs = []
    for m in rates:
        cols = feature_columns(task, m, m_max)
        rho = m / spec.n_pixels
        tr = LabeledMeasurementSet(features[train][:, cols], labels[train], k, task, rho, "train")
        te = LabeledMeasurementSet(features[test][:, cols], labels[test], k, task, rho, "test")
        model = train_softmax(tr, settings.epochs, settings.lr, settings.l2, trial_seed)
        accs.append(accuracy(model, te))
    return accs


def sweep(
    task: Task,
    rates: Sequence[int],
    dataset_spec: SynthSpec,
    trials: int = 10,
    seed: int = 0,
    *,
    library: Optional[PatternLibrary] = None,
    settings: TrainSettings = TrainSettings(),
    permute_labels: bool = False,
    jobs: int = 1,
) -> AccuracyCurve:
    """Test accuracy of a fresh softmax model at every rate, over ``trials`` datasets.

    The pattern library, scene distribution, noise and hyperparameters are
    fixed; trial ``i`` regenerates the scenes and noise from
    ``derive_seed(seed, 12, i)``. With ``permute_labels`` the training labels
    are shuffled, which should pin accuracy to chance. Results do not depend
    on ``jobs``.
    """
    rates = tuple(int(m) for m in rates)
    if not rates or any(b <= a for a, b in zip(rates, rates[1:])) or rates[0] < 1:
        raise InvalidArgument("rates must be positive and strictly increasing")
    if trials < 1:
        raise InvalidArgument("trials must be >= 1")
    if task not in ("privacy", "behavior"):
        raise InvalidArgument(f"unknown task {task!r}")
    if library is None:
        library = sweep_library(dataset_spec, rates[-1], seed)
    if (library.height, library.width) != (dataset_spec.height, dataset_spec.width):
        raise InvalidArgument("library grid does not match the dataset grid")
    if rates[-1] > library.count:
        raise InvalidArgument(f"rate {rates[-1]} exceeds the library size {library.count}")

    trial_seeds = [derive_seed(seed, _TRIAL_STREAM, i) for i in range(trials)]
    args = [(task, rates, dataset_spec, library, s, settings, permute_labels) for s in trial_seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_trial, *zip(*args)))
    else:
        results = [_run_trial(*a) for a in args]

    k = dataset_spec.num_identities if task == "privacy" else dataset_spec.num_behaviors
    points = []
    for j, m in enumerate(rates):
        mean, se = summarize([r[j] for r in results])
        points.append(CurvePoint(m / dataset_spec.n_pixels, m, mean, se, trials))
        logger.info("%s M=%d acc=%.4f +- %.4f", task, m, mean, se)
    return AccuracyCurve(tuple(points), task, k)
