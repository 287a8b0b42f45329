"""Subject partitioning and annotation statistics."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .boxes import AnnotationSet, box_statistics, read_box_records
from .errors import InsufficientSubjects, SchemaError


@dataclass(frozen=True)
class Subject:
    subject_id: str
    sex: str
    scans: tuple[str, ...]


def load_subject_metadata(path) -> list[Subject]:
    """Read subject metadata from CSV (``subject_id,sex,scans`` with ';'-separated scans) or JSON."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        rows = json.loads(path.read_text())
    else:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    subjects = []
    for k, row in enumerate(rows, 1):
        try:
            scans = row["scans"]
            if isinstance(scans, str):
                scans = [s for s in scans.replace(",", ";").split(";") if s.strip()]
            subjects.append(Subject(str(row["subject_id"]).strip(), str(row["sex"]).strip().upper()[:1],
                                    tuple(s.strip() for s in scans)))
        except KeyError as exc:
            raise SchemaError(f"{path} record {k}: missing field {exc}") from exc
    return subjects


def _split_counts(group_sizes: dict[str, int], target: int) -> dict[str, int]:
    """Distribute ``target`` over groups proportionally (largest remainder, ties by group name)."""
    total = sum(group_sizes.values())
    exact = {g: target * n / total for g, n in group_sizes.items()}
    counts = {g: int(np.floor(x)) for g, x in exact.items()}
    rest = target - sum(counts.values())
    for g in sorted(exact, key=lambda g: (-(exact[g] - counts[g]), g))[:rest]:
        counts[g] += 1
    return counts


def partition_subjects(subjects, seed: int = 0, n_train: int = 120, n_val: int = 40, n_test: int = 40,
                       n_longitudinal: int = 10, extra_train_meshes: int = 8) -> dict:
    """Sex-stratified random split of subjects into train/validation/static test.

    Each split keeps one scan per subject; ``extra_train_meshes`` training
    subjects with two scans contribute their second scan as well. The
    longitudinal partition takes ``n_longitudinal`` static-test subjects with
    a second scan and lists that second scan.

    Returns a JSON-ready manifest with ``subjects`` and ``meshes`` per split.
    """
    subjects = sorted(subjects, key=lambda s: s.subject_id)
    need = n_train + n_val + n_test
    if len(subjects) < need:
        raise InsufficientSubjects(f"{len(subjects)} subjects, need {need}")
    rng = np.random.default_rng(seed)
    by_sex: dict[str, list[Subject]] = {}
    for s in subjects:
        by_sex.setdefault(s.sex, []).append(s)
    sizes = {g: len(v) for g, v in by_sex.items()}
    quotas = [_split_counts(sizes, n) for n in (n_train, n_val, n_test)]
    splits: list[list[Subject]] = [[], [], []]
    for g in sorted(by_sex):
        members = by_sex[g]
        order = rng.permutation(len(members))
        start = 0
        for k in range(3):
            take = quotas[k][g]
            if start + take > len(members):
                raise InsufficientSubjects(f"not enough subjects of sex {g!r} for a balanced split")
            splits[k].extend(members[i] for i in order[start:start + take])
            start += take
    splits = [sorted(s, key=lambda x: x.subject_id) for s in splits]
    train, val, test = splits

    paired_test = [s for s in test if len(s.scans) >= 2]
    if len(paired_test) < n_longitudinal:
        raise InsufficientSubjects(f"{len(paired_test)} static-test subjects have two scans, need {n_longitudinal}")
    longitudinal = sorted((paired_test[i] for i in rng.choice(len(paired_test), n_longitudinal, replace=False)),
                          key=lambda x: x.subject_id)

    paired_train = [s for s in train if len(s.scans) >= 2]
    n_extra = min(extra_train_meshes, len(paired_train))
    extra = {paired_train[i].subject_id for i in rng.choice(len(paired_train), n_extra, replace=False)} if n_extra else set()
    train_meshes = []
    for s in train:
        train_meshes.append(s.scans[0])
        if s.subject_id in extra:
            train_meshes.append(s.scans[1])

    def ids(group):
        return [s.subject_id for s in group]

    return {
        "seed": seed,
        "subjects": {"train": ids(train), "val": ids(val), "test": ids(test), "longitudinal": ids(longitudinal)},
        "meshes": {
            "train": train_meshes,
            "val": [s.scans[0] for s in val],
            "test": [s.scans[0] for s in test],
            "longitudinal": [s.scans[1] for s in longitudinal],
        },
        "sex_counts": {
            name: {g: sum(s.sex == g for s in group) for g in sorted(by_sex)}
            for name, group in (("train", train), ("val", val), ("test", test))
        },
    }


def annotation_statistics(paths, schema_mapping: dict | None = None) -> dict:
    """Total box count and mean width/height over one or more annotation tables."""
    if isinstance(paths, (str, Path)):
        paths = [paths]
    boxes = []
    for p in paths:
        p = Path(p)
        if p.suffix.lower() == ".json":
            data = json.loads(p.read_text())
            for d in (data if isinstance(data, list) else [data]):
                boxes.extend(AnnotationSet.from_json(d).boxes)
        else:
            boxes.extend(b for _, b in read_box_records(p, schema_mapping))
    return box_statistics(boxes)
