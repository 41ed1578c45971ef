"""CSV and JSON persistence for datasets, chains, and summaries.

Numbers are written with ``repr``, so every float round-trips exactly and
rerunning a command with the same config reproduces its output files byte
for byte.  Nothing here writes timestamps or absolute paths.

Dataset files carry a header ``y,x1,...,xp`` with labels in 1..C.  A chain
directory holds::

    delta.csv        one row per recorded draw, columns d{j}_{k}
    sigma2.csv       one row per draw, columns s1..sp
    logw.csv         one row per draw
    diagnostics.csv  one row per sweep (both phases)
    transform.csv    train standardization used for the fit
    manifest.json    config echo (prior, settings, data shape)
    summary.json     acceptance rate and other scalar summaries
"""

from __future__ import annotations

import csv
import json
import os

import numpy as np

from .gibbs import ChainDiagnostics, ChainRecord
from .inference import FeatureRanking
from .simgen import StandardizeTransform, TruthLabeling

__all__ = [
    "read_dataset",
    "write_dataset",
    "read_truth",
    "write_truth",
    "read_transform",
    "write_transform",
    "ChainWriter",
    "read_chain",
    "write_ranking",
    "read_ranking",
    "write_predictions",
    "write_json",
    "read_json",
    "write_paths",
    "read_paths",
]


def _fmt(v) -> str:
    return repr(float(v))


def _open_writer(path):
    fh = open(path, "w", newline="")
    return fh, csv.writer(fh, lineterminator="\n")


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def _parse_float(path, lineno, text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ValueError(f"{path}:{lineno}: not a number: {text!r}") from None


# ---------------------------------------------------------------------------
# datasets


def write_dataset(path, data) -> None:
    fh, w = _open_writer(path)
    with fh:
        w.writerow(["y"] + [f"x{j}" for j in range(1, data.p + 1)])
        for yi, row in zip(data.y, data.x):
            w.writerow([str(int(yi))] + [_fmt(v) for v in row])


def read_dataset(path, c: int | None = None):
    """Load a ``y,x1..xp`` CSV into a Dataset.

    With ``c`` omitted the class count is inferred from the labels, which
    must then cover 1..C with no gaps.  Pass ``c`` explicitly for files
    (test folds) that may miss a class.
    """
    from .model import Dataset

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        expected = ["y"] + [f"x{j}" for j in range(1, len(header))]
        if header != expected:
            raise ValueError(f"{path}: header must be y,x1,...,xp, got {','.join(header[:5])}...")
        p = len(header) - 1
        if p < 1:
            raise ValueError(f"{path}: no feature columns")
        ys, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != p + 1:
                raise ValueError(f"{path}:{lineno}: expected {p + 1} fields, got {len(row)}")
            try:
                yv = int(row[0])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: label {row[0]!r} is not an integer") from None
            ys.append(yv)
            rows.append([_parse_float(path, lineno, v) for v in row[1:]])
    if not ys:
        raise ValueError(f"{path}: no data rows")
    y = np.asarray(ys, dtype=int)
    if y.min() < 1:
        raise ValueError(f"{path}: labels must be >= 1")
    if c is None:
        c = int(y.max())
        present = np.unique(y)
        if c < 2 or present.size != c:
            raise ValueError(f"{path}: labels must cover 1..C contiguously, saw {present.tolist()}")
    return Dataset(np.asarray(rows, dtype=float), y, int(c))


def write_truth(path, truth: TruthLabeling) -> None:
    fh, w = _open_writer(path)
    with fh:
        w.writerow(["feature", "group"])
        for j, g in enumerate(truth.groups, start=1):
            w.writerow([str(j), str(g)])


def read_truth(path) -> TruthLabeling:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["feature", "group"]:
            raise ValueError(f"{path}: header must be feature,group")
        groups = [row[1] for row in reader if row]
    return TruthLabeling(np.asarray(groups, dtype=object), None)


# ---------------------------------------------------------------------------
# standardization transforms


def write_transform(path, tr: StandardizeTransform) -> None:
    fh, w = _open_writer(path)
    with fh:
        w.writerow(["feature", "mean", "scale", "degenerate"])
        for j in range(tr.mean.shape[0]):
            w.writerow([str(j + 1), _fmt(tr.mean[j]), _fmt(tr.scale[j]),
                        str(int(tr.degenerate[j]))])


def read_transform(path) -> StandardizeTransform:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["feature", "mean", "scale", "degenerate"]:
            raise ValueError(f"{path}: not a transform file")
        mean, scale, degenerate = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            mean.append(_parse_float(path, lineno, row[1]))
            scale.append(_parse_float(path, lineno, row[2]))
            degenerate.append(bool(int(row[3])))
    return StandardizeTransform(np.asarray(mean), np.asarray(scale),
                                np.asarray(degenerate, dtype=bool))


# ---------------------------------------------------------------------------
# chains


class ChainWriter:
    """Streams recorded draws to a chain directory as they arrive.

    Use as a context manager; call ``record`` from the chain sink and
    ``finish`` once with the diagnostics and summary.  Files are complete
    only after a clean exit.
    """

    def __init__(self, out_dir, p: int, k: int, manifest: dict,
                 transform: StandardizeTransform | None = None):
        os.makedirs(out_dir, exist_ok=True)
        self.out_dir = out_dir
        self.p, self.k = p, k
        self.manifest = manifest
        self._files = []
        self._delta = self._start("delta.csv", [f"d{j}_{m}" for j in range(p + 1)
                                                for m in range(1, k + 1)])
        self._sigma2 = self._start("sigma2.csv", [f"s{j}" for j in range(1, p + 1)])
        self._logw = self._start("logw.csv", ["log_w"])
        if transform is not None:
            write_transform(os.path.join(out_dir, "transform.csv"), transform)

    def _start(self, name, header):
        fh, w = _open_writer(os.path.join(self.out_dir, name))
        self._files.append(fh)
        w.writerow(header)
        return w

    def record(self, draw: int, sweep: int, state) -> None:
        self._delta.writerow([_fmt(v) for v in state.delta.ravel()])
        self._sigma2.writerow([_fmt(v) for v in state.sigma2])
        self._logw.writerow([_fmt(state.log_w)])

    def finish(self, diagnostics: ChainDiagnostics, summary: dict) -> None:
        fh, w = _open_writer(os.path.join(self.out_dir, "diagnostics.csv"))
        with fh:
            w.writerow(["sweep", "phase", "accepted", "delta_h", "active_size", "u"])
            for i in range(diagnostics.sweep.shape[0]):
                w.writerow([
                    str(int(diagnostics.sweep[i])),
                    str(int(diagnostics.phase[i])),
                    str(int(diagnostics.accepted[i])),
                    _fmt(diagnostics.delta_h[i]),
                    str(int(diagnostics.active_size[i])),
                    _fmt(diagnostics.u[i]),
                ])
        write_json(os.path.join(self.out_dir, "manifest.json"), self.manifest)
        write_json(os.path.join(self.out_dir, "summary.json"), summary)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        for fh in self._files:
            fh.close()
        return False


def _read_matrix(path, expect_cols: int) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if len(header) != expect_cols:
            raise ValueError(f"{path}: expected {expect_cols} columns, got {len(header)}")
        rows = [[_parse_float(path, i, v) for v in row]
                for i, row in enumerate(reader, start=2) if row]
    return np.asarray(rows, dtype=float).reshape(len(rows), expect_cols)


def read_chain(chain_dir) -> tuple[ChainRecord, dict]:
    """Rebuild a ChainRecord (and its manifest) from a chain directory."""
    manifest = read_json(os.path.join(chain_dir, "manifest.json"))
    p, c = int(manifest["data"]["p"]), int(manifest["data"]["c"])
    k = c - 1
    delta = _read_matrix(os.path.join(chain_dir, "delta.csv"), (p + 1) * k)
    sigma2 = _read_matrix(os.path.join(chain_dir, "sigma2.csv"), p)
    logw = _read_matrix(os.path.join(chain_dir, "logw.csv"), 1)[:, 0]
    dpath = os.path.join(chain_dir, "diagnostics.csv")
    with open(dpath, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        rows = [row for row in reader if row]
    diag = ChainDiagnostics(
        sweep=np.asarray([int(r[0]) for r in rows], dtype=int),
        phase=np.asarray([int(r[1]) for r in rows], dtype=int),
        accepted=np.asarray([bool(int(r[2])) for r in rows], dtype=bool),
        delta_h=np.asarray([float(r[3]) for r in rows]),
        active_size=np.asarray([int(r[4]) for r in rows], dtype=int),
        u=np.asarray([float(r[5]) for r in rows]),
    )
    record = ChainRecord(
        delta_draws=delta.reshape(delta.shape[0], p + 1, k),
        sigma2_draws=sigma2,
        log_w_draws=logw,
        diagnostics=diag,
    )
    return record, manifest


# ---------------------------------------------------------------------------
# summaries


def write_ranking(path, ranking: FeatureRanking) -> None:
    rank_of = np.empty(ranking.order.shape[0], dtype=int)
    rank_of[ranking.order - 1] = np.arange(1, ranking.order.shape[0] + 1)
    fh, w = _open_writer(path)
    with fh:
        w.writerow(["feature", "sdb", "relative_sdb", "rank"])
        for j in range(ranking.sdb.shape[0]):
            w.writerow([str(j + 1), _fmt(ranking.sdb[j]), _fmt(ranking.relative_sdb[j]),
                        str(int(rank_of[j]))])


def read_ranking(path) -> FeatureRanking:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["feature", "sdb", "relative_sdb", "rank"]:
            raise ValueError(f"{path}: not a ranking file")
        rows = [row for row in reader if row]
    sdb = np.asarray([float(r[1]) for r in rows])
    rel = np.asarray([float(r[2]) for r in rows])
    rank = np.asarray([int(r[3]) for r in rows], dtype=int)
    order = np.empty(len(rows), dtype=int)
    order[rank - 1] = np.arange(1, len(rows) + 1)
    return FeatureRanking(sdb=sdb, relative_sdb=rel, order=order)


def write_predictions(path, probs: np.ndarray, y=None) -> None:
    probs = np.asarray(probs, dtype=float)
    n, c = probs.shape
    fh, w = _open_writer(path)
    with fh:
        w.writerow(["case", "y"] + [f"p{m}" for m in range(1, c + 1)])
        for i in range(n):
            yv = "" if y is None else str(int(y[i]))
            w.writerow([str(i + 1), yv] + [_fmt(v) for v in probs[i]])


def write_loocv_probs(path, probs: np.ndarray, y, failed) -> None:
    """Per-case held-out probabilities; failed folds keep empty cells."""
    probs = np.asarray(probs, dtype=float)
    n, c = probs.shape
    failed = set(int(i) for i in failed)
    fh, w = _open_writer(path)
    with fh:
        w.writerow(["case", "y", "failed"] + [f"p{m}" for m in range(1, c + 1)])
        for i in range(n):
            bad = i in failed
            cells = [""] * c if bad else [_fmt(v) for v in probs[i]]
            w.writerow([str(i + 1), str(int(y[i])), str(int(bad))] + cells)


def write_paths(path, points, p: int) -> None:
    """Long-format scale-sweep table: one row per (log_w, feature).

    Coefficient means appear as one column per contrast, d1..dK.
    """
    k = points[0].delta_hat.shape[1]
    fh, w = _open_writer(path)
    with fh:
        w.writerow(["log_w", "feature"] + [f"d{m}" for m in range(1, k + 1)]
                   + ["sdb", "amlp"])
        for pt in points:
            for j in range(1, p + 1):
                w.writerow([_fmt(pt.log_w), str(j)]
                           + [_fmt(v) for v in pt.delta_hat[j]]
                           + [_fmt(pt.sdb[j - 1]), _fmt(pt.amlp)])


def read_paths(path):
    """Rows of the sweep table as a list of dicts (numbers parsed)."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        names = reader.fieldnames or []
        k = len(names) - 4
        expected = ["log_w", "feature"] + [f"d{m}" for m in range(1, k + 1)] + ["sdb", "amlp"]
        if k < 1 or names != expected:
            raise ValueError(f"{path}: not a sweep table")
        out = []
        for row in reader:
            out.append({
                "log_w": float(row["log_w"]),
                "feature": int(row["feature"]),
                "delta": [float(row[f"d{m}"]) for m in range(1, k + 1)],
                "sdb": float(row["sdb"]),
                "amlp": float(row["amlp"]),
            })
    return out
