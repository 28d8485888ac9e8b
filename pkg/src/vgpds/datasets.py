"""Dataset container, CSV I/O, and generative sampling for experiments.

The on-disk format is CSV with a header.  A column named ``t`` holds time
stamps (optional; defaults to 1..n per sequence), a column named ``seq``
holds integer sequence labels (optional; defaults to a single sequence),
and every remaining column is an output feature.  Values are written with
17 significant digits so a save/load round trip is lossless.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .linalg import jittered_cholesky
from .temporal_prior import SequenceLayout
from .validation import ShapeError, ValidationError, as_matrix, as_times


@dataclass(frozen=True)
class TimeSeriesDataset:
    """Observations with time stamps and sequence labels.

    Rows are ordered by sequence; time stamps are strictly increasing inside
    each sequence.  All values are finite.
    """

    y: np.ndarray
    t: np.ndarray
    seq_ids: np.ndarray
    column_names: tuple = ()

    def __post_init__(self):
        y = as_matrix(self.y, "y")
        t = as_times(self.t, "t")
        seq = np.asarray(self.seq_ids, dtype=int)
        if t.size != y.shape[0] or seq.size != y.shape[0]:
            raise ShapeError("y, t and seq_ids must agree on the number of rows")
        names = tuple(self.column_names) if self.column_names else tuple(
            f"y{j + 1}" for j in range(y.shape[1])
        )
        if len(names) != y.shape[1]:
            raise ShapeError("column_names must have one entry per output dimension")
        layout = SequenceLayout.from_ids(seq)
        for start, end in layout.boundaries:
            dt = np.diff(t[start:end])
            if np.any(dt <= 0):
                bad = start + int(np.argmax(dt <= 0)) + 1
                raise ValidationError(
                    f"time stamps must increase strictly within a sequence; "
                    f"row {bad} does not"
                )
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "seq_ids", seq)
        object.__setattr__(self, "column_names", names)

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def n_dims(self):
        return self.y.shape[1]

    @property
    def layout(self):
        return SequenceLayout.from_ids(self.seq_ids)

    @classmethod
    def from_outputs(cls, y, t=None, seq_ids=None, column_names=()):
        """Build a dataset, defaulting times to 1..n per sequence."""
        y = as_matrix(y, "y")
        n = y.shape[0]
        seq = np.zeros(n, dtype=int) if seq_ids is None else np.asarray(seq_ids, dtype=int)
        if t is None:
            t = np.empty(n)
            layout = SequenceLayout.from_ids(seq)
            for start, end in layout.boundaries:
                t[start:end] = np.arange(1, end - start + 1, dtype=float)
        return cls(y=y, t=np.asarray(t, dtype=float), seq_ids=seq, column_names=column_names)


def load_dataset(path):
    """Read a dataset from CSV.

    Raises
    ------
    ValidationError
        On parse failures (with the line number), non-finite cells, or
        time stamps that do not increase within a sequence.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ValidationError(
                    f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}"
                )
            parsed = []
            for name, cell in zip(header, row):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise ValidationError(
                        f"{path}: line {lineno}: column {name!r}: "
                        f"cannot parse {cell.strip()!r} as a number"
                    ) from None
            rows.append(parsed)
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    table = np.asarray(rows, dtype=float)
    bad = np.argwhere(~np.isfinite(table))
    if bad.size:
        r, c = bad[0]
        raise ValidationError(
            f"{path}: line {int(r) + 2}: column {header[int(c)]!r}: non-finite value"
        )

    cols = {name: i for i, name in enumerate(header)}
    t_idx = cols.get("t")
    seq_idx = cols.get("seq")
    feature_idx = [i for i in range(len(header)) if i not in (t_idx, seq_idx)]
    if not feature_idx:
        raise ValidationError(f"{path}: no feature columns")
    t = table[:, t_idx] if t_idx is not None else None
    seq = table[:, seq_idx].astype(int) if seq_idx is not None else None
    return TimeSeriesDataset.from_outputs(
        table[:, feature_idx],
        t=t,
        seq_ids=seq,
        column_names=tuple(header[i] for i in feature_idx),
    )


def save_dataset(dataset, path):
    """Write a dataset as CSV (17 significant digits, lossless round trip)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "seq", *dataset.column_names])
        for i in range(dataset.n):
            writer.writerow(
                [_fmt(dataset.t[i]), str(int(dataset.seq_ids[i]))]
                + [_fmt(v) for v in dataset.y[i]]
            )


def _fmt(value):
    return format(float(value), ".17g")


def save_matrix(path, array, column_names=None, t=None):
    """Write a plain matrix as CSV, optionally with a time column."""
    array = np.atleast_2d(np.asarray(array, dtype=float))
    names = column_names or [f"y{j + 1}" for j in range(array.shape[1])]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if t is None:
            writer.writerow(list(names))
            for row in array:
                writer.writerow([_fmt(v) for v in row])
        else:
            writer.writerow(["t", *names])
            for ti, row in zip(t, array):
                writer.writerow([_fmt(ti)] + [_fmt(v) for v in row])


def load_times(path):
    """Read a time-stamp vector from CSV (single column, optional 't' header)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        values = []
        for lineno, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            cell = row[0].strip()
            if lineno == 1 and not _is_number(cell):
                continue  # header
            try:
                values.append(float(cell))
            except ValueError:
                raise ValidationError(
                    f"{path}: line {lineno}: cannot parse {cell!r} as a time stamp"
                ) from None
    if not values:
        raise ValidationError(f"{path}: no time stamps found")
    return np.asarray(values)


def _is_number(cell):
    try:
        float(cell)
        return True
    except ValueError:
        return False


def synth_generate(
    seed,
    n_samples,
    n_dims,
    n_latent_true,
    temporal_spec=None,
    mapping=None,
    beta=100.0,
    sequence_lengths=None,
    t=None,
):
    """Ancestrally sample a dataset from the generative model.

    Latent paths are drawn per sequence from the temporal kernel, outputs
    from the mapping kernel given the latents, and noise at precision
    ``beta`` (``inf`` for noise-free outputs).

    Returns
    -------
    (TimeSeriesDataset, ndarray)
        The dataset and the true latent paths (n_samples, n_latent_true).
    """
    rng = np.random.default_rng(seed)
    if temporal_spec is None:
        temporal_spec = kernels.TemporalKernelSpec.rbf(
            variance=1.0, lengthscale=max(1.0, n_samples / 8.0)
        )
    if mapping is None:
        mapping = kernels.ArdKernelParams(variance=1.0, weights=np.ones(n_latent_true))
    if mapping.n_latent != n_latent_true:
        raise ShapeError("mapping weights must have one entry per true latent dimension")

    if sequence_lengths is None:
        seq = np.zeros(n_samples, dtype=int)
    else:
        if sum(sequence_lengths) != n_samples:
            raise ValidationError("sequence_lengths must sum to n_samples")
        seq = np.repeat(np.arange(len(sequence_lengths)), sequence_lengths)
    layout = SequenceLayout.from_ids(seq)
    if t is None:
        t_arr = np.empty(n_samples)
        for start, end in layout.boundaries:
            t_arr[start:end] = np.arange(1, end - start + 1, dtype=float)
    else:
        t_arr = as_times(t, "t")

    latents = np.empty((n_samples, n_latent_true))
    for start, end in layout.boundaries:
        k_block = kernels.temporal_gram(temporal_spec, t_arr[start:end])
        _, lower, _ = jittered_cholesky(k_block)
        latents[start:end] = lower @ rng.standard_normal((end - start, n_latent_true))

    k_map = kernels.ard_gram(mapping, latents)
    _, lower, _ = jittered_cholesky(k_map)
    noiseless = lower @ rng.standard_normal((n_samples, n_dims))
    if np.isinf(beta):
        y = noiseless
    else:
        y = noiseless + rng.standard_normal((n_samples, n_dims)) / np.sqrt(beta)
    dataset = TimeSeriesDataset(y=y, t=t_arr, seq_ids=seq)
    return dataset, latents
