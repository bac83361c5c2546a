"""K80 distances between aligned HA sequences and spectral case features."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

_CODE = {"A": 0, "G": 1, "C": 2, "T": 3}
_ALPHABET = set("ACGTN-")
_GAP = 4


class SaturationError(ValueError):
    """Raised when the K80 log arguments are non-positive."""

    def __init__(self, message, pair=None):
        super().__init__(message)
        self.pair = pair


class NoComparableSitesError(ValueError):
    pass


@dataclass(frozen=True)
class AlignedSequence:
    id: str
    bases: str

    def __post_init__(self):
        if not self.bases:
            raise ValueError(f"sequence {self.id!r} is empty")
        bad = set(self.bases.upper()) - _ALPHABET
        if bad:
            raise ValueError(f"sequence {self.id!r} has invalid symbols {sorted(bad)}")


@dataclass
class GeneticDistanceMatrix:
    ids: list[str]
    d: np.ndarray
    # pairs (i, j), i < j, whose distance is undefined; stored as inf in ``d``
    undefined: frozenset = field(default_factory=frozenset)

    def __len__(self):
        return len(self.ids)


def encode(bases: str) -> np.ndarray:
    # purines A,G -> 0,1 ; pyrimidines C,T -> 2,3 ; so a transition keeps code // 2
    return np.array([_CODE.get(b, _GAP) for b in bases.upper()], dtype=np.int8)


def _k80_from_counts(transitions: int, transversions: int, comparable: int, pair=None) -> float:
    if comparable == 0:
        raise NoComparableSitesError(f"no comparable sites for pair {pair}")
    p = transitions / comparable
    q = transversions / comparable
    a = 1.0 - 2.0 * p - q
    b = 1.0 - 2.0 * q
    if a <= 0.0 or b <= 0.0:
        raise SaturationError(
            f"K80 distance undefined (1-2P-Q={a:.6g}, 1-2Q={b:.6g}) for pair {pair}", pair=pair
        )
    return -0.5 * math.log(a) - 0.25 * math.log(b)


def _counts(x: np.ndarray, y: np.ndarray) -> tuple[int, int, int]:
    ok = (x != _GAP) & (y != _GAP)
    diff = ok & (x != y)
    ts = diff & ((x // 2) == (y // 2))
    n_ts = int(ts.sum())
    return n_ts, int(diff.sum()) - n_ts, int(ok.sum())


def k80_distance(s1: AlignedSequence, s2: AlignedSequence) -> float:
    """Kimura two-parameter distance with pairwise deletion of N and gap sites."""
    if len(s1.bases) != len(s2.bases):
        raise ValueError(f"sequences {s1.id!r} and {s2.id!r} differ in length")
    return _k80_from_counts(*_counts(encode(s1.bases), encode(s2.bases)), pair=(s1.id, s2.id))


def pairwise_distances(batch: Sequence[AlignedSequence], strict: bool = True) -> GeneticDistanceMatrix:
    """All-pairs K80 matrix.

    With ``strict=False`` undefined pairs are recorded in ``undefined`` and
    stored as ``inf`` instead of raising.
    """
    if not batch:
        raise ValueError("empty sequence batch")
    lengths = {len(s.bases) for s in batch}
    if len(lengths) != 1:
        raise ValueError(f"ragged alignment: lengths {sorted(lengths)}")
    codes = np.stack([encode(s.bases) for s in batch])
    m = len(batch)
    d = np.zeros((m, m))
    undefined = set()
    for i in range(m - 1):
        x = codes[i]
        rest = codes[i + 1:]
        ok = (rest != _GAP) & (x != _GAP)
        diff = ok & (rest != x)
        ts = (diff & ((rest // 2) == (x // 2))).sum(axis=1)
        tv = diff.sum(axis=1) - ts
        comparable = ok.sum(axis=1)
        for off in range(m - 1 - i):
            j = i + 1 + off
            pair = (batch[i].id, batch[j].id)
            try:
                dij = _k80_from_counts(int(ts[off]), int(tv[off]), int(comparable[off]), pair=pair)
            except (SaturationError, NoComparableSitesError):
                if strict:
                    raise
                undefined.add((i, j))
                dij = math.inf
            d[i, j] = d[j, i] = dij
    return GeneticDistanceMatrix([s.id for s in batch], d, frozenset(undefined))


def mean_offdiagonal(d: np.ndarray) -> float:
    m = d.shape[0]
    if m < 2:
        return 0.0
    vals = d[~np.eye(m, dtype=bool)]
    vals = vals[np.isfinite(vals)]
    return float(vals.mean()) if vals.size else 0.0


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def spectral_embed(dist: GeneticDistanceMatrix, dim: int, tol: float = 1e-10) -> np.ndarray:
    """Laplacian-eigenmap coordinates of a distance matrix, one row per case.

    The affinity is ``exp(-d / mean_offdiag(d))``. Columns are the unit-norm
    eigenvectors of the ``dim`` smallest nonzero Laplacian eigenvalues, sign
    fixed so the largest-magnitude entry is positive. All-zero distances carry
    no structure to embed, so every column is the constant unit vector. If the
    affinity graph is disconnected and fewer than ``dim`` nonzero eigenvalues
    exist, the remaining columns are zero.
    """
    d = np.asarray(dist.d, dtype=np.float64)
    m = d.shape[0]
    if dim < 1:
        raise ValueError("dim must be positive")
    if dim >= m:
        raise ValueError(f"embedding dim {dim} must be smaller than the batch size {m}")
    scale = mean_offdiagonal(d)
    if scale == 0.0:
        scale = 1.0
    off = d[~np.eye(m, dtype=bool)]
    if not np.any(off > 0.0):
        return np.full((m, dim), 1.0 / math.sqrt(m))
    w = np.exp(-d / scale)
    np.fill_diagonal(w, 0.0)
    lap = np.diag(w.sum(axis=1)) - w
    try:
        evals, evecs = np.linalg.eigh(lap)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"eigensolver failed to converge: {exc}") from exc
    cutoff = tol * max(1.0, float(evals[-1]))
    nonzero = np.flatnonzero(evals > cutoff)[:dim]
    out = np.zeros((m, dim))
    if nonzero.size:
        out[:, : nonzero.size] = _fix_signs(evecs[:, nonzero])
    return out


def read_sequences(path: str | Path) -> list[AlignedSequence]:
    """Read ``id<TAB>bases`` records; rejects ragged alignments."""
    records = []
    length = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'id<TAB>bases'")
            sid, bases = parts[0].strip(), parts[1].strip()
            if length is None:
                length = len(bases)
            elif len(bases) != length:
                raise ValueError(
                    f"{path}:{lineno}: sequence {sid!r} has length {len(bases)}, expected {length}"
                )
            try:
                records.append(AlignedSequence(sid, bases.upper()))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return records


def write_sequences(path: str | Path, records: Iterable[AlignedSequence]) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(f"{r.id}\t{r.bases}\n")
