"""Conditional class co-occurrence ``P(C_p | C_r) = P(C_p, C_r) / P(C_r)``."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import UsageError


@dataclass
class CooccurrenceMatrix:
    """Row ``r`` (reference class) and column ``p`` hold ``P(C_p | C_r)``.

    Rows of classes that never occur are undefined: ``defined[r]`` is False
    and their ``probs`` row is left at zero.
    """

    class_names: list[str]
    total: int
    prior_counts: np.ndarray  # N
    joint_counts: np.ndarray  # N x N, symmetric
    probs: np.ndarray
    defined: np.ndarray

    def prior(self, r: int) -> Fraction:
        return Fraction(int(self.prior_counts[r]), self.total)

    def joint(self, r: int, p: int) -> Fraction:
        return Fraction(int(self.joint_counts[r, p]), self.total)

    def conditional(self, p: int, r: int) -> Fraction | None:
        """Exact ``P(C_p | C_r)``, or None when ``C_r`` never occurs."""
        if not self.defined[r]:
            return None
        return Fraction(int(self.joint_counts[r, p]), int(self.prior_counts[r]))

    def to_csv(self) -> str:
        lines = ["reference\\cooccurring," + ",".join(self.class_names)]
        for r, name in enumerate(self.class_names):
            if self.defined[r]:
                cells = [f"{x:.6f}" for x in self.probs[r]]
            else:
                cells = ["undefined"] * len(self.class_names)
            lines.append(name + "," + ",".join(cells))
        return "\n".join(lines) + "\n"

    def to_image(self, cell: int = 16) -> np.ndarray:
        """Grayscale uint8 rendering, one ``cell x cell`` block per entry; undefined rows black."""
        img = np.round(np.where(self.defined[:, None], self.probs, 0.0) * 255).astype(np.uint8)
        return np.kron(img, np.ones((cell, cell), dtype=np.uint8))


def cooccurrence(labels: Sequence[Sequence[int]], class_names: Sequence[str] | None = None
                 ) -> CooccurrenceMatrix:
    Y = np.asarray(labels)
    if Y.ndim != 2 or len(Y) == 0:
        raise UsageError("co-occurrence needs a nonempty list of label vectors")
    Y = Y.astype(np.int64)
    n, N = Y.shape
    names = list(class_names) if class_names is not None else [f"class{i}" for i in range(N)]
    if len(names) != N:
        raise UsageError(f"{len(names)} class names for {N} label columns")
    prior = Y.sum(axis=0)
    joint = Y.T @ Y
    defined = prior > 0
    probs = np.zeros((N, N))
    probs[defined] = joint[defined] / prior[defined, None]
    return CooccurrenceMatrix(names, n, prior, joint, probs, defined)


def write_report(matrix: CooccurrenceMatrix, out_prefix, image: bool = True) -> list[Path]:
    from .imageio import write_gray

    out = Path(out_prefix)
    out.parent.mkdir(parents=True, exist_ok=True)
    csv_path = out.with_suffix(".csv")
    csv_path.write_text(matrix.to_csv())
    written = [csv_path]
    if image:
        img_path = out.with_suffix(".pgm")
        write_gray(img_path, matrix.to_image())
        written.append(img_path)
    return written
