"""Posterior sample persistence.

A store is a directory::

    meta.json        model kind, scaling, graph definitions, candidates, config
    trees.txt        one line per tree node: class, sweep, tree, node record
    draws.tsv        class, sweep, sigma, sigma_mu2
    importance.tsv   per graph label split counts
    trace.tsv        per sweep diagnostics recorded during training

Floats are written with ``repr`` so a save/load round trip is exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .tree import CompactTree

__all__ = ["Draw", "PosteriorStore", "StoreError"]

FORMAT_VERSION = 1


class StoreError(ValueError):
    """Missing or malformed posterior store."""


@dataclass
class Draw:
    sweep: int
    trees: list  # CompactTree per weak learner
    sigma: float
    sigma_mu2: float


@dataclass
class PosteriorStore:
    """Retained post-burn-in draws, one list per fitted latent function.

    ``meta`` carries everything needed to rebuild candidate graphs for new
    rows.  ``trace`` rows are ``(fit, sweep, metric, value)``.
    """

    meta: dict
    draws: list = field(default_factory=list)  # list (per fit) of lists of Draw
    importance: dict = field(default_factory=dict)
    trace: list = field(default_factory=list)

    @property
    def n_draws(self) -> int:
        return len(self.draws[0]) if self.draws else 0

    def is_empty(self) -> bool:
        return not self.draws or any(len(d) == 0 for d in self.draws)

    # ---------------------------------------------------------------- io
    def save(self, directory) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        meta = dict(self.meta, format_version=FORMAT_VERSION)
        (d / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")
        tree_lines, draw_lines = [], ["fit\tsweep\tsigma\tsigma_mu2"]
        for c, draws in enumerate(self.draws):
            for dr in draws:
                draw_lines.append(f"{c}\t{dr.sweep}\t{dr.sigma!r}\t{dr.sigma_mu2!r}")
                for t, tree in enumerate(dr.trees):
                    tree_lines.extend(f"{c}\t{dr.sweep}\t{t}\t{line}" for line in tree.to_lines())
        (d / "trees.txt").write_text("".join(line + "\n" for line in tree_lines))
        (d / "draws.tsv").write_text("\n".join(draw_lines) + "\n")
        total = sum(self.importance.values())
        imp = ["label\tcount\tshare"] + [
            f"{k}\t{v}\t{(v / total if total else 0.0)!r}" for k, v in sorted(self.importance.items())]
        (d / "importance.tsv").write_text("\n".join(imp) + "\n")
        tr = ["fit\tsweep\tmetric\tvalue"] + [f"{c}\t{s}\t{m}\t{float(v)!r}" for c, s, m, v in self.trace]
        (d / "trace.tsv").write_text("\n".join(tr) + "\n")
        return d

    @classmethod
    def load(cls, directory) -> "PosteriorStore":
        d = Path(directory)
        if not (d / "meta.json").is_file():
            raise StoreError(f"{d}: not a posterior store (meta.json missing)")
        try:
            meta = json.loads((d / "meta.json").read_text())
        except json.JSONDecodeError as exc:
            raise StoreError(f"{d / 'meta.json'}: {exc}") from None
        if meta.pop("format_version", None) != FORMAT_VERSION:
            raise StoreError(f"{d}: unsupported store format")
        n_fits = len(meta.get("fits", [None]))
        draws: list[list[Draw]] = [[] for _ in range(n_fits)]
        index = {}
        for line in _table(d / "draws.tsv"):
            c, sweep = int(line[0]), int(line[1])
            dr = Draw(sweep, [], float(line[2]), float(line[3]))
            draws[c].append(dr)
            index[c, sweep] = dr
        nodes: dict = {}
        for raw in (d / "trees.txt").read_text().splitlines():
            if not raw.strip():
                continue
            c, sweep, t, rest = raw.split("\t", 3)
            nodes.setdefault((int(c), int(sweep)), {}).setdefault(int(t), []).append(rest)
        for key, per_tree in nodes.items():
            if key not in index:
                raise StoreError(f"{d}: trees for unknown draw {key}")
            index[key].trees = [CompactTree.from_lines(per_tree[t]) for t in sorted(per_tree)]
        importance = {row[0]: int(row[1]) for row in _table(d / "importance.tsv")}
        trace = [(int(r[0]), int(r[1]), r[2], float(r[3])) for r in _table(d / "trace.tsv")]
        return cls(meta, draws, importance, trace)


def _table(path):
    if not path.is_file():
        raise StoreError(f"{path} missing")
    lines = path.read_text().splitlines()
    return [line.split("\t") for line in lines[1:] if line.strip()]
