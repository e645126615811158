"""Model-based recursive partitioning with intercept-only negative binomial nodes."""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np
import pandas as pd

from ..exceptions import BoundaryError, ConfigError
from ..negbin import NbFit, fit_hist, fit_nb_intercept, score_contributions
from .fluctuation import TestResult, fluctuation_test

logger = logging.getLogger(__name__)

NA_LEVEL = "NA"
CATEGORICAL = "categorical"
BINARY = "binary"
ORDERED = "ordered"


@dataclass(frozen=True)
class SplitVariable:
    name: str
    kind: str
    levels: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in (CATEGORICAL, BINARY, ORDERED):
            raise ConfigError(f"unknown variable kind {self.kind!r} for {self.name!r}")
        if self.kind == BINARY and len(self.levels) > 2:
            raise ConfigError(f"binary variable {self.name!r} has {len(self.levels)} levels")


@dataclass
class TreeConfig:
    alpha: float = 1e-4
    min_segment: float = 0.004
    max_depth: int | None = None
    bonferroni: bool = True
    exhaustive_level_limit: int = 10
    trim: float = 0.1

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.min_segment <= 0:
            raise ConfigError("min_segment must be positive")
        if self.min_segment >= 1 and self.min_segment < 2:
            raise ConfigError("min_segment must be >= 2 when given as a count")
        if not 0 < self.trim < 0.5:
            raise ConfigError("trim must lie in (0, 0.5)")

    def resolve_min_segment(self, n: int) -> int:
        """Counts are taken as is; values below 1 are a fraction of ``n``."""
        if self.min_segment >= 1:
            return int(self.min_segment)
        return max(2, math.ceil(self.min_segment * n))


@dataclass(frozen=True)
class TestRecord:
    variable: str
    statistic: float
    df: int
    pvalue: float
    adjusted_pvalue: float


@dataclass(frozen=True)
class Split:
    variable: str
    kind: str
    left_levels: tuple[str, ...] = ()
    right_levels: tuple[str, ...] = ()
    threshold: float | None = None
    # where values unseen at fit time go (ordered: NaN; categorical: new levels without an NA side)
    fallback_left: bool = True
    objective: float = float("nan")

    def goes_left(self, values) -> np.ndarray:
        if self.kind == ORDERED:
            v = np.asarray(values, dtype=float)
            out = v <= self.threshold
            out[np.isnan(v)] = self.fallback_left
            return out
        v = np.asarray(values, dtype=object).astype(str)
        left = np.isin(v, self.left_levels)
        unseen = ~left & ~np.isin(v, self.right_levels)
        if unseen.any():
            if NA_LEVEL in self.left_levels:
                side = True
            elif NA_LEVEL in self.right_levels:
                side = False
            else:
                side = self.fallback_left
            logger.info(
                "%d value(s) of %s unseen at fit time routed %s: %s",
                int(unseen.sum()),
                self.variable,
                "left" if side else "right",
                sorted(set(v[unseen].tolist()))[:5],
            )
            left[unseen] = side
        return left

    def to_dict(self) -> dict:
        d = asdict(self)
        d["left_levels"] = list(self.left_levels)
        d["right_levels"] = list(self.right_levels)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "Split":
        return cls(
            variable=d["variable"],
            kind=d["kind"],
            left_levels=tuple(d.get("left_levels", ())),
            right_levels=tuple(d.get("right_levels", ())),
            threshold=d.get("threshold"),
            fallback_left=bool(d.get("fallback_left", True)),
            objective=float(d.get("objective", float("nan"))),
        )


@dataclass
class Node:
    id: int
    depth: int
    n: int
    fit: NbFit
    y_max: int
    pct_zero: float
    members: np.ndarray | None = None
    split: Split | None = None
    left: "Node | None" = None
    right: "Node | None" = None
    test_log: list[TestRecord] = field(default_factory=list)
    segment: int | None = None
    note: str = ""

    @property
    def is_leaf(self) -> bool:
        return self.split is None


@dataclass(frozen=True)
class SegmentRow:
    segment: int
    log_mu: float
    se_log_mu: float
    theta: float
    se_theta: float
    df: int
    deviance: float
    max: int
    pct_zero: float
    n: int

    CSV_HEADER = ("segment", "log_mu", "se_log_mu", "theta", "se_theta", "df", "dev", "max", "pct_zero")

    def csv_row(self) -> list:
        return [
            self.segment,
            f"{self.log_mu:.6f}",
            f"{self.se_log_mu:.6f}",
            f"{self.theta:.6f}",
            f"{self.se_theta:.6f}",
            self.df,
            f"{self.deviance:.4f}",
            self.max,
            f"{self.pct_zero:.1f}",
        ]


@dataclass
class Tree:
    root: Node
    candidates: list[SplitVariable]
    config: TreeConfig
    min_segment: int
    n: int

    def nodes(self) -> Iterator[Node]:
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            if not node.is_leaf:
                stack.append(node.right)
                stack.append(node.left)

    def leaves(self) -> list[Node]:
        return [n for n in self.nodes() if n.is_leaf]

    @property
    def n_segments(self) -> int:
        return len(self.leaves())

    def to_dict(self) -> dict:
        nodes = []
        for node in self.nodes():
            nodes.append(
                {
                    "id": node.id,
                    "depth": node.depth,
                    "n": node.n,
                    "segment": node.segment,
                    "fit": node.fit.to_dict(),
                    "y_max": node.y_max,
                    "pct_zero": node.pct_zero,
                    "split": None if node.split is None else node.split.to_dict(),
                    "children": None if node.is_leaf else [node.left.id, node.right.id],
                    "test_log": [asdict(t) for t in node.test_log],
                    "note": node.note,
                }
            )
        return {
            "n": self.n,
            "min_segment": self.min_segment,
            "config": asdict(self.config),
            "candidates": [{"name": c.name, "kind": c.kind, "levels": list(c.levels)} for c in self.candidates],
            "nodes": nodes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, allow_nan=True)

    @classmethod
    def from_dict(cls, d: Mapping) -> "Tree":
        by_id = {}
        for nd in d["nodes"]:
            by_id[nd["id"]] = Node(
                id=nd["id"],
                depth=nd["depth"],
                n=nd["n"],
                fit=NbFit.from_dict(nd["fit"]),
                y_max=nd["y_max"],
                pct_zero=nd["pct_zero"],
                split=None if nd["split"] is None else Split.from_dict(nd["split"]),
                test_log=[TestRecord(**t) for t in nd.get("test_log", [])],
                segment=nd.get("segment"),
                note=nd.get("note", ""),
            )
        for nd in d["nodes"]:
            if nd["children"]:
                node = by_id[nd["id"]]
                node.left, node.right = by_id[nd["children"][0]], by_id[nd["children"][1]]
        return cls(
            root=by_id[d["nodes"][0]["id"]],
            candidates=[SplitVariable(c["name"], c["kind"], tuple(c["levels"])) for c in d["candidates"]],
            config=TreeConfig(**d["config"]),
            min_segment=d["min_segment"],
            n=d["n"],
        )

    @classmethod
    def from_json(cls, text: str) -> "Tree":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# candidate handling


def _categorical_values(col: pd.Series) -> np.ndarray:
    values = col.astype(object).where(col.notna(), NA_LEVEL)
    return values.map(lambda v: str(v)).to_numpy(dtype=object)


def infer_candidates(
    X: pd.DataFrame,
    names: Sequence[str] | None = None,
    categorical: Sequence[str] = (),
    ordered: Sequence[str] = (),
) -> list[SplitVariable]:
    """Declare split variables from a frame.

    Object, category and bool columns are categorical, numeric columns with at
    most two distinct values are binary, other numeric columns are ordered.
    ``categorical`` and ``ordered`` override the inference.
    """
    names = list(X.columns) if names is None else list(names)
    out = []
    for name in names:
        if name not in X.columns:
            raise ConfigError(f"candidate {name!r} not in data")
        col = X[name]
        if name in ordered:
            kind = ORDERED
        elif name in categorical or not pd.api.types.is_numeric_dtype(col) or pd.api.types.is_bool_dtype(col):
            kind = CATEGORICAL
        elif col.dropna().nunique() <= 2:
            kind = BINARY
        else:
            kind = ORDERED
        if kind == ORDERED:
            out.append(SplitVariable(name, ORDERED))
            continue
        levels = tuple(sorted(set(_categorical_values(col).tolist())))
        if kind == CATEGORICAL and len(levels) <= 2:
            kind = BINARY
        out.append(SplitVariable(name, kind, levels))
    return out


class _Design:
    """Candidate columns encoded once for the whole training set."""

    def __init__(self, X: pd.DataFrame, candidates: Sequence[SplitVariable]):
        self.candidates = list(candidates)
        self.values: dict[str, np.ndarray] = {}
        self.codes: dict[str, np.ndarray] = {}
        self.levels: dict[str, np.ndarray] = {}
        for c in self.candidates:
            if c.kind == ORDERED:
                self.values[c.name] = pd.to_numeric(X[c.name], errors="raise").to_numpy(dtype=float)
            else:
                vals = _categorical_values(X[c.name])
                levels, codes = np.unique(vals.astype(str), return_inverse=True)
                self.values[c.name] = vals
                self.levels[c.name] = levels
                self.codes[c.name] = codes


# ---------------------------------------------------------------------------
# operations


def select_variable(
    scores: np.ndarray,
    design: _Design,
    members: np.ndarray,
    config: TreeConfig,
) -> tuple[SplitVariable | None, list[TestRecord]]:
    """Test every candidate; return the most significant one if its adjusted p is below alpha."""
    results: list[tuple[SplitVariable, TestResult]] = []
    for c in design.candidates:
        if c.kind == ORDERED:
            res = fluctuation_test(scores, design.values[c.name][members], ORDERED, config.trim)
        else:
            res = fluctuation_test(scores, design.codes[c.name][members], CATEGORICAL)
        results.append((c, res))
    tested = [(c, r) for c, r in results if r.df > 0]
    m = len(tested) if config.bonferroni else 1
    log = [
        TestRecord(c.name, r.statistic, r.df, r.pvalue, min(1.0, r.pvalue * m) if r.df > 0 else 1.0)
        for c, r in results
    ]
    if not tested:
        return None, log
    best_i = min(range(len(tested)), key=lambda i: (tested[i][1].log_pvalue, -tested[i][1].statistic, i))
    best, res = tested[best_i]
    adjusted = min(1.0, res.pvalue * m)
    if not adjusted < config.alpha:
        return None, log
    return best, log


def _histograms(y: np.ndarray, groups: np.ndarray, n_groups: int, vals: np.ndarray) -> np.ndarray:
    col = np.searchsorted(vals, y)
    H = np.zeros((n_groups, vals.size))
    np.add.at(H, (groups, col), 1.0)
    return H


def _child_loglik(vals, w) -> float:
    return fit_hist(vals[w > 0], w[w > 0])[2]


def _pair_objective(vals, w_left, w_right) -> float | None:
    try:
        return _child_loglik(vals, w_left) + _child_loglik(vals, w_right)
    except BoundaryError:
        return None


def _ordered_search(vals, H, min_segment, n_na_hist=None):
    """Best cut of ordered groups (rows of ``H``); returns ``(k, objective, na_left)`` with groups[:k] left."""
    cum = np.cumsum(H, axis=0)
    total = cum[-1]
    na = np.zeros_like(total) if n_na_hist is None else n_na_hist
    best = (None, -math.inf, True)
    for k in range(1, H.shape[0]):
        wl, wr = cum[k - 1], total - cum[k - 1]
        na_left = wl.sum() >= wr.sum()
        if na_left:
            wl = wl + na
        else:
            wr = wr + na
        if wl.sum() < min_segment or wr.sum() < min_segment:
            continue
        obj = _pair_objective(vals, wl, wr)
        if obj is not None and obj > best[1]:
            best = (k, obj, na_left)
    return best


def find_split(
    y: np.ndarray,
    design: _Design,
    members: np.ndarray,
    variable: SplitVariable,
    config: TreeConfig,
    min_segment: int,
) -> Split | None:
    """Binary partition of ``variable`` maximising the summed children log-likelihoods."""
    yy = y[members]
    vals = np.unique(yy).astype(float)
    if variable.kind == ORDERED:
        z = design.values[variable.name][members]
        finite = ~np.isnan(z)
        distinct, groups = np.unique(z[finite], return_inverse=True)
        if distinct.size < 2:
            return None
        H = _histograms(yy[finite], groups, distinct.size, vals)
        na_hist = _histograms(yy[~finite], np.zeros((~finite).sum(), dtype=int), 1, vals)[0]
        k, obj, na_left = _ordered_search(vals, H, min_segment, na_hist)
        if k is None:
            return None
        return Split(variable.name, ORDERED, threshold=float(distinct[k - 1]), fallback_left=bool(na_left), objective=obj)

    codes = design.codes[variable.name][members]
    present = np.unique(codes)
    levels = design.levels[variable.name][present]
    if levels.size < 2:
        return None
    remap = np.searchsorted(present, codes)
    H = _histograms(yy, remap, levels.size, vals)
    sizes = H.sum(axis=1)
    n = sizes.sum()

    if levels.size <= config.exhaustive_level_limit:
        best_obj, best_left = -math.inf, None
        rest = range(1, levels.size)
        for r in range(0, levels.size - 1):
            for combo in itertools.combinations(rest, r):
                left = (0,) + combo
                wl = H[list(left)].sum(axis=0)
                nl = sizes[list(left)].sum()
                if nl < min_segment or n - nl < min_segment:
                    continue
                obj = _pair_objective(vals, wl, H.sum(axis=0) - wl)
                if obj is not None and obj > best_obj:
                    best_obj, best_left = obj, left
        if best_left is None:
            return None
        left_set = set(best_left)
    else:
        means = (H @ vals) / sizes
        order = sorted(range(levels.size), key=lambda i: (means[i], levels[i]))
        k, best_obj, _ = _ordered_search(vals, H[order], min_segment)
        if k is None:
            return None
        left_set = set(order[:k])
        # keep the lexicographically first level on the left
        if 0 not in left_set:
            left_set = set(range(levels.size)) - left_set

    left_levels = tuple(str(levels[i]) for i in sorted(left_set))
    right_levels = tuple(str(levels[i]) for i in range(levels.size) if i not in left_set)
    n_left = sizes[sorted(left_set)].sum()
    return Split(
        variable.name,
        CATEGORICAL,
        left_levels=left_levels,
        right_levels=right_levels,
        fallback_left=bool(n_left >= n - n_left),
        objective=float(best_obj),
    )


def _make_node(node_id: int, depth: int, y: np.ndarray, members: np.ndarray) -> Node:
    yy = y[members]
    fit = fit_nb_intercept(yy)
    return Node(
        id=node_id,
        depth=depth,
        n=int(members.size),
        fit=fit,
        y_max=int(yy.max()),
        pct_zero=float(100.0 * np.mean(yy == 0)),
        members=members,
    )


def grow(
    X: pd.DataFrame,
    y,
    candidates: Sequence[SplitVariable] | Sequence[str] | None = None,
    config: TreeConfig | None = None,
) -> Tree:
    """Recursively partition ``(X, y)``; nodes are numbered depth first, leaves left to right."""
    config = config or TreeConfig()
    y = np.asarray(y)
    if y.ndim != 1 or len(y) != len(X):
        raise ValueError("y must be one-dimensional and aligned with X")
    if np.any(y < 0) or not np.all(np.mod(y, 1) == 0):
        raise ValueError("y must hold nonnegative integer counts")
    y = y.astype(np.int64)
    if candidates is None:
        candidates = infer_candidates(X)
    elif candidates and isinstance(candidates[0], str):
        candidates = infer_candidates(X, candidates)
    candidates = list(candidates)
    n = len(y)
    min_segment = config.resolve_min_segment(n)
    if n < 2 * min_segment:
        logger.info("n=%d is below twice the minimum segment size %d; root only", n, min_segment)
    design = _Design(X, candidates)
    counter = itertools.count(1)

    def recurse(members: np.ndarray, depth: int) -> Node:
        node = _make_node(next(counter), depth, y, members)
        if config.max_depth is not None and depth >= config.max_depth:
            node.note = "max_depth"
            return node
        if node.n < 2 * min_segment:
            node.note = "min_segment"
            return node
        scores = score_contributions(y[members], node.fit)
        var, node.test_log = select_variable(scores, design, members, config)
        if var is None:
            node.note = "not significant"
            return node
        split = find_split(y, design, members, var, config, min_segment)
        if split is None:
            node.note = f"no feasible partition of {var.name}"
            logger.info("node %d: %s", node.id, node.note)
            return node
        node.split = split
        goes_left = split.goes_left(design.values[var.name][members])
        node.left = recurse(members[goes_left], depth + 1)
        node.right = recurse(members[~goes_left], depth + 1)
        return node

    root = recurse(np.arange(n), 0)
    tree = Tree(root=root, candidates=candidates, config=config, min_segment=min_segment, n=n)
    for k, leaf in enumerate(tree.leaves(), start=1):
        leaf.segment = k
    return tree


def apply_tree(tree: Tree, X: pd.DataFrame) -> np.ndarray:
    """Segment number of every row of ``X``."""
    n = len(X)
    out = np.zeros(n, dtype=int)
    cache: dict[str, np.ndarray] = {}

    def column(name: str, kind: str) -> np.ndarray:
        if name not in cache:
            if name not in X.columns:
                raise ValueError(f"split variable {name!r} missing from data")
            if kind == ORDERED:
                cache[name] = pd.to_numeric(X[name]).to_numpy(dtype=float)
            else:
                cache[name] = _categorical_values(X[name])
        return cache[name]

    stack = [(tree.root, np.arange(n))]
    while stack:
        node, rows = stack.pop()
        if node.is_leaf:
            out[rows] = node.segment
            continue
        left = node.split.goes_left(column(node.split.variable, node.split.kind)[rows])
        stack.append((node.left, rows[left]))
        stack.append((node.right, rows[~left]))
    return out


def predict_segment(tree: Tree, X: pd.DataFrame) -> np.ndarray:
    return apply_tree(tree, X)


def predict_mu(tree: Tree, X: pd.DataFrame) -> np.ndarray:
    mus = {leaf.segment: leaf.fit.mu for leaf in tree.leaves()}
    return np.array([mus[s] for s in apply_tree(tree, X)], dtype=float)


def segment_table(tree: Tree) -> list[SegmentRow]:
    """One row per leaf in depth-first, left-to-right order."""
    rows = []
    for leaf in tree.leaves():
        f = leaf.fit
        rows.append(
            SegmentRow(
                segment=leaf.segment,
                log_mu=f.log_mu,
                se_log_mu=f.se_log_mu,
                theta=f.theta,
                se_theta=f.se_theta,
                df=f.df,
                deviance=f.deviance,
                max=leaf.y_max,
                pct_zero=leaf.pct_zero,
                n=f.n,
            )
        )
    return rows


def render_tree(tree: Tree) -> str:
    """Indented text rendering of the splits and leaf models."""
    lines = []

    def walk(node: Node, prefix: str):
        if node.is_leaf:
            f = node.fit
            lines.append(
                f"{prefix}[segment {node.segment}] n={node.n} mu={f.mu:.3f} log_mu={f.log_mu:.3f} theta={f.theta:.3f}"
            )
            return
        s = node.split
        if s.kind == ORDERED:
            lt, rt = f"{s.variable} <= {s.threshold:g}", f"{s.variable} > {s.threshold:g}"
        else:
            lt = f"{s.variable} in {{{', '.join(s.left_levels)}}}"
            rt = f"{s.variable} in {{{', '.join(s.right_levels)}}}"
        lines.append(f"{prefix}node {node.id} (n={node.n})")
        lines.append(f"{prefix}|- {lt}")
        walk(node.left, prefix + "|  ")
        lines.append(f"{prefix}|- {rt}")
        walk(node.right, prefix + "   ")

    walk(tree.root, "")
    return "\n".join(lines)
