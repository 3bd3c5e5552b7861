"""
Random-forest regression: CART trees grown on variance reduction, bagged over
bootstrap samples, with out-of-bag diagnostics and a plain-text model format.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from pedorigin._helpers import _fmt, _rng
from pedorigin.exceptions import DatasetFormatError, ValidationError

logger = logging.getLogger(__name__)

PURITY_TOLERANCE = 1e-12
MODEL_HEADER = "# forest v1"


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 50
    mtry: int | None = None
    min_leaf: int = 5
    seed: int = 0
    bootstrap: bool = True

    def validate(self) -> None:
        if self.n_trees < 1:
            raise ValidationError("n_trees must be at least 1", field="n_trees")
        if self.min_leaf < 1:
            raise ValidationError("min_leaf must be at least 1", field="min_leaf")
        if self.mtry is not None and self.mtry < 1:
            raise ValidationError("mtry must be at least 1", field="mtry")

    def resolve_mtry(self, n_features: int) -> int:
        mtry = self.mtry if self.mtry is not None else math.ceil(n_features / 3)
        if not 1 <= mtry <= n_features:
            raise ValidationError(f"mtry must lie in [1, {n_features}], got {mtry}", field="mtry")
        return mtry


@dataclass
class Leaf:
    value: float


@dataclass
class Split:
    feature: int
    threshold: float
    left: "Split | Leaf | None" = None
    right: "Split | Leaf | None" = None


TreeNode = Split | Leaf


@dataclass(eq=False)
class Forest:
    trees: list[TreeNode]
    n_features: int
    mtry: int
    min_leaf: int
    seed: int
    bootstrap: bool = True
    oob_indices: list[np.ndarray] = field(default_factory=list)

    @property
    def n_trees(self) -> int:
        return len(self.trees)


def _best_split(Xs: np.ndarray, ys: np.ndarray, min_leaf: int):
    """
    Lowest weighted child SSE over every (column, threshold) of Xs.
    Returns (sse, column, threshold) or None if no split is valid. Ties go to
    the lowest column, then the lowest threshold.
    """
    n = len(ys)
    order = np.argsort(Xs, axis=0, kind="stable")
    xs = np.take_along_axis(Xs, order, axis=0)
    yv = ys[order]

    s_left = np.cumsum(yv, axis=0)[:-1]
    q_left = np.cumsum(yv * yv, axis=0)[:-1]
    n_left = np.arange(1, n)[:, None].astype(float)
    n_right = n - n_left
    s_right = ys.sum() - s_left
    q_right = (ys * ys).sum() - q_left
    sse = (q_left - s_left**2 / n_left) + (q_right - s_right**2 / n_right)

    valid = (n_left >= min_leaf) & (n_right >= min_leaf) & (xs[:-1] < xs[1:])
    if not valid.any():
        return None
    sse = np.where(valid, sse, np.inf).T
    column, k = np.unravel_index(int(np.argmin(sse)), sse.shape)

    lower, upper = xs[k, column], xs[k + 1, column]
    threshold = (lower + upper) / 2
    if threshold >= upper:
        threshold = lower
    return float(sse[column, k]), int(column), float(threshold)


def _node_split(X, y, idx, rng, mtry, min_leaf):
    """
    Draws mtry candidate features; falls back to the remaining ones only if
    none of the drawn features admits a valid split.
    """
    yv = y[idx]
    parent_sse = float(((yv - yv.mean()) ** 2).sum())
    permutation = rng.permutation(X.shape[1])
    for candidates in (permutation[:mtry], permutation[mtry:]):
        if not len(candidates):
            continue
        features = np.sort(candidates)
        found = _best_split(X[np.ix_(idx, features)], yv, min_leaf)
        if found is None:
            continue
        sse, column, threshold = found
        if sse >= parent_sse - PURITY_TOLERANCE:
            return None
        return int(features[column]), threshold
    return None


def fit_tree(
    X: np.ndarray,
    y: np.ndarray,
    sample_indices: np.ndarray,
    rng: np.random.Generator,
    params: ForestParams,
) -> TreeNode:
    """
    Greedy recursive partitioning of the rows in sample_indices (repeats
    allowed). A node becomes a leaf when it holds fewer than 2 * min_leaf
    samples, when its targets are constant, or when no split lowers the
    squared error. Samples with x <= threshold go left.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    idx = np.asarray(sample_indices, dtype=int)
    if not len(idx):
        raise ValidationError("cannot fit a tree on zero samples", field="sample_indices")
    mtry = params.resolve_mtry(X.shape[1])

    root = None
    stack: list[tuple[np.ndarray, Split | None, str]] = [(idx, None, "")]
    while stack:
        node_idx, parent, side = stack.pop()
        yv = y[node_idx]

        split = None
        if len(node_idx) >= 2 * params.min_leaf and np.var(yv) >= PURITY_TOLERANCE:
            split = _node_split(X, y, node_idx, rng, mtry, params.min_leaf)

        if split is None:
            node = Leaf(float(yv.mean()))
        else:
            feature, threshold = split
            node = Split(feature, threshold)
            go_left = X[node_idx, feature] <= threshold
            stack.append((node_idx[~go_left], node, "right"))
            stack.append((node_idx[go_left], node, "left"))

        if parent is None:
            root = node
        else:
            setattr(parent, side, node)
    return root


def fit_forest(X: np.ndarray, y: np.ndarray, params: ForestParams | None = None) -> Forest:
    """
    Fits params.n_trees trees. Tree i draws its bootstrap sample and its
    feature candidates from the stream (seed, i), so trees can be trained in
    any order with the same result.
    """
    params = params or ForestParams()
    params.validate()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) != len(y):
        raise ValidationError("X must be n x p and y must hold n targets", field="X")
    n = len(y)
    if n < 2:
        raise ValidationError("need at least 2 samples to fit a forest", field="X")
    mtry = params.resolve_mtry(X.shape[1])

    trees = []
    oob_indices = []
    everything = np.arange(n)
    for i in range(params.n_trees):
        rng = _rng(params.seed, i)
        if params.bootstrap:
            sample = rng.integers(0, n, size=n)
            oob = np.setdiff1d(everything, sample)
        else:
            sample = everything
            oob = np.empty(0, dtype=int)
        trees.append(fit_tree(X, y, sample, rng, params))
        oob_indices.append(oob)

    logger.debug("fitted %d trees on %d samples with %d features", params.n_trees, n, X.shape[1])
    return Forest(
        trees=trees,
        n_features=X.shape[1],
        mtry=mtry,
        min_leaf=params.min_leaf,
        seed=params.seed,
        bootstrap=params.bootstrap,
        oob_indices=oob_indices,
    )


def predict_tree(tree: TreeNode, X: np.ndarray) -> np.ndarray:
    out = np.empty(len(X))
    stack = [(tree, np.arange(len(X)))]
    while stack:
        node, rows = stack.pop()
        if not len(rows):
            continue
        if isinstance(node, Leaf):
            out[rows] = node.value
            continue
        go_left = X[rows, node.feature] <= node.threshold
        stack.append((node.left, rows[go_left]))
        stack.append((node.right, rows[~go_left]))
    return out


def _check_features(forest: Forest, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != forest.n_features:
        raise ValidationError(
            f"expected {forest.n_features} features per sample, got shape {X.shape}", field="x"
        )
    return X


def predict_many(forest: Forest, X: np.ndarray) -> np.ndarray:
    """
    Mean of the per-tree predictions for every row of X.
    """
    X = _check_features(forest, X)
    total = np.zeros(len(X))
    for tree in forest.trees:
        total += predict_tree(tree, X)
    return total / forest.n_trees


def predict(forest: Forest, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValidationError("x must be a single feature vector", field="x")
    return float(predict_many(forest, x[None, :])[0])


def oob_scores(forest: Forest, X: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """
    Out-of-bag mean squared error and R^2 over the training samples that were
    left out by at least one tree.
    """
    X = _check_features(forest, X)
    y = np.asarray(y, dtype=float)
    total = np.zeros(len(y))
    count = np.zeros(len(y), dtype=int)
    for tree, oob in zip(forest.trees, forest.oob_indices):
        if len(oob):
            total[oob] += predict_tree(tree, X[oob])
            count[oob] += 1

    included = count > 0
    excluded = int((~included).sum())
    if not included.any():
        raise ValidationError("no sample is out-of-bag for any tree", field="oob")
    if excluded:
        logger.warning("%d of %d samples are in every bootstrap sample and excluded from OOB scores", excluded, len(y))

    predicted = total[included] / count[included]
    actual = y[included]
    ss_res = float(((actual - predicted) ** 2).sum())
    ss_tot = float(((actual - actual.mean()) ** 2).sum())
    mse = ss_res / len(actual)
    if ss_tot == 0:
        r2 = 1.0 if ss_res == 0 else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    return mse, r2


def _serialize_tree(tree: TreeNode) -> list[str]:
    lines = []
    stack = [tree]
    while stack:
        node = stack.pop()
        if isinstance(node, Leaf):
            lines.append(f"leaf {_fmt(node.value)}")
        else:
            lines.append(f"split {node.feature} {_fmt(node.threshold)}")
            stack.append(node.right)
            stack.append(node.left)
    return lines


def serialize_forest(forest: Forest, origin: str | None = None) -> str:
    header = MODEL_HEADER if origin is None else f"{MODEL_HEADER} origin={origin}"
    lines = [
        header,
        f"n_trees={forest.n_trees} n_features={forest.n_features} mtry={forest.mtry} "
        f"min_leaf={forest.min_leaf} seed={forest.seed} bootstrap={int(forest.bootstrap)}",
    ]
    for i, tree in enumerate(forest.trees):
        body = _serialize_tree(tree)
        lines.append(f"tree {i} nodes={len(body)}")
        lines.extend(body)
    return "\n".join(lines) + "\n"


def save_forest(forest: Forest, path: str | Path, origin: str | None = None) -> None:
    Path(path).write_text(serialize_forest(forest, origin))


def save_models(models: tuple[Forest, Forest], path: str | Path) -> None:
    """
    Writes the left and right forests as two blocks of one model file.
    """
    left, right = models
    Path(path).write_text(serialize_forest(left, "left") + serialize_forest(right, "right"))


class _Lines:
    """Numbered line cursor for the model parser."""

    def __init__(self, text: str, source: str):
        self.lines = text.splitlines()
        self.position = 0
        self.source = source

    def error(self, reason: str) -> DatasetFormatError:
        return DatasetFormatError(reason, self.position, self.source)

    def at_end(self) -> bool:
        while self.position < len(self.lines) and not self.lines[self.position].strip():
            self.position += 1
        return self.position >= len(self.lines)

    def next(self) -> str:
        if self.at_end():
            raise DatasetFormatError("unexpected end of model file", None, self.source)
        self.position += 1
        return self.lines[self.position - 1].strip()


def _parse_settings(line: str, cursor: _Lines) -> dict[str, int]:
    try:
        settings = dict(token.split("=", 1) for token in line.split())
        return {key: int(settings[key]) for key in ("n_trees", "n_features", "mtry", "min_leaf", "seed", "bootstrap")}
    except (KeyError, ValueError):
        raise cursor.error("malformed forest settings line")


def _parse_tree(cursor: _Lines) -> TreeNode:
    header = cursor.next().split()
    if len(header) != 3 or header[0] != "tree" or not header[2].startswith("nodes="):
        raise cursor.error("expected 'tree <index> nodes=<count>'")
    try:
        count = int(header[2][len("nodes="):])
    except ValueError:
        raise cursor.error("node count is not an integer")

    root = None
    pending: list[Split] = []
    for _ in range(count):
        tokens = cursor.next().split()
        try:
            if tokens[0] == "leaf" and len(tokens) == 2:
                node = Leaf(float(tokens[1]))
            elif tokens[0] == "split" and len(tokens) == 3:
                node = Split(int(tokens[1]), float(tokens[2]))
            else:
                raise cursor.error(f"unknown node '{' '.join(tokens)}'")
        except (IndexError, ValueError):
            raise cursor.error("malformed node line")

        if root is None:
            root = node
        elif not pending:
            raise cursor.error("more nodes than the tree can hold")
        elif pending[-1].left is None:
            pending[-1].left = node
        else:
            pending.pop().right = node
        if isinstance(node, Split):
            pending.append(node)

    if root is None or pending:
        raise cursor.error("tree ended before every split had two children")
    return root


def _parse_forest(cursor: _Lines) -> tuple[Forest, str | None]:
    header = cursor.next()
    if not header.startswith(MODEL_HEADER):
        raise cursor.error(f"expected '{MODEL_HEADER}' header")
    origin = None
    rest = header[len(MODEL_HEADER):].strip()
    if rest.startswith("origin="):
        origin = rest[len("origin="):]
    settings = _parse_settings(cursor.next(), cursor)
    trees = [_parse_tree(cursor) for _ in range(settings["n_trees"])]
    forest = Forest(
        trees=trees,
        n_features=settings["n_features"],
        mtry=settings["mtry"],
        min_leaf=settings["min_leaf"],
        seed=settings["seed"],
        bootstrap=bool(settings["bootstrap"]),
    )
    return forest, origin


def load_forest(path: str | Path) -> Forest:
    cursor = _Lines(Path(path).read_text(), str(path))
    forest, _ = _parse_forest(cursor)
    return forest


def load_models(path: str | Path) -> tuple[Forest, Forest]:
    """
    Reads a model file written by save_models; returns (left, right).
    """
    cursor = _Lines(Path(path).read_text(), str(path))
    found = {}
    while not cursor.at_end():
        forest, origin = _parse_forest(cursor)
        if origin not in ("left", "right"):
            raise cursor.error("model blocks must be tagged origin=left or origin=right")
        found[origin] = forest
    if set(found) != {"left", "right"}:
        raise DatasetFormatError("model file must hold a left and a right forest", None, str(path))
    if found["left"].n_features != found["right"].n_features:
        raise DatasetFormatError("left and right forests disagree on the feature count", None, str(path))
    return found["left"], found["right"]
