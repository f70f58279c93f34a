"""The hop cascade: octant attribute pooling, channel-wise Saab banks, and
energy-threshold split termination.

Node bookkeeping
----------------
The root bank is fit on 24-dim hop-0 attributes (8 octant means of xyz).
Each of its output channels is a hop-0 node carrying energy from the parent
energy 1. A node whose energy is at least the threshold (and which is not on
the last hop) becomes internal: its per-point channel value is pooled into an
8-dim attribute on the next hop and gets its own 8-channel bank. All other
nodes are leaves. Node ids are assigned breadth first, so sorting by id gives
"by hop, then channel" and the children of one parent are contiguous.
"""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy import sparse

from . import _kernels
from .errors import InsufficientData, InvalidInput, InvalidState
from .geometry import NUM_OCTANTS, PointCloud, farthest_point_sample, knn_indices, octant_codes
from .saab import MomentAccumulator, SaabFilterBank, channel_energies

log = logging.getLogger(__name__)

AGGREGATIONS = ("mean", "max", "l1", "l2")
SPARSE_INPUT_MODES = ("scale", "pad")


@dataclass(frozen=True)
class TreeConfig:
    num_hops: int = 4
    k_per_hop: tuple = (32, 16, 16, 16)
    points_per_hop: tuple = (1024, 768, 512, 384)
    energy_threshold: float = 1e-4
    aggregations: tuple = ("mean", "max")
    drop_below_threshold: bool = False
    sparse_input: str = "scale"

    def __post_init__(self):
        object.__setattr__(self, "k_per_hop", tuple(int(k) for k in self.k_per_hop))
        object.__setattr__(self, "points_per_hop", tuple(int(n) for n in self.points_per_hop))
        object.__setattr__(self, "aggregations", tuple(self.aggregations))
        self.validate()

    def validate(self):
        h = self.num_hops
        if h < 1:
            raise InvalidInput("num_hops must be >= 1")
        if len(self.k_per_hop) != h or len(self.points_per_hop) != h:
            raise InvalidInput("k_per_hop and points_per_hop need one entry per hop")
        if any(b > a for a, b in zip(self.points_per_hop, self.points_per_hop[1:])):
            raise InvalidInput("points_per_hop must be nonincreasing")
        if any(k < 1 or k > n for k, n in zip(self.k_per_hop, self.points_per_hop)):
            raise InvalidInput("each k must satisfy 1 <= k <= points at that hop")
        if not 0 < self.energy_threshold <= 1:
            raise InvalidInput("energy_threshold must lie in (0, 1]")
        if self.sparse_input not in SPARSE_INPUT_MODES:
            raise InvalidInput(f"sparse_input must be one of {SPARSE_INPUT_MODES}")
        if not self.aggregations:
            raise InvalidInput("at least one aggregation is required")
        bad = [a for a in self.aggregations if a not in AGGREGATIONS]
        if bad or len(set(self.aggregations)) != len(self.aggregations):
            raise InvalidInput(f"aggregations must be distinct names from {AGGREGATIONS}")


@dataclass
class TreeNode:
    node_id: int
    hop: int
    channel: int
    energy: float
    parent_id: int = -1
    bank: Optional[SaabFilterBank] = None

    @property
    def is_leaf(self) -> bool:
        return self.bank is None


# ---------------------------------------------------------------------------
# Per-cloud geometry


@dataclass
class HopLayout:
    """Geometry of one hop for one cloud.

    ``pool`` maps per-point values of the previous point set (or the hop-0
    points themselves) to octant means, shape (8 * n_centers, n_previous).
    """

    points: np.ndarray
    pool: sparse.csr_matrix

    @property
    def num_points(self) -> int:
        return self.points.shape[0]

    def attributes(self, values: np.ndarray) -> np.ndarray:
        """Octant means of ``values`` (n_previous, C) -> (n_centers, 8, C)."""
        pooled = self.pool @ values
        return pooled.reshape(self.num_points, NUM_OCTANTS, values.shape[1])


def pooling_matrix(
    candidates: np.ndarray, centers: np.ndarray, center_ids: np.ndarray, k: int
) -> sparse.csr_matrix:
    """Sparse octant mean-pooling operator for ``k``-neighborhoods.

    Each center's neighborhood (itself included) is found among ``candidates``;
    the center is then dropped and the remaining k-1 neighbors averaged per
    octant. Empty octants pool to zero.
    """
    nbr = knn_indices(candidates, centers, k, center_ids)[:, 1:]
    n = centers.shape[0]
    codes = octant_codes(candidates[nbr] - centers[:, None, :]).astype(np.int64)
    rows = np.arange(n)[:, None] * NUM_OCTANTS + codes
    counts = np.bincount(rows.ravel(), minlength=n * NUM_OCTANTS)
    data = 1.0 / counts[rows]
    mat = sparse.csr_matrix(
        (data.ravel(), (rows.ravel(), nbr.ravel())), shape=(n * NUM_OCTANTS, candidates.shape[0])
    )
    mat.sort_indices()
    return mat


def build_attributes(cloud, centers: Sequence[int], k: int, per_point_attr) -> np.ndarray:
    """Octant attribute vectors for the given centers.

    Args:
        cloud: PointCloud or (N, 3) coordinates.
        centers: indices of the center points.
        k: neighborhood size including the center.
        per_point_attr: (N,) scalars or (N, D) vectors, one per point.

    Returns:
        (len(centers), 8 * D) matrix, octant blocks in octant-index order.
    """
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.int64)
    attr = np.asarray(per_point_attr, dtype=np.float64)
    if attr.ndim == 1:
        attr = attr[:, None]
    if attr.shape[0] != pts.shape[0]:
        raise InvalidInput("need one attribute per point")
    pool = pooling_matrix(pts, pts[centers], centers, k)
    return (pool @ attr).reshape(len(centers), NUM_OCTANTS * attr.shape[1])


def _with_replacement_fill(points: np.ndarray, n: int, seed: int) -> np.ndarray:
    """Pad a small cloud to n points by redrawing existing points.

    Points are put in canonical (lexicographic) order first so the result
    does not depend on input order.
    """
    canon = points[np.lexsort((points[:, 2], points[:, 1], points[:, 0]))]
    extra = np.random.default_rng(seed).integers(0, canon.shape[0], n - canon.shape[0])
    return np.concatenate([canon, canon[extra]])


def cloud_layout(cloud: PointCloud, config: TreeConfig, seed: int = 0) -> list:
    """FPS point sets and pooling operators for every hop of one cloud.

    Hop 0 keeps ``points_per_hop[0]`` FPS points and pools their coordinates
    over neighborhoods within that set. Hop h > 0 keeps an FPS subset of hop
    h-1's points as centers, with neighbors drawn from all of hop h-1's points.

    A cloud with fewer points than hop 0 needs is handled per
    ``config.sparse_input``: ``"scale"`` shrinks every hop's point count by
    the same ratio (k is kept, capped at the available points); ``"pad"``
    redraws existing points with replacement up to the hop-0 size.
    """
    pts = cloud.points
    counts = config.points_per_hop
    n = pts.shape[0]
    if n < counts[0]:
        if config.sparse_input == "pad":
            pts = _with_replacement_fill(pts, counts[0], seed)
        else:
            counts = tuple(max(1, int(round(c * n / config.points_per_hop[0]))) for c in counts)
            counts = (n,) + counts[1:]
    current = pts[farthest_point_sample(pts, counts[0])]
    k0 = min(config.k_per_hop[0], counts[0])
    layouts = [HopLayout(current, pooling_matrix(current, current, np.arange(counts[0]), k0))]
    for hop in range(1, config.num_hops):
        sel = farthest_point_sample(current, counts[hop])
        centers = current[sel]
        k = min(config.k_per_hop[hop], current.shape[0])
        layouts.append(HopLayout(centers, pooling_matrix(current, centers, sel, k)))
        current = centers
    return layouts


# ---------------------------------------------------------------------------
# The tree


@dataclass
class _HopPlan:
    """Stacked banks of the internal nodes feeding hop h (h >= 1)."""

    parent_columns: np.ndarray  # columns of hop h-1 coefficients that are internal
    means: np.ndarray  # (P, 8)
    weights: np.ndarray  # (P, 8, 8)


@dataclass
class FeatureTree:
    config: TreeConfig
    root_bank: Optional[SaabFilterBank] = None
    nodes: list = field(default_factory=list)

    # -- structure -------------------------------------------------------

    @property
    def fitted(self) -> bool:
        return self.root_bank is not None

    def _require_fitted(self):
        if not self.fitted:
            raise InvalidState("feature tree has not been fitted")

    def hop_nodes(self, hop: int) -> list:
        return [n for n in self.nodes if n.hop == hop]

    @property
    def leaves(self) -> list:
        return [n for n in self.nodes if n.is_leaf]

    @property
    def internal_nodes(self) -> list:
        return [n for n in self.nodes if not n.is_leaf]

    @property
    def leaf_order(self) -> list:
        """Leaf node ids contributing features, ordered by hop then channel."""
        last = self.config.num_hops - 1
        t = self.config.energy_threshold
        return [
            n.node_id
            for n in self.nodes
            if n.is_leaf and not (self.config.drop_below_threshold and n.hop < last and n.energy < t)
        ]

    @property
    def feature_provenance(self) -> list:
        return [(leaf, agg) for leaf in self.leaf_order for agg in self.config.aggregations]

    @property
    def feature_dim(self) -> int:
        return len(self.leaf_order) * len(self.config.aggregations)

    def feature_energies(self) -> np.ndarray:
        """Energy of the leaf behind each feature column."""
        energy = {n.node_id: n.energy for n in self.nodes}
        return np.array([energy[leaf] for leaf, _ in self.feature_provenance])

    def parameter_count(self) -> int:
        """Number of stored filter floats (weights and means of every bank)."""
        banks = [self.root_bank] + [n.bank for n in self.internal_nodes]
        return sum(b.input_dim * (b.input_dim + 1) for b in banks if b is not None)

    def prune(self, energy_threshold: float) -> "FeatureTree":
        """The tree a fit with a higher threshold would have produced.

        Banks depend only on ancestors, so raising the threshold just turns
        nodes into leaves and removes their descendants.
        """
        self._require_fitted()
        if energy_threshold < self.config.energy_threshold:
            raise InvalidInput("prune can only raise the energy threshold")
        config = replace(self.config, energy_threshold=energy_threshold)
        last = config.num_hops - 1
        kept, alive, remap = [], set(), {}
        for node in self.nodes:
            if node.parent_id != -1 and node.parent_id not in alive:
                continue
            internal = node.bank is not None and node.hop < last and node.energy >= energy_threshold
            new_id = len(kept)
            remap[node.node_id] = new_id
            parent = remap.get(node.parent_id, -1)
            kept.append(TreeNode(new_id, node.hop, node.channel, node.energy, parent, node.bank if internal else None))
            if internal:
                alive.add(node.node_id)
        return FeatureTree(config, self.root_bank, kept)

    # -- forward pass ------------------------------------------------------

    def _plans(self) -> list:
        plans = [None]
        for hop in range(1, self.config.num_hops):
            prev = self.hop_nodes(hop - 1)
            cols = np.array([i for i, n in enumerate(prev) if not n.is_leaf], dtype=np.int64)
            if cols.size == 0:
                break
            banks = [prev[i].bank for i in cols]
            plans.append(
                _HopPlan(
                    cols,
                    np.stack([b.mean for b in banks]),
                    np.stack([b.weights for b in banks]),
                )
            )
        return plans

    def _forward(self, layouts: list, plans: list, upto: Optional[int] = None, need_last: bool = True):
        """Yield (hop, coefficients, aggregates) for each hop.

        Coefficients are parent-major, shape (P, n_points, d): entry
        ``[p, :, j]`` is channel j of the p-th internal node feeding the hop,
        which is hop node ``p * d + j`` in node order. Hop 0 has P = 1.
        Aggregates have shape (P, d, n_aggregations). With ``need_last`` off
        the final hop's coefficients are not materialized.
        """
        agg_codes = np.array([_kernels.AGG_CODES[a] for a in self.config.aggregations], dtype=np.int64)
        last = len(plans) if upto is None else min(upto + 1, len(plans))
        lay = layouts[0]
        attrs = lay.attributes(lay.points).reshape(lay.num_points, -1, 1)
        root = self.root_bank
        coeffs, aggs = _kernels.hop_apply(
            attrs, root.mean[None], root.weights[None], agg_codes, need_last or last > 1
        )
        yield 0, coeffs, aggs
        for hop in range(1, last):
            plan = plans[hop]
            d = coeffs.shape[2]
            cols = plan.parent_columns
            values = np.ascontiguousarray(coeffs[cols // d, :, cols % d].T)  # (n_prev, P)
            attrs = np.ascontiguousarray(layouts[hop].attributes(values))  # (n, 8, P)
            coeffs, aggs = _kernels.hop_apply(
                attrs, plan.means, plan.weights, agg_codes, need_last or hop < last - 1
            )
            yield hop, coeffs, aggs

    def _leaf_columns(self) -> list:
        """Per hop, the coefficient columns that feed features."""
        wanted = set(self.leaf_order)
        return [
            np.array([i for i, n in enumerate(self.hop_nodes(hop)) if n.node_id in wanted], dtype=np.int64)
            for hop in range(self.config.num_hops)
        ]

    def _compiled(self):
        return self._plans(), self._leaf_columns()

    def transform_layout(self, layouts: list, compiled=None) -> np.ndarray:
        """Feature vector from a precomputed ``cloud_layout``."""
        self._require_fitted()
        plans, leaf_cols = self._compiled() if compiled is None else compiled
        parts = []
        for hop, _, aggs in self._forward(layouts, plans, need_last=False):
            cols = leaf_cols[hop]
            if cols.size:
                parts.append(aggs.reshape(-1, aggs.shape[2])[cols])
        return np.concatenate(parts, axis=0).ravel()

    def transform(self, cloud: PointCloud, seed: int = 0) -> "GlobalFeature":
        """Global feature vector of one cloud."""
        self._require_fitted()
        values = self.transform_layout(cloud_layout(cloud, self.config, seed))
        return GlobalFeature(values, self.feature_provenance)

    def transform_many(self, clouds: Sequence[PointCloud], seed: int = 0, threads: int = 1) -> np.ndarray:
        """(len(clouds), feature_dim) feature matrix."""
        self._require_fitted()
        compiled = self._compiled()

        def one(cloud):
            return self.transform_layout(cloud_layout(cloud, self.config, seed), compiled)

        rows = _map(one, clouds, threads)
        return np.vstack(rows) if rows else np.zeros((0, self.feature_dim))

    def hop0_coefficients(self, cloud: PointCloud, seed: int = 0) -> np.ndarray:
        """Root-bank coefficients for every hop-0 point of a cloud."""
        self._require_fitted()
        layouts = cloud_layout(cloud, replace(self.config, num_hops=1, k_per_hop=self.config.k_per_hop[:1],
                                              points_per_hop=self.config.points_per_hop[:1]), seed)
        return next(self._forward(layouts, [None]))[1][0]


@dataclass
class GlobalFeature:
    values: np.ndarray
    provenance: list


def aggregate(values: np.ndarray, aggregations: Sequence[str], axis: int = 0) -> np.ndarray:
    """Pool over the point axis; aggregations are stacked on a new last axis.

    ``l1`` and ``l2`` are the mean absolute value and root mean square.
    """
    out = []
    for name in aggregations:
        if name == "mean":
            out.append(values.mean(axis=axis))
        elif name == "max":
            out.append(values.max(axis=axis))
        elif name == "l1":
            out.append(np.abs(values).mean(axis=axis))
        elif name == "l2":
            out.append(np.sqrt((values * values).mean(axis=axis)))
        else:
            raise InvalidInput(f"unknown aggregation {name!r}")
    return np.stack(out, axis=-1)


def _map(fn, items, threads: int) -> list:
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def fit_tree(
    clouds: Sequence[PointCloud],
    config: TreeConfig = TreeConfig(),
    seed: int = 0,
    threads: int = 1,
    layouts: Optional[list] = None,
) -> FeatureTree:
    """Fit the feature tree on training clouds.

    Statistics are accumulated per cloud and merged in input order, so the
    result does not depend on ``threads``.

    Args:
        clouds: training clouds (at least 2).
        config: tree hyper-parameters.
        seed: seed for padding clouds smaller than the hop-0 size.
        threads: worker threads for per-cloud work.
        layouts: precomputed ``cloud_layout`` results, one per cloud.
    """
    if len(clouds) < 2:
        raise InsufficientData("fit_tree needs at least 2 training clouds")
    if layouts is None:
        layouts = _map(lambda c: cloud_layout(c, config, seed), clouds, threads)

    tree = FeatureTree(config)
    root_acc = _merge_all(
        _map(lambda lay: MomentAccumulator.from_samples(
            lay[0].attributes(lay[0].points).reshape(lay[0].num_points, -1)), layouts, threads)
    )
    tree.root_bank = SaabFilterBank.from_moments(root_acc)
    last = config.num_hops - 1
    t = config.energy_threshold
    for ch, e in enumerate(channel_energies(tree.root_bank, 1.0)):
        tree.nodes.append(TreeNode(len(tree.nodes), 0, ch, float(e)))

    for hop in range(0, last):
        parents = [n for n in tree.hop_nodes(hop) if n.energy >= t]
        if not parents:
            warnings.warn(f"no node at hop {hop} reaches the energy threshold; the tree stops early")
            break
        hop_ids = [n.node_id for n in tree.hop_nodes(hop)]
        cols = np.array([hop_ids.index(p.node_id) for p in parents], dtype=np.int64)
        plans = tree._plans()

        def stats(lay, hop=hop, cols=cols, plans=plans):
            coeffs = None
            for _, coeffs, _ in tree._forward(lay, plans, upto=hop):
                pass
            d = coeffs.shape[2]
            values = np.ascontiguousarray(coeffs[cols // d, :, cols % d].T)
            attrs = lay[hop + 1].attributes(values)  # (n, 8, P)
            return MomentAccumulator.from_samples(attrs.transpose(0, 2, 1))

        acc = _merge_all(_map(stats, layouts, threads))
        for i, parent in enumerate(parents):
            bank = SaabFilterBank.from_moments(acc.select(i))
            parent.bank = bank
            for ch, e in enumerate(channel_energies(bank, parent.energy)):
                tree.nodes.append(TreeNode(len(tree.nodes), hop + 1, ch, float(e), parent.node_id))
        log.info("hop %d: %d internal nodes, %d children", hop, len(parents), 8 * len(parents))
    return tree


def _merge_all(accs: list) -> MomentAccumulator:
    total = accs[0]
    for acc in accs[1:]:
        total = total.merge(acc)
    return total
