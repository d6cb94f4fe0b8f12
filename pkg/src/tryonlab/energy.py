"""Attract/repel energies over attention maps and their analytic gradients.

The attract term penalises attention mass outside a region mask relative
to the mass inside it. The repel term has two branches: when the
(thresholded) support of the map lies entirely inside the mask, a pairwise
hinge spaces the in-mask values apart; otherwise a linear term rewards
total in-mask mass. Per-layer energies combine as attract + lam * repel
and aggregate across selected layers by arithmetic mean.

Gradients treat the support set, the pair count, and a clamped
denominator as constants: they are discontinuous in the map, so only the
smooth factors are differentiated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grids import BinaryMask, Grid

__all__ = [
    "AttentionLayer",
    "EnergyConfig",
    "LayerEnergy",
    "EnergyBreakdown",
    "EnergyError",
    "support",
    "e_attract",
    "grad_e_attract",
    "e_repel_inner",
    "e_repel_outer",
    "e_repel",
    "grad_e_repel",
    "e_total",
    "grad_e_total",
]

BRANCH_INNER = "inner"
BRANCH_OUTER = "outer"


class EnergyError(ValueError):
    """Invalid energy evaluation (shape mismatch, empty selection, ...)."""


@dataclass(frozen=True)
class AttentionLayer:
    """One attention map at a named layer; values non-negative."""

    layer_id: str
    map: Grid

    def __post_init__(self):
        if float(self.map.a.min()) < 0.0:
            raise EnergyError(f"layer {self.layer_id}: attention map has negative values")

    @property
    def resolution(self) -> tuple[int, int]:
        return self.map.shape


@dataclass(frozen=True)
class EnergyConfig:
    """All knobs of the region energy in one record.

    lam weights the repel term, delta is the hinge margin, support_tau is
    the relative threshold defining the nonzero support of a map, and
    epsilon_den clamps the attract denominator. layer_select = None means
    every provided layer participates in the aggregate.
    """

    lam: float = 0.01
    delta: float = 0.02
    support_tau: float = 0.01
    epsilon_den: float = 1e-8
    layer_select: frozenset[str] | None = None

    def __post_init__(self):
        if self.lam < 0 or self.delta < 0:
            raise EnergyError("lam and delta must be >= 0")
        if not 0.0 < self.support_tau < 1.0:
            raise EnergyError("support_tau must be in (0, 1)")
        if self.epsilon_den <= 0.0:
            raise EnergyError("epsilon_den must be > 0")
        if self.layer_select is not None:
            object.__setattr__(self, "layer_select", frozenset(self.layer_select))

    def selects(self, layer_id: str) -> bool:
        return self.layer_select is None or layer_id in self.layer_select


@dataclass(frozen=True)
class LayerEnergy:
    e_attract: float
    e_repel: float
    branch: str
    in_mask_mass: float
    selected: bool


@dataclass(frozen=True)
class EnergyBreakdown:
    """Per-layer energies plus the aggregate over selected layers."""

    per_layer: dict[str, LayerEnergy]
    total: float
    e_attract: float
    e_repel: float

    @property
    def branch_label(self) -> str:
        return "|".join(le.branch for le in self.per_layer.values() if le.selected)


def _check_pair(a_shape, m_shape):
    if a_shape != m_shape:
        raise EnergyError(f"attention shape {a_shape} != mask shape {m_shape}")


def _support_raw(a: np.ndarray, tau: float) -> np.ndarray:
    return a > tau * a.max()


def support(A: Grid, tau: float) -> BinaryMask:
    """Positions where A exceeds tau * max(A); empty for an all-zero map."""
    return BinaryMask(Grid(_support_raw(A.a, tau).astype(np.float64), _checked=True))


def _attract_raw(a, m, eps):
    s_in = float((a * m).sum())
    s_out = float(a.sum()) - s_in
    return s_out / max(s_in, eps), s_in, s_out


def e_attract(A: Grid, M: BinaryMask, cfg: EnergyConfig = EnergyConfig()) -> float:
    """Attention mass outside the mask over (clamped) mass inside it."""
    _check_pair(A.shape, M.shape)
    value, _, _ = _attract_raw(A.a, M.a, cfg.epsilon_den)
    return value


def _grad_attract_raw(a, m, eps):
    s_in = float((a * m).sum())
    s_out = float(a.sum()) - s_in
    if s_in < eps:
        # clamped denominator is a constant: only the numerator varies
        return (1.0 - m) / eps
    return (1.0 - m) / s_in - (s_out / (s_in * s_in)) * m


def grad_e_attract(A: Grid, M: BinaryMask, cfg: EnergyConfig = EnergyConfig()) -> Grid:
    _check_pair(A.shape, M.shape)
    return Grid(_grad_attract_raw(A.a, M.a, cfg.epsilon_den), _checked=True)


def _inner_points(a, m, tau):
    sel = _support_raw(a, tau) & (m > 0.0)
    return a[sel], sel


def e_repel_inner(A: Grid, M: BinaryMask, cfg: EnergyConfig = EnergyConfig()) -> float:
    """Mean hinge over ordered distinct pairs of in-support in-mask values."""
    _check_pair(A.shape, M.shape)
    pts, _ = _inner_points(A.a, M.a, cfg.support_tau)
    if pts.size == 0:
        raise EnergyError("inner repel undefined: no in-support points inside the mask")
    return _repel_inner_raw(pts, cfg.delta)


def _repel_inner_raw(pts: np.ndarray, delta: float) -> float:
    n = pts.size
    if n == 1:
        return 0.0
    h = delta - np.abs(pts[:, None] - pts[None, :])
    np.fill_diagonal(h, 0.0)
    return float(h[h > 0.0].sum()) / n


def e_repel_outer(A: Grid, M: BinaryMask) -> float:
    """Negative total attention mass inside the mask."""
    _check_pair(A.shape, M.shape)
    return -float((A.a * M.a).sum())


def _branch_raw(a, m, tau) -> str:
    sup = _support_raw(a, tau)
    if not (sup & (m == 0.0)).any() and (sup & (m > 0.0)).any():
        return BRANCH_INNER
    return BRANCH_OUTER


def e_repel(A: Grid, M: BinaryMask, cfg: EnergyConfig = EnergyConfig()) -> tuple[float, str]:
    """Branch-selected repel energy: inner iff the support is nonempty and
    entirely inside the mask, else outer."""
    _check_pair(A.shape, M.shape)
    value, branch, _ = _repel_raw(A.a, M.a, cfg)
    return value, branch


def _repel_raw(a, m, cfg):
    branch = _branch_raw(a, m, cfg.support_tau)
    if branch == BRANCH_INNER:
        pts, sel = _inner_points(a, m, cfg.support_tau)
        return _repel_inner_raw(pts, cfg.delta), branch, sel
    return -float((a * m).sum()), branch, None


def grad_e_repel(A: Grid, M: BinaryMask, cfg: EnergyConfig = EnergyConfig()) -> Grid:
    _check_pair(A.shape, M.shape)
    return Grid(_grad_repel_raw(A.a, M.a, cfg), _checked=True)


def _grad_repel_raw(a, m, cfg) -> np.ndarray:
    branch = _branch_raw(a, m, cfg.support_tau)
    if branch == BRANCH_OUTER:
        return -m
    pts, sel = _inner_points(a, m, cfg.support_tau)
    n = pts.size
    grad = np.zeros_like(a)
    if n > 1:
        d = pts[:, None] - pts[None, :]
        active = np.abs(d) < cfg.delta
        np.fill_diagonal(active, False)
        # pair (p, q) adds -sign/N at p and +sign/N at q; summing both
        # orderings doubles the one-sided row sum
        grad[sel] = -2.0 * (active * np.sign(d)).sum(axis=1) / n
    return grad


def _resolve_selection(layers, cfg) -> list[bool]:
    flags = [cfg.selects(layer.layer_id) for layer in layers]
    if not any(flags):
        raise EnergyError("layer selection is empty")
    return flags


def _evaluate_layers(layers, masks, cfg, with_grads: bool):
    """Shared per-layer evaluation; returns (breakdown, grads or None)."""
    if len(layers) != len(masks):
        raise EnergyError(f"{len(layers)} layers but {len(masks)} masks")
    flags = _resolve_selection(layers, cfg)
    n_sel = sum(flags)
    per_layer: dict[str, LayerEnergy] = {}
    grads: list[Grid] | None = [] if with_grads else None
    att_sum = rep_sum = 0.0
    for layer, mask, selected in zip(layers, masks, flags):
        a, m = layer.map.a, mask.a
        _check_pair(a.shape, m.shape)
        e_att, s_in, _ = _attract_raw(a, m, cfg.epsilon_den)
        e_rep, branch, _ = _repel_raw(a, m, cfg)
        per_layer[layer.layer_id] = LayerEnergy(e_att, e_rep, branch, s_in, selected)
        if selected:
            att_sum += e_att
            rep_sum += e_rep
        if with_grads:
            if selected:
                g = _grad_attract_raw(a, m, cfg.epsilon_den)
                g = g + cfg.lam * _grad_repel_raw(a, m, cfg)
                grads.append(Grid(g / n_sel, _checked=True))
            else:
                grads.append(Grid.zeros(*a.shape))
    breakdown = EnergyBreakdown(
        per_layer=per_layer,
        total=(att_sum + cfg.lam * rep_sum) / n_sel,
        e_attract=att_sum / n_sel,
        e_repel=rep_sum / n_sel,
    )
    return breakdown, grads


def e_total(
    layers: list[AttentionLayer],
    masks: list[BinaryMask],
    cfg: EnergyConfig = EnergyConfig(),
) -> EnergyBreakdown:
    """Per-layer attract + lam * repel, averaged over selected layers.

    Unselected layers are reported in the breakdown but excluded from the
    aggregate. Masks must already be at each layer's resolution.
    """
    breakdown, _ = _evaluate_layers(layers, masks, cfg, with_grads=False)
    return breakdown


def grad_e_total(
    layers: list[AttentionLayer],
    masks: list[BinaryMask],
    cfg: EnergyConfig = EnergyConfig(),
) -> list[Grid]:
    """Gradient of e_total's aggregate w.r.t. each layer's map.

    Entries align with the input layer order; unselected layers get zero
    grids.
    """
    _, grads = _evaluate_layers(layers, masks, cfg, with_grads=True)
    return grads
