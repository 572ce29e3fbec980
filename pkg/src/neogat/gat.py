"""Masked single-head graph attention over the montage graph."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class GatLayer:
    W: Tensor  # (F, F')
    a: Tensor  # (2F',)
    mask: np.ndarray  # (n, n) bool
    slope: float = 0.2

    @property
    def out_features(self) -> int:
        return self.W.shape[1]


def attention_logits(hw: Tensor, a: Tensor, slope: float = 0.2) -> Tensor:
    """``e[i, j] = LeakyReLU([h_i W || h_j W] . a)`` for every node pair.

    The concatenation splits into a destination term and a source term, so the
    full pair matrix is a broadcast sum of two projections.
    """
    f = hw.shape[-1]
    dst = ad.matmul(hw, a[:f])  # (..., n)
    src = ad.matmul(hw, a[f:])
    n = hw.shape[-2]
    lead = hw.shape[:-2]
    e = ad.add(ad.reshape(dst, lead + (n, 1)), ad.reshape(src, lead + (1, n)))
    return ad.leaky_relu(e, slope)


def attention_coefficients(h: Tensor, layer: GatLayer) -> Tensor:
    """Row-stochastic masked attention matrix ``A`` (rows = destination node)."""
    hw = ad.matmul(h, layer.W)
    return ad.masked_softmax(attention_logits(hw, layer.a, layer.slope), layer.mask)


def gat_forward(h: Tensor, layer: GatLayer, return_attention: bool = False):
    """``ELU(A (H W))``."""
    if h.shape[-1] != layer.W.shape[0]:
        raise ad.ShapeError(f"GAT input width {h.shape[-1]} != W rows {layer.W.shape[0]}")
    hw = ad.matmul(h, layer.W)
    att = ad.masked_softmax(attention_logits(hw, layer.a, layer.slope), layer.mask)
    out = ad.elu(ad.matmul(att, hw))
    return (out, att) if return_attention else out


def gat_stack(
    h: Tensor,
    layers: list[GatLayer],
    train: bool = False,
    rng: np.random.Generator | None = None,
    p_drop: float = 0.2,
    trace: dict | None = None,
) -> Tensor:
    """Sequential GAT layers with dropout on node features between them.

    Dropout is not applied after the last layer here; the caller decides what
    follows it.
    """
    for i, layer in enumerate(layers):
        h, att = gat_forward(h, layer, return_attention=True)
        if trace is not None:
            trace[f"gat{i + 1}"] = h
            trace[f"gat{i + 1}.attention"] = att
        if i < len(layers) - 1:
            h = ad.dropout(h, p_drop, train, rng)
    return h

