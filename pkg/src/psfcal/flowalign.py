"""Coarse-to-fine displacement pyramid that warps the proxy onto the observation.

The field is optimised directly, one dyadic level at a time; each level adds
a residual on top of the upsampled coarser ones.
"""
import math
from dataclasses import dataclass


from . import _kernels
from .errors import InvalidInput
from .imagecore import FlowField, upsample_flow, upsample_flow_adjoint

MIN_LEVEL_SIZE = 4


@dataclass
class FlowParams:
    levels: list  # FlowField per level, coarsest first
    current: int = 0

    @property
    def n_levels(self):
        return len(self.levels)

    @property
    def shape(self):
        return self.levels[-1].shape

    def copy(self):
        return FlowParams([FlowField(v.dx.copy(), v.dy.copy()) for v in self.levels], self.current)


def level_shapes(width, height, levels):
    return [
        (math.ceil(height / 2 ** (levels - 1 - i)), math.ceil(width / 2 ** (levels - 1 - i)))
        for i in range(levels)
    ]


def init_flow(width, height, levels):
    """Zero pyramid (identity warp) with ``levels`` dyadic levels."""
    if levels < 1:
        raise InvalidInput("need at least one pyramid level")
    shapes = level_shapes(width, height, levels)
    if min(shapes[0]) < MIN_LEVEL_SIZE:
        raise InvalidInput(f"{levels} levels leave a coarsest level of {shapes[0]}, below 4x4")
    return FlowParams([FlowField.zeros(*s) for s in shapes], 0)


def compose_flow(p, upto=None):
    """Full-resolution field: sequential upsample-and-add through the active levels.

    Levels finer than ``upto`` (default ``p.current``) contribute nothing
    but still set the output resolution.
    """
    upto = p.current if upto is None else upto
    v = p.levels[0]
    for lvl in range(1, p.n_levels):
        shape = p.levels[lvl].shape
        v = upsample_flow(v, shape)
        if lvl <= upto:
            v = v + p.levels[lvl]
    return v


def compose_flow_adjoint(p, g, upto=None):
    """Pull a full-resolution gradient back onto every active level (list, coarsest first)."""
    upto = p.current if upto is None else upto
    grads = [None] * p.n_levels
    for lvl in range(p.n_levels - 1, 0, -1):
        if lvl <= upto:
            grads[lvl] = FlowField._raw(g.dx.copy(), g.dy.copy())
        g = upsample_flow_adjoint(g, p.levels[lvl - 1].shape)
    grads[0] = g
    return grads


def flow_smoothness(v):
    """Mean squared forward-difference gradient of both displacement components."""
    return flow_smoothness_value_grad(v)[0]


def flow_smoothness_grad(v):
    return flow_smoothness_value_grad(v)[1]


def flow_smoothness_value_grad(v):
    n = v.dx.size
    total, gdx, gdy = _kernels.smoothness(v.dx, v.dy)
    return total / n, FlowField._raw(gdx / n, gdy / n)
