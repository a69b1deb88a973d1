"""Oriented-box contact tests for translating agents.

Boxes are given by center, heading and half extents ``(half_length,
half_width)``. Contact times use the separating-axis theorem with
constant velocities: on each of the four candidate axes the projected
intervals overlap during one time window, and the boxes touch during the
intersection of those windows.
"""

from __future__ import annotations

import numpy as np


def first_contact(pa, ha, va, half_a, pb, hb, vb, half_b) -> np.ndarray:
    """Earliest t >= 0 at which boxes a and b touch; 0 if they overlap now, inf if never.

    All arguments broadcast against each other: positions and velocities
    have a trailing axis of 2, headings none, half extents a trailing 2.
    """
    pa, pb, va, vb = (np.asarray(t, float) for t in (pa, pb, va, vb))
    half_a = np.asarray(half_a, float)
    half_b = np.asarray(half_b, float)
    ca, sa = np.cos(ha), np.sin(ha)
    cb, sb = np.cos(hb), np.sin(hb)
    # |cos| and |sin| of the relative heading give every projected radius.
    c = np.abs(ca * cb + sa * sb)
    s = np.abs(ca * sb - sa * cb)
    la, wa = half_a[..., 0], half_a[..., 1]
    lb, wb = half_b[..., 0], half_b[..., 1]
    dx = pb[..., 0] - pa[..., 0]
    dy = pb[..., 1] - pa[..., 1]
    ux = vb[..., 0] - va[..., 0]
    uy = vb[..., 1] - va[..., 1]
    axes = (
        (ca, sa, la + lb * c + wb * s),
        (-sa, ca, wa + lb * s + wb * c),
        (cb, sb, la * c + wa * s + lb),
        (-sb, cb, la * s + wa * c + wb),
    )
    t_in = -np.inf
    t_out = np.inf
    for ax, ay, r in axes:
        d = dx * ax + dy * ay
        q = ux * ax + uy * ay
        moving = q != 0.0
        safe_q = np.where(moving, q, 1.0)
        t1 = (-r - d) / safe_q
        t2 = (r - d) / safe_q
        inside = np.abs(d) <= r
        t_in = np.maximum(t_in, np.where(moving, np.minimum(t1, t2), np.where(inside, -np.inf, np.inf)))
        t_out = np.minimum(t_out, np.where(moving, np.maximum(t1, t2), np.where(inside, np.inf, -np.inf)))
    hit = (t_in <= t_out) & (t_out >= 0.0)
    return np.where(hit, np.maximum(t_in, 0.0), np.inf)


def overlaps(pa, ha, half_a, pb, hb, half_b) -> np.ndarray:
    """Static separating-axis overlap test (touching counts as overlap)."""
    zero = np.zeros(2)
    return first_contact(pa, ha, zero, half_a, pb, hb, zero, half_b) == 0.0


def pairwise_contact(pos, heading, vel, half) -> np.ndarray:
    """First-contact matrix ``(..., N, N)`` among N agents; the diagonal is inf."""
    t = first_contact(
        pos[..., :, None, :], heading[..., :, None], vel[..., :, None, :], half[..., :, None, :],
        pos[..., None, :, :], heading[..., None, :], vel[..., None, :, :], half[..., None, :, :],
    )
    n = pos.shape[-2]
    t[..., np.arange(n), np.arange(n)] = np.inf
    return t
