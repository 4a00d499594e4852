"""Analytic crowd controllers: ORCA and the Social Force Model.

Both are used to drive pedestrians and, with privileged state, as ego
baselines. Agent indices follow ``WorldState.all_positions()``: 0 is the ego,
``i >= 1`` is pedestrian ``i - 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .world import AgentState, WorldState

LP_EPSILON = 1e-5
HEAD_ON_TILT = 1e-4  # rad, deterministic symmetry breaker


@dataclass(frozen=True)
class OrcaParams:
    time_horizon: float = 2.0
    neighbor_dist: float = 2.0
    max_neighbors: int = 10
    max_speed: float = 1.0

    def __post_init__(self) -> None:
        if min(self.time_horizon, self.neighbor_dist, self.max_speed) <= 0 or self.max_neighbors < 1:
            raise ValueError(f"invalid ORCA parameters: {self}")


@dataclass(frozen=True)
class SfmParams:
    strength_A: float = 2.0
    range_B: float = 0.3
    relaxation_time: float = 0.5
    desired_speed: float = 1.0

    def __post_init__(self) -> None:
        if min(self.strength_A, self.range_B, self.relaxation_time, self.desired_speed) <= 0:
            raise ValueError(f"invalid SFM parameters: {self}")


class HalfPlane(NamedTuple):
    """Velocity constraint ``(v - point) . normal >= 0``."""

    point: tuple[float, float]
    normal: tuple[float, float]

    @property
    def direction(self) -> tuple[float, float]:
        # permitted side lies to the left of ``direction``
        return (self.normal[1], -self.normal[0])

    def contains(self, v: Sequence[float], tol: float = 0.0) -> bool:
        return (v[0] - self.point[0]) * self.normal[0] + (v[1] - self.point[1]) * self.normal[1] >= -tol


def _det(ax: float, ay: float, bx: float, by: float) -> float:
    return ax * by - ay * bx


def _halfplane_from_line(px: float, py: float, dx: float, dy: float) -> HalfPlane:
    return HalfPlane((px, py), (-dy, dx))


def orca_halfplane(me: AgentState, other: AgentState, params: OrcaParams, dt: float) -> HalfPlane:
    """Reciprocal half-plane constraint on ``me``'s velocity induced by ``other``.

    Builds the velocity obstacle truncated at ``time_horizon``, finds the
    smallest change ``u`` that takes the relative velocity out of it and
    places the boundary at ``v + u / 2``. Overlapping agents use ``dt`` as
    the escape horizon. Coincident centres are separated along +x.
    """
    return _orca_halfplane(
        (float(me.position[0]), float(me.position[1])),
        (float(me.velocity[0]), float(me.velocity[1])),
        float(me.radius),
        (float(other.position[0]), float(other.position[1])),
        (float(other.velocity[0]), float(other.velocity[1])),
        float(other.radius),
        params,
        dt,
    )


def _orca_halfplane(
    pos: Sequence[float],
    vel: Sequence[float],
    radius: float,
    other_pos: Sequence[float],
    other_vel: Sequence[float],
    other_radius: float,
    params: OrcaParams,
    dt: float,
) -> HalfPlane:
    rpx, rpy = other_pos[0] - pos[0], other_pos[1] - pos[1]
    rvx, rvy = vel[0] - other_vel[0], vel[1] - other_vel[1]
    dist_sq = rpx * rpx + rpy * rpy
    combined = radius + other_radius
    combined_sq = combined * combined

    if dist_sq == 0.0:
        # coincident centres: push along a fixed axis
        rpx, rpy = -1e-9, 0.0
        dist_sq = rpx * rpx

    if dist_sq > combined_sq:
        inv_tau = 1.0 / params.time_horizon
        wx, wy = rvx - inv_tau * rpx, rvy - inv_tau * rpy
        w_len_sq = wx * wx + wy * wy
        dot1 = wx * rpx + wy * rpy
        if dot1 < 0.0 and dot1 * dot1 > combined_sq * w_len_sq:
            # project onto the cut-off circle
            w_len = math.sqrt(w_len_sq)
            ux_, uy_ = wx / w_len, wy / w_len
            dx, dy = uy_, -ux_
            scale = combined * inv_tau - w_len
            ux, uy = scale * ux_, scale * uy_
        else:
            leg = math.sqrt(dist_sq - combined_sq)
            if _det(rpx, rpy, wx, wy) > 0.0:
                dx = (rpx * leg - rpy * combined) / dist_sq
                dy = (rpx * combined + rpy * leg) / dist_sq
            else:
                dx = -(rpx * leg + rpy * combined) / dist_sq
                dy = -(-rpx * combined + rpy * leg) / dist_sq
            dot2 = rvx * dx + rvy * dy
            ux, uy = dot2 * dx - rvx, dot2 * dy - rvy
    else:
        inv_dt = 1.0 / dt
        wx, wy = rvx - inv_dt * rpx, rvy - inv_dt * rpy
        w_len = math.hypot(wx, wy)
        if w_len == 0.0:
            d = math.sqrt(dist_sq)
            ux_, uy_ = -rpx / d, -rpy / d
        else:
            ux_, uy_ = wx / w_len, wy / w_len
        dx, dy = uy_, -ux_
        scale = combined * inv_dt - w_len
        ux, uy = scale * ux_, scale * uy_

    return _halfplane_from_line(vel[0] + 0.5 * ux, vel[1] + 0.5 * uy, dx, dy)


# -- 2D linear program (closest feasible point inside a speed disk) --------


def _lp1(lines, i, radius, opt, direction_opt):
    (px, py), (dx, dy) = lines[i]
    dot = px * dx + py * dy
    disc = dot * dot + radius * radius - (px * px + py * py)
    if disc < 0.0:
        return None
    sq = math.sqrt(disc)
    t_left, t_right = -dot - sq, -dot + sq
    for j in range(i):
        (qx, qy), (ex, ey) = lines[j]
        denom = _det(dx, dy, ex, ey)
        numer = _det(ex, ey, px - qx, py - qy)
        if abs(denom) <= LP_EPSILON:
            if numer < 0.0:
                return None
            continue
        t = numer / denom
        if denom >= 0.0:
            t_right = min(t_right, t)
        else:
            t_left = max(t_left, t)
        if t_left > t_right:
            return None
    if direction_opt:
        t = t_right if opt[0] * dx + opt[1] * dy > 0.0 else t_left
    else:
        t = dx * (opt[0] - px) + dy * (opt[1] - py)
        t = min(max(t, t_left), t_right)
    return (px + t * dx, py + t * dy)


def _lp2(lines, radius, opt, direction_opt):
    if direction_opt:
        result = (opt[0] * radius, opt[1] * radius)
    elif opt[0] * opt[0] + opt[1] * opt[1] > radius * radius:
        n = math.hypot(opt[0], opt[1])
        result = (opt[0] / n * radius, opt[1] / n * radius)
    else:
        result = (opt[0], opt[1])
    for i, ((px, py), (dx, dy)) in enumerate(lines):
        if _det(dx, dy, px - result[0], py - result[1]) > 0.0:
            new = _lp1(lines, i, radius, opt, direction_opt)
            if new is None:
                return i, result
            result = new
    return len(lines), result


def _lp3(lines, begin, radius, result):
    distance = 0.0
    for i in range(begin, len(lines)):
        (px, py), (dx, dy) = lines[i]
        if _det(dx, dy, px - result[0], py - result[1]) > distance:
            proj = []
            for j in range(i):
                (qx, qy), (ex, ey) = lines[j]
                determinant = _det(dx, dy, ex, ey)
                if abs(determinant) <= LP_EPSILON:
                    if dx * ex + dy * ey > 0.0:
                        continue
                    point = (0.5 * (px + qx), 0.5 * (py + qy))
                else:
                    s = _det(ex, ey, px - qx, py - qy) / determinant
                    point = (px + s * dx, py + s * dy)
                fx, fy = ex - dx, ey - dy
                fn = math.hypot(fx, fy)
                proj.append((point, (fx / fn, fy / fn)))
            count, candidate = _lp2(proj, radius, (-dy, dx), True)
            if count == len(proj):
                result = candidate
            distance = _det(dx, dy, px - result[0], py - result[1])
    return result


def solve_lp2(constraints: Sequence[HalfPlane], preferred: Sequence[float], max_speed: float) -> np.ndarray:
    """Velocity closest to ``preferred`` satisfying every half-plane and the speed disk.

    When the constraints have no common point inside the disk, falls back to
    the velocity minimising the largest constraint violation.
    """
    if max_speed <= 0:
        raise ValueError("max_speed must be positive")
    lines = [(h.point, h.direction) for h in constraints]
    opt = (float(preferred[0]), float(preferred[1]))
    failed, result = _lp2(lines, max_speed, opt, False)
    if failed < len(lines):
        result = _lp3(lines, failed, max_speed, result)
    return np.array(result)


# -- agent-level controllers ----------------------------------------------


def preferred_velocity(pos: np.ndarray, goal: np.ndarray, speed: float, dt: float) -> np.ndarray:
    """Goal-directed velocity at ``speed``, slowed so it never overshoots within one step."""
    delta = goal - pos
    dist = float(np.hypot(*delta))
    if dist == 0.0:
        return np.zeros(2)
    return delta / dist * min(speed, dist / dt)


def orca_velocity(agent_index: int, world: WorldState, params: OrcaParams = OrcaParams(), dt: float = 0.1) -> np.ndarray:
    pos = world.all_positions()
    vel = world.all_velocities()
    radii = world.all_radii()
    me = pos[agent_index]
    pref = preferred_velocity(me, world.all_goals()[agent_index], params.max_speed, dt)

    dists = np.hypot(*(pos - me).T)
    dists[agent_index] = np.inf
    in_range = np.flatnonzero(dists < params.neighbor_dist)
    neighbors = in_range[np.argsort(dists[in_range], kind="stable")][: params.max_neighbors]

    pref_norm = float(np.hypot(*pref))
    if pref_norm > 0.0:
        for j in neighbors:
            rel = pos[j] - me
            cross = pref[0] * rel[1] - pref[1] * rel[0]
            if abs(cross) <= 1e-12 * pref_norm * dists[j] and pref @ rel > 0.0:
                c, s = math.cos(HEAD_ON_TILT), math.sin(HEAD_ON_TILT)
                pref = np.array([c * pref[0] - s * pref[1], s * pref[0] + c * pref[1]])
                break

    mx, my = float(me[0]), float(me[1])
    mv = (float(vel[agent_index, 0]), float(vel[agent_index, 1]))
    constraints = [
        _orca_halfplane(
            (mx, my), mv, float(radii[agent_index]),
            (float(pos[j, 0]), float(pos[j, 1])), (float(vel[j, 0]), float(vel[j, 1])), float(radii[j]),
            params, dt,
        )
        for j in neighbors
    ]
    return solve_lp2(constraints, pref, params.max_speed)


def sfm_repulsion(offset: np.ndarray, radius_sum: float, params: SfmParams) -> np.ndarray:
    """Repulsive force on an agent from a neighbour at ``offset = p_agent - p_neighbour``."""
    d = float(np.hypot(*offset))
    return params.strength_A * math.exp((radius_sum - d) / params.range_B) * offset / d


def sfm_all_velocities(
    pos: np.ndarray,
    vel: np.ndarray,
    goals: np.ndarray,
    radii: np.ndarray,
    params: SfmParams,
    dt: float,
    max_speed: float,
) -> np.ndarray:
    """Social-force velocity update for every agent at once, speed-capped."""
    n = pos.shape[0]
    desired = np.array([preferred_velocity(pos[i], goals[i], params.desired_speed, dt) for i in range(n)]).reshape(n, 2)
    force = (desired - vel) / params.relaxation_time
    if n > 1:
        offset = pos[:, None, :] - pos[None, :, :]
        d = np.hypot(offset[..., 0], offset[..., 1])
        np.fill_diagonal(d, np.inf)
        r_sum = radii[:, None] + radii[None, :]
        safe_d = np.where(d > 0.0, d, 1.0)
        mag = params.strength_A * np.exp((r_sum - d) / params.range_B)
        unit = offset / safe_d[..., None]
        # coincident agents: fixed +x push keeps the update finite
        unit[d == 0.0] = (1.0, 0.0)
        force = force + np.einsum("ij,ijk->ik", mag, unit)
    new_vel = vel + force * dt
    return cap_speed(new_vel, max_speed)


def sfm_velocity(agent_index: int, world: WorldState, params: SfmParams = SfmParams(), dt: float = 0.1, max_speed: float = 1.0) -> np.ndarray:
    out = sfm_all_velocities(
        world.all_positions(), world.all_velocities(), world.all_goals(), world.all_radii(), params, dt, max_speed
    )
    return out[agent_index]


def cap_speed(v: np.ndarray, max_speed: float) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    speed = np.hypot(v[..., 0], v[..., 1])
    scale = np.where(speed > max_speed, max_speed / np.where(speed > 0, speed, 1.0), 1.0)
    return v * scale[..., None] if v.ndim > 1 else v * float(scale)
