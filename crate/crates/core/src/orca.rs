//! Reciprocal collision avoidance. Each agent builds one half-plane
//! constraint per neighbor (both parties taking half the avoidance
//! responsibility) and picks the admissible velocity closest to its
//! preferred one by incremental 2-D linear programming, falling back to
//! a 3-D program that minimizes the worst constraint violation when the
//! crowd is so dense that no velocity satisfies everything.

use crate::geom::Vec2;

/// Body radius used for avoidance, matching the collision metric's
/// threshold of 0.2 m between centers (sum of two radii).
pub const ORCA_RADIUS_M: f64 = 0.2;
/// Default avoidance horizon in seconds.
pub const ORCA_TAU_S: f64 = 2.0;

const EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy)]
pub struct OrcaAgent {
    pub pos: Vec2,
    pub vel: Vec2,
    pub pref_vel: Vec2,
    pub radius: f64,
    pub max_speed: f64,
}

/// A permitted-velocity half-plane: points `p` with
/// det(direction, p - point) <= 0 are allowed.
#[derive(Debug, Clone, Copy)]
struct Line {
    point: Vec2,
    direction: Vec2,
}

fn det(a: Vec2, b: Vec2) -> f64 {
    a.cross(b)
}

/// Half-plane constraint of `agent` against one `other`, assuming the
/// other agent runs the same algorithm (responsibility is split evenly).
fn orca_line(agent: &OrcaAgent, other: &OrcaAgent, tau: f64, dt: f64) -> Line {
    let rel_pos = other.pos - agent.pos;
    let rel_vel = agent.vel - other.vel;
    let dist_sq = rel_pos.norm_sq();
    let r = agent.radius + other.radius;
    let r_sq = r * r;

    let (direction, u);
    if dist_sq > r_sq {
        // no current overlap: velocity obstacle is a truncated cone
        let inv_tau = 1.0 / tau;
        let w = rel_vel - rel_pos * inv_tau;
        let w_len_sq = w.norm_sq();
        let dot1 = w.dot(rel_pos);
        if dot1 < 0.0 && dot1 * dot1 > r_sq * w_len_sq {
            // closest point on the cutoff arc
            let w_len = w_len_sq.sqrt();
            let unit_w = w / w_len;
            direction = Vec2::new(unit_w.y, -unit_w.x);
            u = unit_w * (r * inv_tau - w_len);
        } else {
            // closest point on one of the legs
            let leg = (dist_sq - r_sq).sqrt();
            if det(rel_pos, w) > 0.0 {
                direction =
                    Vec2::new(rel_pos.x * leg - rel_pos.y * r, rel_pos.x * r + rel_pos.y * leg)
                        / dist_sq;
            } else {
                direction = Vec2::new(
                    rel_pos.x * leg + rel_pos.y * r,
                    -rel_pos.x * r + rel_pos.y * leg,
                ) * (-1.0 / dist_sq);
            }
            let dot2 = rel_vel.dot(direction);
            u = direction * dot2 - rel_vel;
        }
    } else {
        // already overlapping: push apart within one time step
        let inv_dt = 1.0 / dt;
        let w = rel_vel - rel_pos * inv_dt;
        let w_len = w.norm().max(EPS);
        let unit_w = w / w_len;
        direction = Vec2::new(unit_w.y, -unit_w.x);
        u = unit_w * (r * inv_dt - w_len);
    }
    Line {
        point: agent.vel + u * 0.5,
        direction,
    }
}

/// Optimize along `lines[index]` subject to lines[..index] and the speed
/// disc. Returns false when infeasible.
fn linear_program1(
    lines: &[Line],
    index: usize,
    radius: f64,
    opt_vel: Vec2,
    direction_opt: bool,
    result: &mut Vec2,
) -> bool {
    let line = lines[index];
    let dot = line.point.dot(line.direction);
    let discriminant = dot * dot + radius * radius - line.point.norm_sq();
    if discriminant < 0.0 {
        return false; // speed disc does not reach this line
    }
    let sqrt_d = discriminant.sqrt();
    let mut t_left = -dot - sqrt_d;
    let mut t_right = -dot + sqrt_d;

    for other in lines.iter().take(index) {
        let denominator = det(line.direction, other.direction);
        let numerator = det(other.direction, line.point - other.point);
        if denominator.abs() <= EPS {
            if numerator < 0.0 {
                return false; // parallel and fully excluded
            }
            continue;
        }
        let t = numerator / denominator;
        if denominator >= 0.0 {
            t_right = t_right.min(t);
        } else {
            t_left = t_left.max(t);
        }
        if t_left > t_right {
            return false;
        }
    }

    let t = if direction_opt {
        if opt_vel.dot(line.direction) > 0.0 {
            t_right
        } else {
            t_left
        }
    } else {
        (line.direction.dot(opt_vel - line.point)).clamp(t_left, t_right)
    };
    *result = line.point + line.direction * t;
    true
}

/// Incremental 2-D LP over all lines inside the speed disc. Returns the
/// index of the first infeasible line, or `lines.len()` on success.
fn linear_program2(
    lines: &[Line],
    radius: f64,
    opt_vel: Vec2,
    direction_opt: bool,
    result: &mut Vec2,
) -> usize {
    *result = if direction_opt {
        // opt_vel is a unit direction: start at the disc edge
        opt_vel * radius
    } else if opt_vel.norm_sq() > radius * radius {
        opt_vel.normalized() * radius
    } else {
        opt_vel
    };
    for (i, line) in lines.iter().enumerate() {
        if det(line.direction, line.point - *result) > 0.0 {
            let temp = *result;
            if !linear_program1(lines, i, radius, opt_vel, direction_opt, result) {
                *result = temp;
                return i;
            }
        }
    }
    lines.len()
}

/// Least-violation fallback: starting from the first infeasible line,
/// minimize the maximum signed distance to the violated constraints.
fn linear_program3(lines: &[Line], begin: usize, radius: f64, result: &mut Vec2) {
    let mut distance = 0.0;
    for i in begin..lines.len() {
        if det(lines[i].direction, lines[i].point - *result) > distance {
            let mut proj_lines: Vec<Line> = Vec::with_capacity(i);
            for j in 0..i {
                let denominator = det(lines[i].direction, lines[j].direction);
                let point = if denominator.abs() <= EPS {
                    if lines[i].direction.dot(lines[j].direction) > 0.0 {
                        continue; // same direction: j is redundant here
                    }
                    (lines[i].point + lines[j].point) * 0.5
                } else {
                    lines[i].point
                        + lines[i].direction
                            * (det(lines[j].direction, lines[i].point - lines[j].point)
                                / denominator)
                };
                proj_lines.push(Line {
                    point,
                    direction: (lines[j].direction - lines[i].direction).normalized(),
                });
            }
            let temp = *result;
            if linear_program2(
                &proj_lines,
                radius,
                Vec2::new(-lines[i].direction.y, lines[i].direction.x),
                true,
                result,
            ) < proj_lines.len()
            {
                // rounding artifacts only: keep the previous best
                *result = temp;
            }
            distance = det(lines[i].direction, lines[i].point - *result);
        }
    }
}

/// Velocity for `agent` this frame: the admissible velocity closest to
/// its preferred one under one reciprocal half-plane per neighbor and
/// the speed cap. Always returns something; in infeasible crowds it
/// returns the least-violating velocity.
pub fn orca_velocity(agent: &OrcaAgent, neighbors: &[OrcaAgent], tau: f64, dt: f64) -> Vec2 {
    let lines: Vec<Line> = neighbors
        .iter()
        .map(|other| orca_line(agent, other, tau, dt))
        .collect();
    let mut result = Vec2::ZERO;
    let fail = linear_program2(&lines, agent.max_speed, agent.pref_vel, false, &mut result);
    if fail < lines.len() {
        linear_program3(&lines, fail, agent.max_speed, &mut result);
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agent(pos: (f64, f64), vel: (f64, f64), pref: (f64, f64)) -> OrcaAgent {
        OrcaAgent {
            pos: Vec2::new(pos.0, pos.1),
            vel: Vec2::new(vel.0, vel.1),
            pref_vel: Vec2::new(pref.0, pref.1),
            radius: ORCA_RADIUS_M,
            max_speed: 1.5,
        }
    }

    #[test]
    fn no_neighbors_keeps_preferred_velocity() {
        let a = agent((0.0, 0.0), (1.0, 0.0), (1.2, 0.3));
        let v = orca_velocity(&a, &[], ORCA_TAU_S, 0.2);
        assert!((v - a.pref_vel).norm() < 1e-12);
    }

    #[test]
    fn speed_cap_clamps_preferred_velocity() {
        let a = agent((0.0, 0.0), (0.0, 0.0), (3.0, 0.0));
        let v = orca_velocity(&a, &[], ORCA_TAU_S, 0.2);
        assert!((v.norm() - 1.5).abs() < 1e-12);
        assert!(v.x > 0.0 && v.y.abs() < 1e-12);
    }

    #[test]
    fn head_on_pair_deflects_mirror_symmetrically() {
        let a = agent((0.0, 0.0), (1.0, 0.0), (1.0, 0.0));
        let b = agent((4.0, 0.0), (-1.0, 0.0), (-1.0, 0.0));
        let va = orca_velocity(&a, &[b], ORCA_TAU_S, 0.2);
        let vb = orca_velocity(&b, &[a], ORCA_TAU_S, 0.2);
        // the configuration is symmetric under point reflection through
        // the midpoint, so the solutions mirror: vb == -va, with equal
        // and opposite lateral deflections (each dodges to its own right)
        assert!((va.x + vb.x).abs() < 1e-9, "{va:?} {vb:?}");
        assert!((va.y + vb.y).abs() < 1e-9, "{va:?} {vb:?}");
        assert!(va.y.abs() > 1e-3, "no lateral deflection: {va:?}");
        assert!(va.norm() <= 1.5 + 1e-12);
    }

    #[test]
    fn overlapping_agents_push_apart() {
        let a = agent((0.0, 0.0), (0.0, 0.0), (0.0, 0.0));
        let b = agent((0.1, 0.0), (0.0, 0.0), (0.0, 0.0));
        let dt = 0.2;
        let va = orca_velocity(&a, &[b], ORCA_TAU_S, dt);
        let vb = orca_velocity(&b, &[a], ORCA_TAU_S, dt);
        // velocities separate the pair
        assert!(va.x < 0.0 && vb.x > 0.0, "{va:?} {vb:?}");
    }

    #[test]
    fn three_agent_crossing_never_gets_close() {
        // three agents crossing the same center from roughly 120-degree
        // spokes; slight angle and speed spread keeps the configuration
        // out of the perfectly symmetric deadlock fixed point
        let fps = 5.0;
        let dt = 1.0 / fps;
        let speeds = [1.0, 1.08, 0.93];
        let mut agents: Vec<OrcaAgent> = (0..3)
            .map(|k| {
                let ang = k as f64 * 2.0 * std::f64::consts::PI / 3.0 + 0.07 * k as f64;
                let pos = Vec2::new(ang.cos(), ang.sin()) * 6.0;
                OrcaAgent {
                    pos,
                    vel: Vec2::ZERO,
                    pref_vel: Vec2::ZERO,
                    radius: ORCA_RADIUS_M,
                    max_speed: 1.5,
                }
            })
            .collect();
        let goals: Vec<Vec2> = agents.iter().map(|a| a.pos * -1.0).collect();
        let mut min_dist = f64::INFINITY;
        for _ in 0..(30.0 * fps) as usize {
            for ((a, goal), speed) in agents.iter_mut().zip(&goals).zip(speeds) {
                let to = *goal - a.pos;
                a.pref_vel = if to.norm() > 1e-9 {
                    to.normalized() * speed
                } else {
                    Vec2::ZERO
                };
            }
            let frozen = agents.clone();
            for (i, a) in agents.iter_mut().enumerate() {
                let neighbors: Vec<OrcaAgent> = frozen
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, n)| *n)
                    .collect();
                a.vel = orca_velocity(&frozen[i], &neighbors, ORCA_TAU_S, dt);
            }
            for a in agents.iter_mut() {
                a.pos = a.pos + a.vel * dt;
            }
            for i in 0..3 {
                for j in i + 1..3 {
                    min_dist = min_dist.min((agents[i].pos - agents[j].pos).norm());
                }
            }
        }
        // everyone made it across
        for (a, goal) in agents.iter().zip(&goals) {
            assert!((a.pos - *goal).norm() < 1.0, "agent stuck at {:?}", a.pos);
        }
        assert!(
            min_dist >= 2.0 * ORCA_RADIUS_M,
            "closest approach {min_dist}"
        );
    }

    #[test]
    fn speed_cap_holds_in_dense_crowd() {
        let dt = 0.2;
        let center = agent((0.0, 0.0), (1.0, 0.0), (1.5, 0.0));
        let ring: Vec<OrcaAgent> = (0..8)
            .map(|k| {
                let ang = k as f64 * std::f64::consts::PI / 4.0;
                agent(
                    (0.5 * ang.cos(), 0.5 * ang.sin()),
                    (-ang.cos(), -ang.sin()),
                    (0.0, 0.0),
                )
            })
            .collect();
        let v = orca_velocity(&center, &ring, ORCA_TAU_S, dt);
        assert!(v.norm() <= 1.5 + 1e-9);
        assert!(v.is_finite());
    }
}
