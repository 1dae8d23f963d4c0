//! Optimal reciprocal collision avoidance for the pedestrian crowd.
//!
//! Velocity obstacles are linearized into half-plane constraints and the
//! preferred velocity is projected onto the feasible region with the
//! classic two-stage linear program. When the constraints are infeasible
//! the solver falls back to the safest-velocity projection (the "3D" LP),
//! which minimizes the largest constraint violation.

use crate::vec2::Vec2;

const RVO_EPSILON: f64 = 1e-10;

/// One disc agent as seen by the ORCA solver.
#[derive(Debug, Clone, Copy)]
pub struct OrcaAgent {
    pub position: Vec2,
    pub velocity: Vec2,
    pub radius: f64,
}

/// Half-plane of permitted velocities: points `p` with
/// cross(direction, p - point) >= 0 (the region to the left of the line).
#[derive(Debug, Clone, Copy)]
pub struct OrcaLine {
    pub point: Vec2,
    pub direction: Vec2,
}

/// Constraint line induced on `me` by `other`.
///
/// `responsibility` is the fraction of the mutual correction `u` this agent
/// takes on: 0.5 for the reciprocal split among peers, 1.0 when the agent
/// must yield entirely (humans avoiding robots).
pub fn orca_line(me: &OrcaAgent, other: &OrcaAgent, responsibility: f64, tau: f64, dt: f64) -> OrcaLine {
    let relative_position = other.position - me.position;
    let relative_velocity = me.velocity - other.velocity;
    let dist_sq = relative_position.norm_sq();
    let combined_radius = me.radius + other.radius;
    let combined_radius_sq = combined_radius * combined_radius;

    let direction;
    let u;

    if dist_sq > combined_radius_sq {
        // No current overlap: truncated cone with horizon tau.
        let w = relative_velocity - relative_position / tau;
        let w_len_sq = w.norm_sq();
        let dot1 = w.dot(relative_position);

        if dot1 < 0.0 && dot1 * dot1 > combined_radius_sq * w_len_sq {
            // Project on the cut-off circle.
            let w_len = w_len_sq.sqrt();
            let unit_w = w / w_len;
            direction = Vec2::new(unit_w.y, -unit_w.x);
            u = unit_w * (combined_radius / tau - w_len);
        } else {
            // Project on the nearer leg of the cone.
            let leg = (dist_sq - combined_radius_sq).sqrt();
            if relative_position.cross(w) > 0.0 {
                direction = Vec2::new(
                    relative_position.x * leg - relative_position.y * combined_radius,
                    relative_position.x * combined_radius + relative_position.y * leg,
                ) / dist_sq;
            } else {
                direction = -Vec2::new(
                    relative_position.x * leg + relative_position.y * combined_radius,
                    -relative_position.x * combined_radius + relative_position.y * leg,
                ) / dist_sq;
            }
            let dot2 = relative_velocity.dot(direction);
            u = direction * dot2 - relative_velocity;
        }
    } else {
        // Already overlapping: resolve within one time step.
        let inv_dt = 1.0 / dt;
        let w = relative_velocity - relative_position * inv_dt;
        let w_len = w.norm();
        let unit_w = if w_len > RVO_EPSILON {
            w / w_len
        } else {
            // Coincident centers moving in lockstep: pick an arbitrary axis.
            Vec2::new(1.0, 0.0)
        };
        direction = Vec2::new(unit_w.y, -unit_w.x);
        u = unit_w * (combined_radius * inv_dt - w_len);
    }

    OrcaLine {
        point: me.velocity + u * responsibility,
        direction,
    }
}

/// Solve for a new velocity: closest to `pref_velocity` within all half
/// planes and the speed disc. Infeasible systems fall back to the
/// safest-velocity projection over the violated constraints.
pub fn solve(lines: &[OrcaLine], max_speed: f64, pref_velocity: Vec2) -> Vec2 {
    let mut result = Vec2::ZERO;
    let fail = linear_program2(lines, max_speed, pref_velocity, false, &mut result);
    if fail < lines.len() {
        linear_program3(lines, fail, max_speed, &mut result);
    }
    result
}

/// Optimize along `lines[index]` subject to lines `0..index` and the speed
/// disc. Returns false when infeasible.
fn linear_program1(
    lines: &[OrcaLine],
    index: usize,
    radius: f64,
    opt_velocity: Vec2,
    direction_opt: bool,
    result: &mut Vec2,
) -> bool {
    let line = lines[index];
    let dot = line.point.dot(line.direction);
    let discriminant = dot * dot + radius * radius - line.point.norm_sq();
    if discriminant < 0.0 {
        // Max speed disc fully invalidates this line.
        return false;
    }
    let sqrt_disc = discriminant.sqrt();
    let mut t_left = -dot - sqrt_disc;
    let mut t_right = -dot + sqrt_disc;

    for prev in lines.iter().take(index) {
        let denominator = line.direction.cross(prev.direction);
        let numerator = prev.direction.cross(line.point - prev.point);
        if denominator.abs() <= RVO_EPSILON {
            // Parallel lines.
            if numerator < 0.0 {
                return false;
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

    if direction_opt {
        if opt_velocity.dot(line.direction) > 0.0 {
            *result = line.point + line.direction * t_right;
        } else {
            *result = line.point + line.direction * t_left;
        }
    } else {
        let t = line.direction.dot(opt_velocity - line.point);
        *result = line.point + line.direction * t.clamp(t_left, t_right);
    }
    true
}

/// Returns the number of lines satisfied; on failure the index of the first
/// unsatisfiable line.
fn linear_program2(
    lines: &[OrcaLine],
    radius: f64,
    opt_velocity: Vec2,
    direction_opt: bool,
    result: &mut Vec2,
) -> usize {
    if direction_opt {
        // opt_velocity is a unit direction in this mode.
        *result = opt_velocity * radius;
    } else if opt_velocity.norm_sq() > radius * radius {
        *result = opt_velocity.normalized_or_zero() * radius;
    } else {
        *result = opt_velocity;
    }

    for (i, line) in lines.iter().enumerate() {
        if line.direction.cross(line.point - *result) > 0.0 {
            let temp = *result;
            if !linear_program1(lines, i, radius, opt_velocity, direction_opt, result) {
                *result = temp;
                return i;
            }
        }
    }
    lines.len()
}

/// Safest-velocity projection when the system is infeasible: sweep the
/// violated lines and minimize the maximum violation distance.
fn linear_program3(lines: &[OrcaLine], begin_line: usize, radius: f64, result: &mut Vec2) {
    let mut distance = 0.0;
    for i in begin_line..lines.len() {
        let line = lines[i];
        if line.direction.cross(line.point - *result) > distance {
            let mut proj_lines: Vec<OrcaLine> = Vec::with_capacity(i);
            for prev in lines.iter().take(i) {
                let denominator = line.direction.cross(prev.direction);
                let point = if denominator.abs() <= RVO_EPSILON {
                    if line.direction.dot(prev.direction) > 0.0 {
                        // Same direction: prev is redundant here.
                        continue;
                    }
                    (line.point + prev.point) * 0.5
                } else {
                    line.point
                        + line.direction * (prev.direction.cross(line.point - prev.point) / denominator)
                };
                let direction = (prev.direction - line.direction).normalized_or_zero();
                proj_lines.push(OrcaLine { point, direction });
            }

            let temp = *result;
            if linear_program2(
                &proj_lines,
                radius,
                Vec2::new(-line.direction.y, line.direction.x),
                true,
                result,
            ) < proj_lines.len()
            {
                // Should not happen except for numerical reasons.
                *result = temp;
            }
            distance = line.direction.cross(line.point - *result);
        }
    }
}

/// New velocity for `me` avoiding every `(neighbor, responsibility)` pair.
pub fn orca_velocity(
    me: &OrcaAgent,
    neighbors: &[(OrcaAgent, f64)],
    pref_velocity: Vec2,
    max_speed: f64,
    tau: f64,
    dt: f64,
) -> Vec2 {
    let lines: Vec<OrcaLine> = neighbors
        .iter()
        .map(|(other, responsibility)| orca_line(me, other, *responsibility, tau, dt))
        .collect();
    solve(&lines, max_speed, pref_velocity)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Independent check: does relative velocity `rel_v` (me minus other) bring
    // the pair within `r` before `tau`, starting from separation `rel_p`
    // (other minus me)? Solved from the quadratic in closing time.
    fn collides_within(rel_p: Vec2, rel_v: Vec2, r: f64, tau: f64) -> bool {
        // separation(t) = rel_p - rel_v * t
        let a = rel_v.norm_sq();
        let b = -2.0 * rel_p.dot(rel_v);
        let c = rel_p.norm_sq() - r * r;
        if c < 0.0 {
            return true;
        }
        if a <= 0.0 {
            return false;
        }
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            return false;
        }
        let sqrt_disc = disc.sqrt();
        let t0 = (-b - sqrt_disc) / (2.0 * a);
        t0 > 0.0 && t0 <= tau
    }

    #[test]
    fn unconstrained_returns_preferred_velocity() {
        let me = OrcaAgent { position: Vec2::ZERO, velocity: Vec2::ZERO, radius: 0.3 };
        let pref = Vec2::new(0.7, -0.2);
        let v = orca_velocity(&me, &[], pref, 1.0, 2.0, 0.25);
        assert!((v - pref).norm() < 1e-12);
    }

    #[test]
    fn preferred_velocity_clamped_to_max_speed() {
        let me = OrcaAgent { position: Vec2::ZERO, velocity: Vec2::ZERO, radius: 0.3 };
        let v = orca_velocity(&me, &[], Vec2::new(5.0, 0.0), 1.0, 2.0, 0.25);
        assert!((v.norm() - 1.0).abs() < 1e-12);
        assert!(v.x > 0.0 && v.y.abs() < 1e-12);
    }

    #[test]
    fn reciprocal_pair_escapes_velocity_obstacle() {
        // Randomized pairs: after both agents apply ORCA with the 0.5 split,
        // the resulting relative velocity must be outside the velocity
        // obstacle for the horizon (checked with the quadratic oracle above).
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let tau = 2.0;
        let dt = 0.25;
        for _ in 0..2000 {
            let r = 0.3;
            let sep = rng.gen_range(2.0 * r + 0.05..4.0);
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let a = OrcaAgent {
                position: Vec2::ZERO,
                velocity: Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                radius: r,
            };
            let b = OrcaAgent {
                position: Vec2::from_angle(angle) * sep,
                velocity: Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                radius: r,
            };
            let pref_a = Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let pref_b = Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let va = orca_velocity(&a, &[(b, 0.5)], pref_a, 1.5, tau, dt);
            let vb = orca_velocity(&b, &[(a, 0.5)], pref_b, 1.5, tau, dt);
            let rel_p = b.position - a.position;
            let rel_v = va - vb;
            // Tiny slack for projections landing exactly on the boundary.
            assert!(
                !collides_within(rel_p, rel_v, 2.0 * r - 1e-9, tau),
                "pair collides: sep={sep} rel_p={rel_p:?} rel_v={rel_v:?} va={va:?} vb={vb:?}"
            );
        }
    }

    #[test]
    fn overlapping_agents_separate() {
        // Infeasible-ish start: agents already interpenetrating must pick
        // velocities that increase separation.
        let a = OrcaAgent { position: Vec2::ZERO, velocity: Vec2::ZERO, radius: 0.3 };
        let b = OrcaAgent { position: Vec2::new(0.2, 0.0), velocity: Vec2::ZERO, radius: 0.3 };
        let va = orca_velocity(&a, &[(b, 0.5)], Vec2::new(1.0, 0.0), 1.0, 2.0, 0.25);
        let vb = orca_velocity(&b, &[(a, 0.5)], Vec2::new(-1.0, 0.0), 1.0, 2.0, 0.25);
        let sep_now = (b.position - a.position).norm();
        let sep_next = ((b.position + vb * 0.25) - (a.position + va * 0.25)).norm();
        assert!(sep_next > sep_now, "agents failed to separate: {sep_now} -> {sep_next}");
    }
}
