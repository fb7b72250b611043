//! Independent closed-form oracles shared by the integration tests. None of
//! these call into the library's physics.

#![allow(dead_code)]

/// Elastic collision in the centre-of-mass frame: each velocity is
/// reflected about the centre-of-mass velocity.
pub fn elastic_com(m1: f64, v1: f64, m2: f64, v2: f64) -> (f64, f64) {
    let vcm = (m1 * v1 + m2 * v2) / (m1 + m2);
    (2.0 * vcm - v1, 2.0 * vcm - v2)
}

#[derive(Debug, Clone, Copy)]
pub struct Ball {
    pub x: f64,
    pub v: f64,
    pub m: f64,
    pub r: f64,
}

pub fn default_balls() -> [Ball; 3] {
    [
        Ball { x: -5.0, v: 1.0, m: 1.0, r: 0.5 },
        Ball { x: 0.0, v: 0.0, m: 2.0, r: 1.0 },
        Ball { x: 5.0, v: -1.0, m: 1.0, r: 0.5 },
    ]
}

/// Exact event-driven simulation of balls on a line up to `t_end`. Only
/// pairwise collisions are supported; the function panics on an exactly
/// simultaneous triple. Returns the final balls and the collision times.
pub fn event_driven(mut balls: [Ball; 3], t_end: f64) -> ([Ball; 3], Vec<(f64, usize)>) {
    let mut t = 0.0;
    let mut hits = Vec::new();
    loop {
        let mut next: Option<(f64, usize)> = None;
        for k in 0..2 {
            let (l, r) = (balls[k], balls[k + 1]);
            let closing = l.v - r.v;
            if closing > 0.0 {
                let dt = ((r.x - l.x) - (l.r + r.r)) / closing;
                if next.is_none_or(|(best, _)| dt < best) {
                    next = Some((dt, k));
                }
            }
        }
        let Some((dt, k)) = next.filter(|(dt, _)| t + dt <= t_end) else {
            for b in &mut balls {
                b.x += b.v * (t_end - t);
            }
            return (balls, hits);
        };
        for b in &mut balls {
            b.x += b.v * dt;
        }
        t += dt;
        let (a, b) = elastic_com(balls[k].m, balls[k].v, balls[k + 1].m, balls[k + 1].v);
        balls[k].v = a;
        balls[k + 1].v = b;
        hits.push((t, k));
    }
}

/// Time for a body at height `h` with upward velocity `v` under gravity `g`
/// to reach `level` while falling.
pub fn fall_time(h: f64, v: f64, g: f64, level: f64) -> f64 {
    (v + (v * v + 2.0 * g * (h - level)).sqrt()) / g
}
