use std::f64::consts::PI;

use rand::Rng;

use super::reach::distance;
use super::{clamp_action, DT};

pub const POSITION_TOLERANCE: f64 = 0.1;
pub const ANGLE_TOLERANCE: f64 = 0.35;
pub const MAX_STEPS: usize = 150;
/// Block radius plus agent radius.
const CONTACT: f64 = 0.12;
/// Rotation per unit of tangential push.
const SPIN: f64 = 3.0;
const ARENA: f64 = 0.95;

/// Planar pushing of a disc-shaped block with an orientation marker.
#[derive(Debug, Clone, PartialEq)]
pub struct PushTLite {
    pub agent: [f64; 2],
    pub block: [f64; 2],
    pub angle: f64,
    pub goal: [f64; 2],
    pub goal_angle: f64,
}

fn unit(v: [f64; 2]) -> [f64; 2] {
    let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
    if n < 1e-12 {
        [1.0, 0.0]
    } else {
        [v[0] / n, v[1] / n]
    }
}

fn wrap(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

impl PushTLite {
    pub fn reset(rng: &mut impl Rng) -> Self {
        let block = [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)];
        let goal = loop {
            let g = [rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6)];
            let d = distance(g, block);
            if (0.3..0.8).contains(&d) {
                break g;
            }
        };
        let angle = rng.random_range(-PI..PI);
        let agent = loop {
            let a = [rng.random_range(-0.9..0.9), rng.random_range(-0.9..0.9)];
            if distance(a, block) >= CONTACT + 0.1 {
                break a;
            }
        };
        Self {
            agent,
            block,
            angle,
            goal,
            goal_angle: angle,
        }
    }

    pub fn observe(&self) -> Vec<f64> {
        vec![
            self.agent[0],
            self.agent[1],
            self.block[0],
            self.block[1],
            self.angle,
            self.goal[0],
            self.goal[1],
            self.goal_angle,
        ]
    }

    pub fn step(&mut self, action: &[f64]) {
        let a = clamp_action(action);
        let dp = [DT * a[0], DT * a[1]];
        for i in 0..2 {
            self.agent[i] = (self.agent[i] + dp[i]).clamp(-1.0, 1.0);
        }
        let gap = distance(self.agent, self.block);
        if gap < CONTACT {
            let n = unit([self.block[0] - self.agent[0], self.block[1] - self.agent[1]]);
            let depth = CONTACT - gap;
            for i in 0..2 {
                self.block[i] = (self.block[i] + n[i] * depth).clamp(-ARENA, ARENA);
            }
            self.angle += SPIN * (dp[0] * n[1] - dp[1] * n[0]);
        }
    }

    pub fn position_error(&self) -> f64 {
        distance(self.block, self.goal)
    }

    pub fn angle_error(&self) -> f64 {
        wrap(self.angle - self.goal_angle).abs()
    }

    pub fn success(&self) -> bool {
        self.position_error() < POSITION_TOLERANCE && self.angle_error() < ANGLE_TOLERANCE
    }

    /// Circles behind the block relative to the goal, then pushes through its center.
    pub fn expert(&self) -> Vec<f64> {
        let dir = unit([self.goal[0] - self.block[0], self.goal[1] - self.block[1]]);
        let dist = self.position_error();
        let rel = [self.agent[0] - self.block[0], self.agent[1] - self.block[1]];
        let along = rel[0] * dir[0] + rel[1] * dir[1];
        let lateral = [rel[0] - along * dir[0], rel[1] - along * dir[1]];
        let lat = (lateral[0] * lateral[0] + lateral[1] * lateral[1]).sqrt();
        let v = if along < -0.5 * CONTACT && lat < 0.03 {
            let speed = (3.0 * dist + 0.3).min(1.0);
            [dir[0] * speed - 5.0 * lateral[0], dir[1] * speed - 5.0 * lateral[1]]
        } else {
            let target = if along > -0.5 * CONTACT && distance(self.agent, self.block) < CONTACT + 0.08 {
                let side = if lat < 1e-9 { [-dir[1], dir[0]] } else { unit(lateral) };
                [
                    self.block[0] + side[0] * (CONTACT + 0.1) - dir[0] * 0.05,
                    self.block[1] + side[1] * (CONTACT + 0.1) - dir[1] * 0.05,
                ]
            } else if along > -0.5 * CONTACT {
                let side = if lat < 1e-9 { [-dir[1], dir[0]] } else { unit(lateral) };
                [
                    self.block[0] + side[0] * (CONTACT + 0.1) - dir[0] * (CONTACT + 0.1),
                    self.block[1] + side[1] * (CONTACT + 0.1) - dir[1] * (CONTACT + 0.1),
                ]
            } else {
                [
                    self.block[0] - dir[0] * (CONTACT + 0.05),
                    self.block[1] - dir[1] * (CONTACT + 0.05),
                ]
            };
            [4.0 * (target[0] - self.agent[0]), 4.0 * (target[1] - self.agent[1])]
        };
        vec![v[0].clamp(-1.0, 1.0), v[1].clamp(-1.0, 1.0)]
    }
}
