use rand::Rng;

use super::{clamp_action, DT};

pub const TOLERANCE: f64 = 0.05;
pub const MAX_STEPS: usize = 80;
const GAIN: f64 = 2.5;
const START_RANGE: f64 = 0.8;
const MIN_START_DISTANCE: f64 = 0.3;

/// Point mass commanded by velocity toward a goal in `[-1, 1]^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Reach2d {
    pub agent: [f64; 2],
    pub velocity: [f64; 2],
    pub goal: [f64; 2],
}

impl Reach2d {
    pub fn reset(rng: &mut impl Rng) -> Self {
        fn draw(rng: &mut impl Rng) -> [f64; 2] {
            [rng.random_range(-START_RANGE..START_RANGE), rng.random_range(-START_RANGE..START_RANGE)]
        }
        let goal = draw(rng);
        loop {
            let agent = draw(rng);
            if distance(agent, goal) >= MIN_START_DISTANCE {
                return Self {
                    agent,
                    velocity: [0.0; 2],
                    goal,
                };
            }
        }
    }

    pub fn observe(&self) -> Vec<f64> {
        vec![
            self.agent[0],
            self.agent[1],
            self.velocity[0],
            self.velocity[1],
            self.goal[0],
            self.goal[1],
        ]
    }

    pub fn step(&mut self, action: &[f64]) {
        let a = clamp_action(action);
        self.velocity = a;
        for i in 0..2 {
            self.agent[i] = (self.agent[i] + DT * a[i]).clamp(-1.0, 1.0);
        }
    }

    pub fn success(&self) -> bool {
        distance(self.agent, self.goal) < TOLERANCE
    }

    /// Proportional controller on the goal offset, saturated at the action bound.
    pub fn expert(&self) -> Vec<f64> {
        (0..2)
            .map(|i| (GAIN * (self.goal[i] - self.agent[i])).clamp(-1.0, 1.0))
            .collect()
    }
}

pub(crate) fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}
