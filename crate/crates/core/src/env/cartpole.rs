//! Cart-pole balancing with the classic constants (Barto, Sutton and
//! Anderson), explicit Euler at `TAU` = 0.02 s.

use rand::Rng;

const GRAVITY: f64 = 9.8;
const MASS_CART: f64 = 1.0;
const MASS_POLE: f64 = 0.1;
const TOTAL_MASS: f64 = MASS_CART + MASS_POLE;
const HALF_LENGTH: f64 = 0.5;
const POLE_MASS_LENGTH: f64 = MASS_POLE * HALF_LENGTH;
const FORCE_MAG: f64 = 10.0;
const TAU: f64 = 0.02;
pub(crate) const THETA_LIMIT: f64 = 12.0 * 2.0 * std::f64::consts::PI / 360.0;
pub(crate) const X_LIMIT: f64 = 2.4;

/// `[x, x_dot, theta, theta_dot]`; action 0 pushes left, 1 pushes right.
#[derive(Debug, Clone, PartialEq)]
pub struct CartPole {
    pub state: [f64; 4],
}

impl CartPole {
    pub(crate) fn reset<R: Rng>(rng: &mut R) -> Self {
        let mut state = [0.0; 4];
        for s in &mut state {
            *s = rng.random_range(-0.05..0.05);
        }
        Self { state }
    }

    pub(crate) fn observe(&self, out: &mut [f32]) {
        for (o, s) in out.iter_mut().zip(self.state) {
            *o = s as f32;
        }
    }

    pub(crate) fn step(&mut self, action: usize) -> (f64, bool) {
        let [x, x_dot, theta, theta_dot] = self.state;
        let force = if action == 1 { FORCE_MAG } else { -FORCE_MAG };
        let (sin, cos) = theta.sin_cos();
        let temp = (force + POLE_MASS_LENGTH * theta_dot * theta_dot * sin) / TOTAL_MASS;
        let theta_acc = (GRAVITY * sin - cos * temp) / (HALF_LENGTH * (4.0 / 3.0 - MASS_POLE * cos * cos / TOTAL_MASS));
        let x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos / TOTAL_MASS;
        self.state = [
            x + TAU * x_dot,
            x_dot + TAU * x_acc,
            theta + TAU * theta_dot,
            theta_dot + TAU * theta_acc,
        ];
        let [x, _, theta, _] = self.state;
        let terminal = x.abs() > X_LIMIT || theta.abs() > THETA_LIMIT;
        (1.0, terminal)
    }

    pub(crate) fn scripted_action(&self) -> usize {
        let [x, x_dot, theta, theta_dot] = self.state;
        let u = 10.0 * theta + 2.0 * theta_dot + 0.1 * x + 0.5 * x_dot;
        usize::from(u > 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Action, EnvId, EnvSpec};

    #[test]
    fn constant_push_topples_the_pole_quickly() {
        let spec = EnvSpec::new(EnvId::CartPole);
        let (mut env, mut obs) = spec.reset(0);
        let mut ret = 0.0;
        while !env.is_done() {
            ret += env.step(&Action::Discrete(0), &mut obs).unwrap().reward;
        }
        assert!(ret > 5.0 && ret < 30.0, "{ret}");
    }

    #[test]
    fn one_reward_per_step() {
        let spec = EnvSpec::new(EnvId::CartPole);
        let (mut env, mut obs) = spec.reset(5);
        let mut n = 0;
        let mut ret = 0.0;
        while !env.is_done() {
            let a = env.scripted_action();
            ret += env.step(&a, &mut obs).unwrap().reward;
            n += 1;
        }
        assert_eq!(ret, n as f64);
        assert_eq!(n, spec.horizon);
    }
}
