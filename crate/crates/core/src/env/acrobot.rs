//! Two-link underactuated swing-up with the Sutton and Barto ("book")
//! dynamics. One control step is 0.2 s, integrated with a single classic
//! Runge-Kutta step (explicit Euler gains energy and swings the arm up with
//! zero torque).
//!
//! Reward: 0 per step, and `horizon - t + 1` on the step `t` that lifts the
//! tip above the bar. The episode return is therefore the classic
//! "-1 per step" return shifted by the horizon, and 0 when the goal is
//! never reached.

use std::f64::consts::PI;

use rand::Rng;

const LINK_LENGTH_1: f64 = 1.0;
const LINK_MASS_1: f64 = 1.0;
const LINK_MASS_2: f64 = 1.0;
const LINK_COM_1: f64 = 0.5;
const LINK_COM_2: f64 = 0.5;
const LINK_MOI: f64 = 1.0;
const GRAVITY: f64 = 9.8;
const MAX_VEL_1: f64 = 4.0 * PI;
const MAX_VEL_2: f64 = 9.0 * PI;
const DT: f64 = 0.2;
const TORQUES: [f64; 3] = [-1.0, 0.0, 1.0];

/// `[theta1, theta2, dtheta1, dtheta2]`; actions map to torques -1, 0, +1.
#[derive(Debug, Clone, PartialEq)]
pub struct Acrobot {
    pub state: [f64; 4],
}

impl Acrobot {
    pub(crate) fn reset<R: Rng>(rng: &mut R) -> Self {
        let mut state = [0.0; 4];
        for s in &mut state {
            *s = rng.random_range(-0.1..0.1);
        }
        Self { state }
    }

    pub(crate) fn observe(&self, out: &mut [f32]) {
        let [t1, t2, d1, d2] = self.state;
        out[0] = t1.cos() as f32;
        out[1] = t1.sin() as f32;
        out[2] = t2.cos() as f32;
        out[3] = t2.sin() as f32;
        out[4] = d1 as f32;
        out[5] = d2 as f32;
    }

    pub(crate) fn step(&mut self, action: usize, t: usize, horizon: usize) -> (f64, bool) {
        let torque = TORQUES[action];
        let mut s = rk4(&self.state, torque, DT);
        s[0] = wrap(s[0]);
        s[1] = wrap(s[1]);
        s[2] = s[2].clamp(-MAX_VEL_1, MAX_VEL_1);
        s[3] = s[3].clamp(-MAX_VEL_2, MAX_VEL_2);
        self.state = s;
        if self.tip_height() > 1.0 {
            ((horizon + 1).saturating_sub(t) as f64, true)
        } else {
            (0.0, false)
        }
    }

    pub fn tip_height(&self) -> f64 {
        let [t1, t2, ..] = self.state;
        -t1.cos() - (t1 + t2).cos()
    }

    /// Energy pumping: elbow torque against the shoulder's velocity.
    pub(crate) fn scripted_action(&self) -> usize {
        if self.state[2] < 0.0 {
            2
        } else {
            0
        }
    }
}

fn wrap(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

fn rk4(s: &[f64; 4], torque: f64, dt: f64) -> [f64; 4] {
    let shift = |base: &[f64; 4], k: &[f64; 4], h: f64| {
        let mut out = *base;
        for (o, ki) in out.iter_mut().zip(k) {
            *o += h * ki;
        }
        out
    };
    let k1 = derivatives(s, torque);
    let k2 = derivatives(&shift(s, &k1, dt / 2.0), torque);
    let k3 = derivatives(&shift(s, &k2, dt / 2.0), torque);
    let k4 = derivatives(&shift(s, &k3, dt), torque);
    let mut out = *s;
    for i in 0..4 {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

fn derivatives(s: &[f64; 4], torque: f64) -> [f64; 4] {
    let (m1, m2, l1, lc1, lc2) = (LINK_MASS_1, LINK_MASS_2, LINK_LENGTH_1, LINK_COM_1, LINK_COM_2);
    let (i1, i2) = (LINK_MOI, LINK_MOI);
    let [theta1, theta2, dtheta1, dtheta2] = *s;
    let d1 = m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * theta2.cos()) + i1 + i2;
    let d2 = m2 * (lc2 * lc2 + l1 * lc2 * theta2.cos()) + i2;
    let phi2 = m2 * lc2 * GRAVITY * (theta1 + theta2 - PI / 2.0).cos();
    let phi1 = -m2 * l1 * lc2 * dtheta2 * dtheta2 * theta2.sin()
        - 2.0 * m2 * l1 * lc2 * dtheta2 * dtheta1 * theta2.sin()
        + (m1 * lc1 + m2 * l1) * GRAVITY * (theta1 - PI / 2.0).cos()
        + phi2;
    let ddtheta2 = (torque + d2 / d1 * phi1 - m2 * l1 * lc2 * dtheta1 * dtheta1 * theta2.sin() - phi2)
        / (m2 * lc2 * lc2 + i2 - d2 * d2 / d1);
    let ddtheta1 = -(d2 * ddtheta2 + phi1) / d1;
    [dtheta1, dtheta2, ddtheta1, ddtheta2]
}

#[cfg(test)]
mod tests {
    use super::super::{Action, EnvId, EnvSpec};
    use super::*;

    #[test]
    fn hanging_rest_is_an_equilibrium() {
        let mut a = Acrobot { state: [0.0; 4] };
        for t in 1..=50 {
            let (r, done) = a.step(1, t, 500);
            assert_eq!((r, done), (0.0, false));
        }
        assert!(a.state.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn doing_nothing_never_reaches_goal() {
        let spec = EnvSpec::new(EnvId::Acrobot);
        let (mut env, mut obs) = spec.reset(2);
        let mut ret = 0.0;
        while !env.is_done() {
            ret += env.step(&Action::Discrete(1), &mut obs).unwrap().reward;
        }
        assert_eq!(ret, 0.0);
        assert_eq!(env.steps(), 500);
    }

    #[test]
    fn goal_reward_is_shifted_step_count() {
        let spec = EnvSpec::new(EnvId::Acrobot);
        let (mut env, mut obs) = spec.reset(4);
        let mut ret = 0.0;
        while !env.is_done() {
            let a = env.scripted_action();
            ret += env.step(&a, &mut obs).unwrap().reward;
        }
        assert!(env.steps() < 500);
        assert_eq!(ret, (500 - env.steps() + 1) as f64);
    }

    #[test]
    fn observation_is_on_unit_circles() {
        let spec = EnvSpec::new(EnvId::Acrobot);
        let (_, obs) = spec.reset(9);
        assert!((obs[0] * obs[0] + obs[1] * obs[1] - 1.0).abs() < 1e-6);
        assert!((obs[2] * obs[2] + obs[3] * obs[3] - 1.0).abs() < 1e-6);
    }
}
