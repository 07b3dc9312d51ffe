//! Damped inverted-pendulum swing-up with a torque-limited motor.
//!
//! `theta = 0` is upright. Dynamics
//! `theta'' = 3g/(2l) sin(theta) + 3/(m l^2) u - DAMPING theta'`, integrated
//! with five classic Runge-Kutta substeps per 0.05 s control step (the
//! speed limit is applied after each substep). Per-step reward is `1 - cost / MAX_COST` with
//! `cost = theta^2 + 0.1 theta'^2 + 0.001 u^2`, so it lies in `[0, 1]`.

use std::f64::consts::PI;

use rand::Rng;

const GRAVITY: f64 = 10.0;
const MASS: f64 = 1.0;
const LENGTH: f64 = 1.0;
const DAMPING: f64 = 0.05;
const DT: f64 = 0.05;
const SUBSTEPS: usize = 5;
pub(crate) const MAX_SPEED: f64 = 8.0;
pub(crate) const MAX_TORQUE: f64 = 2.0;
const MAX_COST: f64 = PI * PI + 0.1 * MAX_SPEED * MAX_SPEED + 0.001 * MAX_TORQUE * MAX_TORQUE;
const GRAV_COEF: f64 = 3.0 * GRAVITY / (2.0 * LENGTH);
const TORQUE_COEF: f64 = 3.0 / (MASS * LENGTH * LENGTH);

#[derive(Debug, Clone, PartialEq)]
pub struct Pendulum {
    pub theta: f64,
    pub theta_dot: f64,
}

impl Pendulum {
    pub(crate) fn reset<R: Rng>(rng: &mut R) -> Self {
        Self {
            theta: rng.random_range(-PI..PI),
            theta_dot: rng.random_range(-1.0..1.0),
        }
    }

    pub(crate) fn observe(&self, out: &mut [f32]) {
        out[0] = self.theta.cos() as f32;
        out[1] = self.theta.sin() as f32;
        out[2] = self.theta_dot as f32;
    }

    pub(crate) fn step(&mut self, torque: f64) -> (f64, bool) {
        let u = torque.clamp(-MAX_TORQUE, MAX_TORQUE);
        let th = angle_normalize(self.theta);
        let cost = th * th + 0.1 * self.theta_dot * self.theta_dot + 0.001 * u * u;

        let h = DT / SUBSTEPS as f64;
        let f = |th: f64, om: f64| (om, GRAV_COEF * th.sin() + TORQUE_COEF * u - DAMPING * om);
        for _ in 0..SUBSTEPS {
            let (th, om) = (self.theta, self.theta_dot);
            let k1 = f(th, om);
            let k2 = f(th + 0.5 * h * k1.0, om + 0.5 * h * k1.1);
            let k3 = f(th + 0.5 * h * k2.0, om + 0.5 * h * k2.1);
            let k4 = f(th + h * k3.0, om + h * k3.1);
            self.theta = th + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
            self.theta_dot = (om + h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1)).clamp(-MAX_SPEED, MAX_SPEED);
        }
        (1.0 - cost / MAX_COST, false)
    }

    /// Kinetic plus potential energy per unit inertia; constant without
    /// damping, torque and speed clipping.
    pub fn energy(&self) -> f64 {
        0.5 * self.theta_dot * self.theta_dot + GRAV_COEF * self.theta.cos()
    }

    /// Energy-shaping swing-up far from the top, linear stabilization near
    /// it.
    pub(crate) fn scripted_action(&self) -> f64 {
        let th = angle_normalize(self.theta);
        let u = if th.abs() < 0.5 {
            -(12.0 * th + 2.5 * self.theta_dot)
        } else if self.theta_dot == 0.0 {
            MAX_TORQUE
        } else {
            // upright rest has energy GRAV_COEF
            4.0 * (GRAV_COEF - self.energy()) * self.theta_dot.signum()
        };
        u.clamp(-MAX_TORQUE, MAX_TORQUE)
    }
}

pub(crate) fn angle_normalize(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}
