//! Deterministic control environments.
//!
//! Every environment is a pure function of `(spec, seed, actions)`: the seed
//! fixes the initial state and nothing else draws randomness afterwards.
//! Returns are non-negative for all four tasks so that return ratios
//! (normalized fitness, retraining ratios) are meaningful.

mod acrobot;
mod breakout;
mod cartpole;
mod pendulum;
mod rollout;

pub use acrobot::Acrobot;
pub use breakout::{Breakout, GRID};
pub use cartpole::CartPole;
pub use pendulum::Pendulum;
pub use rollout::{rollout, rollout_batch, Embedding, Episode, RolloutOptions};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EnvId {
    CartPole,
    Acrobot,
    Pendulum,
    GridBreakout,
}

impl EnvId {
    pub const ALL: [EnvId; 4] = [EnvId::CartPole, EnvId::Acrobot, EnvId::Pendulum, EnvId::GridBreakout];

    pub fn as_str(&self) -> &'static str {
        match self {
            EnvId::CartPole => "cartpole",
            EnvId::Acrobot => "acrobot",
            EnvId::Pendulum => "pendulum",
            EnvId::GridBreakout => "gridbreakout",
        }
    }
}

impl std::str::FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EnvId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::UnknownEnv(s.to_string()))
    }
}

impl std::fmt::Display for EnvId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ActionSpace {
    Discrete {
        n: usize,
    },
    /// Box of `low.len()` dimensions.
    Continuous {
        low: Vec<f32>,
        high: Vec<f32>,
    },
}

impl ActionSpace {
    /// Number of classes (discrete) or action dimensions (continuous).
    pub fn dim(&self) -> usize {
        match self {
            ActionSpace::Discrete { n } => *n,
            ActionSpace::Continuous { low, .. } => low.len(),
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, ActionSpace::Discrete { .. })
    }
}

/// Static description of an environment.
///
/// | env            | obs | actions        | horizon | reference return |
/// |----------------|-----|----------------|---------|------------------|
/// | `cartpole`     | 4   | 2              | 500     | 500              |
/// | `acrobot`      | 6   | 3              | 500     | 420              |
/// | `pendulum`     | 3   | torque in ±2   | 200     | 190              |
/// | `gridbreakout` | 400 | 3              | 1000    | 30               |
///
/// Reference returns are those of the scripted controllers in
/// [`scripted_action`], rounded; breakout's is the brick count, which caps
/// its return.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub id: EnvId,
    pub obs_dim: usize,
    pub action_space: ActionSpace,
    pub horizon: usize,
    pub reference_return: f64,
    /// Kept for completeness; fitness is the undiscounted return.
    pub gamma: f64,
}

impl EnvSpec {
    pub fn new(id: EnvId) -> Self {
        match id {
            EnvId::CartPole => Self {
                id,
                obs_dim: 4,
                action_space: ActionSpace::Discrete { n: 2 },
                horizon: 500,
                reference_return: 500.0,
                gamma: 0.99,
            },
            EnvId::Acrobot => Self {
                id,
                obs_dim: 6,
                action_space: ActionSpace::Discrete { n: 3 },
                horizon: 500,
                reference_return: 420.0,
                gamma: 0.99,
            },
            EnvId::Pendulum => Self {
                id,
                obs_dim: 3,
                action_space: ActionSpace::Continuous {
                    low: vec![-pendulum::MAX_TORQUE as f32],
                    high: vec![pendulum::MAX_TORQUE as f32],
                },
                horizon: 200,
                reference_return: 190.0,
                gamma: 0.99,
            },
            EnvId::GridBreakout => Self {
                id,
                obs_dim: 4 * GRID * GRID,
                action_space: ActionSpace::Discrete { n: 3 },
                horizon: 1000,
                reference_return: breakout::N_BRICKS as f64,
                gamma: 0.99,
            },
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Ok(Self::new(name.parse()?))
    }

    /// Fresh episode for `seed`; also returns the first observation.
    pub fn reset(&self, seed: u64) -> (Env, Vec<f32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dynamics = match self.id {
            EnvId::CartPole => Dynamics::CartPole(CartPole::reset(&mut rng)),
            EnvId::Acrobot => Dynamics::Acrobot(Acrobot::reset(&mut rng)),
            EnvId::Pendulum => Dynamics::Pendulum(Pendulum::reset(&mut rng)),
            EnvId::GridBreakout => Dynamics::Breakout(Breakout::reset(&mut rng)),
        };
        let env = Env {
            spec: self.clone(),
            dynamics,
            steps: 0,
            done: false,
        };
        let mut obs = vec![0.0; self.obs_dim];
        env.observe(&mut obs);
        (env, obs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f32>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
enum Dynamics {
    CartPole(CartPole),
    Acrobot(Acrobot),
    Pendulum(Pendulum),
    Breakout(Breakout),
}

/// Per-episode state.
#[derive(Debug, Clone, PartialEq)]
pub struct Env {
    spec: EnvSpec,
    dynamics: Dynamics,
    steps: usize,
    done: bool,
}

impl Env {
    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn observe(&self, out: &mut [f32]) {
        match &self.dynamics {
            Dynamics::CartPole(s) => s.observe(out),
            Dynamics::Acrobot(s) => s.observe(out),
            Dynamics::Pendulum(s) => s.observe(out),
            Dynamics::Breakout(s) => s.observe(out),
        }
    }

    /// One transition. `done` is set on termination or when the horizon is
    /// reached; stepping a finished episode is an error.
    pub fn step(&mut self, action: &Action, obs: &mut [f32]) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::Env("step called on a finished episode".into()));
        }
        let (reward, terminal) = match (&mut self.dynamics, action) {
            (Dynamics::CartPole(s), Action::Discrete(a)) => s.step(check_discrete(*a, 2)?),
            (Dynamics::Acrobot(s), Action::Discrete(a)) => {
                s.step(check_discrete(*a, 3)?, self.steps + 1, self.spec.horizon)
            }
            (Dynamics::Breakout(s), Action::Discrete(a)) => s.step(check_discrete(*a, 3)?),
            (Dynamics::Pendulum(s), Action::Continuous(u)) => {
                if u.len() != 1 || !u[0].is_finite() {
                    return Err(Error::Env(format!("pendulum expects one finite torque, got {u:?}")));
                }
                s.step(f64::from(u[0]))
            }
            (_, a) => {
                return Err(Error::Env(format!(
                    "action {a:?} does not match the {} action space",
                    self.spec.id
                )))
            }
        };
        self.steps += 1;
        self.done = terminal || self.steps >= self.spec.horizon;
        self.observe(obs);
        Ok(StepOutcome {
            reward,
            done: self.done,
        })
    }

    /// Closed-form controller used for reference returns.
    pub fn scripted_action(&self) -> Action {
        match &self.dynamics {
            Dynamics::CartPole(s) => Action::Discrete(s.scripted_action()),
            Dynamics::Acrobot(s) => Action::Discrete(s.scripted_action()),
            Dynamics::Pendulum(s) => Action::Continuous(vec![s.scripted_action() as f32]),
            Dynamics::Breakout(s) => Action::Discrete(s.scripted_action()),
        }
    }

    #[cfg(test)]
    pub(crate) fn breakout(&self) -> Option<&Breakout> {
        match &self.dynamics {
            Dynamics::Breakout(b) => Some(b),
            _ => None,
        }
    }
}

fn check_discrete(a: usize, n: usize) -> Result<usize> {
    if a < n {
        Ok(a)
    } else {
        Err(Error::Env(format!("action {a} out of range for {n} actions")))
    }
}

/// Runs the scripted controller for one episode and returns its return.
pub fn scripted_return(spec: &EnvSpec, seed: u64) -> f64 {
    let (mut env, mut obs) = spec.reset(seed);
    let mut ret = 0.0;
    while !env.is_done() {
        let a = env.scripted_action();
        ret += env.step(&a, &mut obs).expect("scripted actions are valid").reward;
    }
    ret
}
