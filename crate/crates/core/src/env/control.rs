use std::f64::consts::PI;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{OpsError, Result};
use crate::mdp::McEstimate;
use crate::rng::{derive_seed, rng_from_seed, Rng};

/// Outcome of one simulator step.
#[derive(Debug, Clone, PartialEq)]
pub struct SimStep {
    pub reward: f64,
    pub obs: Vec<f64>,
    pub done: bool,
}

/// Environment available only through simulation. Episodes end after at most
/// `horizon` steps and every reward lies in `[0, r_max]`.
pub trait SimOnlyEnv {
    fn reset(&mut self) -> Vec<f64>;
    fn step(&mut self, action: usize) -> SimStep;
    fn horizon(&self) -> usize;
    fn num_actions(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn r_max(&self) -> f64 {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlKind {
    CartpoleLike,
    AcrobotLike,
}

pub fn make_continuous_control(kind: ControlKind, horizon: usize, seed: u64) -> Result<Box<dyn SimOnlyEnv>> {
    if horizon == 0 || horizon > 500 {
        return Err(OpsError::invalid(format!("horizon {horizon} outside [1, 500]")));
    }
    Ok(match kind {
        ControlKind::CartpoleLike => Box::new(CartPole::new(horizon, seed)),
        ControlKind::AcrobotLike => Box::new(Acrobot::new(horizon, seed)),
    })
}

/// Cart-pole balancing: reward 1 for every step the pole stays up.
#[derive(Debug, Clone)]
pub struct CartPole {
    horizon: usize,
    rng: Rng,
    state: [f64; 4],
    t: usize,
    fallen: bool,
}

impl CartPole {
    const GRAVITY: f64 = 9.8;
    const CART_MASS: f64 = 1.0;
    const POLE_MASS: f64 = 0.1;
    const HALF_LEN: f64 = 0.5;
    const FORCE: f64 = 10.0;
    const DT: f64 = 0.02;
    const ANGLE_LIMIT: f64 = 12.0 * 2.0 * PI / 360.0;
    const X_LIMIT: f64 = 2.4;

    pub fn new(horizon: usize, seed: u64) -> Self {
        Self {
            horizon,
            rng: rng_from_seed(seed),
            state: [0.0; 4],
            t: 0,
            fallen: false,
        }
    }
}

impl SimOnlyEnv for CartPole {
    fn reset(&mut self) -> Vec<f64> {
        for v in &mut self.state {
            *v = self.rng.random_range(-0.05..0.05);
        }
        self.t = 0;
        self.fallen = false;
        self.state.to_vec()
    }

    fn step(&mut self, action: usize) -> SimStep {
        let [x, xd, th, thd] = self.state;
        let force = if action == 1 { Self::FORCE } else { -Self::FORCE };
        let total = Self::CART_MASS + Self::POLE_MASS;
        let pml = Self::POLE_MASS * Self::HALF_LEN;
        let (s, c) = th.sin_cos();
        let temp = (force + pml * thd * thd * s) / total;
        let thacc = (Self::GRAVITY * s - c * temp) / (Self::HALF_LEN * (4.0 / 3.0 - Self::POLE_MASS * c * c / total));
        let xacc = temp - pml * thacc * c / total;
        self.state = [
            x + Self::DT * xd,
            xd + Self::DT * xacc,
            th + Self::DT * thd,
            thd + Self::DT * thacc,
        ];
        self.t += 1;
        let up = self.state[0].abs() <= Self::X_LIMIT && self.state[2].abs() <= Self::ANGLE_LIMIT;
        let reward = if !self.fallen && up { 1.0 } else { 0.0 };
        self.fallen |= !up;
        SimStep {
            reward,
            obs: self.state.to_vec(),
            done: self.fallen || self.t >= self.horizon,
        }
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn num_actions(&self) -> usize {
        2
    }

    fn obs_dim(&self) -> usize {
        4
    }
}

/// Two-link swing-up: reward 1 for every step the tip is above the bar.
#[derive(Debug, Clone)]
pub struct Acrobot {
    horizon: usize,
    rng: Rng,
    state: [f64; 4],
    t: usize,
}

impl Acrobot {
    const DT: f64 = 0.2;
    const L1: f64 = 1.0;
    const M1: f64 = 1.0;
    const M2: f64 = 1.0;
    const LC1: f64 = 0.5;
    const LC2: f64 = 0.5;
    const I1: f64 = 1.0;
    const I2: f64 = 1.0;
    const G: f64 = 9.8;
    const MAX_V1: f64 = 4.0 * PI;
    const MAX_V2: f64 = 9.0 * PI;

    pub fn new(horizon: usize, seed: u64) -> Self {
        Self {
            horizon,
            rng: rng_from_seed(seed),
            state: [0.0; 4],
            t: 0,
        }
    }

    fn deriv(s: [f64; 4], torque: f64) -> [f64; 4] {
        let [t1, t2, d1, d2] = s;
        let d11 = Self::M1 * Self::LC1 * Self::LC1
            + Self::M2 * (Self::L1 * Self::L1 + Self::LC2 * Self::LC2 + 2.0 * Self::L1 * Self::LC2 * t2.cos())
            + Self::I1
            + Self::I2;
        let d22 = Self::M2 * (Self::LC2 * Self::LC2 + Self::L1 * Self::LC2 * t2.cos()) + Self::I2;
        let phi2 = Self::M2 * Self::LC2 * Self::G * (t1 + t2 - PI / 2.0).cos();
        let phi1 = -Self::M2 * Self::L1 * Self::LC2 * d2 * d2 * t2.sin()
            - 2.0 * Self::M2 * Self::L1 * Self::LC2 * d2 * d1 * t2.sin()
            + (Self::M1 * Self::LC1 + Self::M2 * Self::L1) * Self::G * (t1 - PI / 2.0).cos()
            + phi2;
        let dd2 = (torque + d22 / d11 * phi1 - Self::M2 * Self::L1 * Self::LC2 * d1 * d1 * t2.sin() - phi2)
            / (Self::M2 * Self::LC2 * Self::LC2 + Self::I2 - d22 * d22 / d11);
        let dd1 = -(d22 * dd2 + phi1) / d11;
        [d1, d2, dd1, dd2]
    }

    fn obs(&self) -> Vec<f64> {
        let [t1, t2, d1, d2] = self.state;
        vec![t1.cos(), t1.sin(), t2.cos(), t2.sin(), d1, d2]
    }
}

fn wrap_angle(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

impl SimOnlyEnv for Acrobot {
    fn reset(&mut self) -> Vec<f64> {
        for v in &mut self.state {
            *v = self.rng.random_range(-0.1..0.1);
        }
        self.t = 0;
        self.obs()
    }

    fn step(&mut self, action: usize) -> SimStep {
        let torque = action.min(2) as f64 - 1.0;
        let s = self.state;
        let add =
            |a: [f64; 4], k: [f64; 4], h: f64| [a[0] + h * k[0], a[1] + h * k[1], a[2] + h * k[2], a[3] + h * k[3]];
        let k1 = Self::deriv(s, torque);
        let k2 = Self::deriv(add(s, k1, Self::DT / 2.0), torque);
        let k3 = Self::deriv(add(s, k2, Self::DT / 2.0), torque);
        let k4 = Self::deriv(add(s, k3, Self::DT), torque);
        let mut n = [0.0; 4];
        for i in 0..4 {
            n[i] = s[i] + Self::DT / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        n[0] = wrap_angle(n[0]);
        n[1] = wrap_angle(n[1]);
        n[2] = n[2].clamp(-Self::MAX_V1, Self::MAX_V1);
        n[3] = n[3].clamp(-Self::MAX_V2, Self::MAX_V2);
        self.state = n;
        self.t += 1;
        let height = -n[0].cos() - (n[0] + n[1]).cos();
        SimStep {
            reward: if height > 1.0 { 1.0 } else { 0.0 },
            obs: self.obs(),
            done: self.t >= self.horizon,
        }
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn num_actions(&self) -> usize {
        3
    }

    fn obs_dim(&self) -> usize {
        6
    }
}

/// Simulation-only sticky actions: the previous executed action repeats with
/// probability `repeat_prob`, at most `max_repeats` times in a row.
pub struct StickySim<E> {
    inner: E,
    repeat_prob: f64,
    max_repeats: usize,
    rng: Rng,
    last: Option<usize>,
    count: usize,
}

impl<E: SimOnlyEnv> StickySim<E> {
    pub fn new(inner: E, repeat_prob: f64, max_repeats: usize, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&repeat_prob) || max_repeats == 0 {
            return Err(OpsError::invalid("repeat_prob must be in [0, 1) and max_repeats >= 1"));
        }
        Ok(Self {
            inner,
            repeat_prob,
            max_repeats,
            rng: rng_from_seed(seed),
            last: None,
            count: 0,
        })
    }
}

impl<E: SimOnlyEnv> SimOnlyEnv for StickySim<E> {
    fn reset(&mut self) -> Vec<f64> {
        self.last = None;
        self.count = 0;
        self.inner.reset()
    }

    fn step(&mut self, action: usize) -> SimStep {
        let executed = match self.last {
            Some(prev) if self.count < self.max_repeats && self.rng.random::<f64>() < self.repeat_prob => {
                self.count += 1;
                prev
            }
            _ => {
                self.count = 0;
                action
            }
        };
        self.last = Some(executed);
        self.inner.step(executed)
    }

    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    fn num_actions(&self) -> usize {
        self.inner.num_actions()
    }

    fn obs_dim(&self) -> usize {
        self.inner.obs_dim()
    }

    fn r_max(&self) -> f64 {
        self.inner.r_max()
    }
}

/// Policy on observations for simulation-only environments.
pub trait SimPolicy {
    fn act(&self, obs: &[f64], t: usize, rng: &mut Rng) -> usize;
}

impl<F: Fn(&[f64], usize, &mut Rng) -> usize> SimPolicy for F {
    fn act(&self, obs: &[f64], t: usize, rng: &mut Rng) -> usize {
        self(obs, t, rng)
    }
}

/// Mean return of `policy` over `episodes` rollouts, with standard error.
pub fn monte_carlo_sim(env: &mut dyn SimOnlyEnv, policy: &dyn SimPolicy, episodes: usize, seed: u64) -> McEstimate {
    let mut rng = rng_from_seed(derive_seed(seed, &[1]));
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut obs = env.reset();
        let mut g = 0.0;
        for t in 0..env.horizon() {
            let a = policy.act(&obs, t, &mut rng);
            let st = env.step(a);
            g += st.reward;
            obs = st.obs;
            if st.done {
                break;
            }
        }
        returns.push(g);
    }
    McEstimate::from_returns(returns)
}

/// Transitions `(obs, a, r, obs', t)` collected by rolling out a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTransition {
    pub t: usize,
    pub obs: Vec<f64>,
    pub a: usize,
    pub r: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
}

pub fn collect_sim(
    env: &mut dyn SimOnlyEnv,
    policy: &dyn SimPolicy,
    episodes: usize,
    seed: u64,
) -> Vec<Vec<SimTransition>> {
    let mut rng = rng_from_seed(derive_seed(seed, &[2]));
    let mut out = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut obs = env.reset();
        let mut ep = Vec::new();
        for t in 0..env.horizon() {
            let a = policy.act(&obs, t, &mut rng);
            let st = env.step(a);
            ep.push(SimTransition {
                t,
                obs: obs.clone(),
                a,
                r: st.reward,
                next_obs: st.obs.clone(),
                done: st.done,
            });
            obs = st.obs;
            if st.done {
                break;
            }
        }
        out.push(ep);
    }
    out
}
