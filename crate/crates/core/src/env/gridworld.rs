use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{OpsError, Result};
use crate::mdp::{Mdp, MdpBuilder, Outcome, StateId};
use crate::rng::rng_from_seed;

pub const UP: usize = 0;
pub const RIGHT: usize = 1;
pub const DOWN: usize = 2;
pub const LEFT: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RewardLayout {
    Zero,
    Goal {
        x: usize,
        y: usize,
        value: f64,
    },
    Cells {
        cells: Vec<(usize, usize, f64)>,
    },
    /// `count` distinct cells with values drawn uniformly from `(0, 1]`.
    Random {
        count: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub horizon: usize,
    pub slip: f64,
    #[serde(default)]
    pub start: (usize, usize),
    pub rewards: RewardLayout,
    /// Pay Bernoulli(value) instead of the point mass `value`.
    #[serde(default)]
    pub bernoulli: bool,
}

impl GridSpec {
    /// Goal of value 1 in the corner opposite the start.
    pub fn small(width: usize, height: usize, horizon: usize, slip: f64) -> Self {
        Self {
            width,
            height,
            horizon,
            slip,
            start: (0, 0),
            rewards: RewardLayout::Goal {
                x: width - 1,
                y: height - 1,
                value: 1.0,
            },
            bernoulli: false,
        }
    }
}

fn step_cell(w: usize, h: usize, cell: usize, a: usize) -> usize {
    let (x, y) = (cell % w, cell / w);
    let (nx, ny) = match a {
        UP => (x, y.saturating_sub(1)),
        RIGHT => ((x + 1).min(w - 1), y),
        DOWN => (x, (y + 1).min(h - 1)),
        _ => (x.saturating_sub(1), y),
    };
    ny * w + nx
}

/// Layered gridworld with four moves and walls that clamp. Layer 0 holds the
/// start cell only, later layers hold every cell in row-major order. The
/// reward is paid on arrival and depends on the cell entered. With
/// probability `slip` the executed move is uniform over all four.
pub fn make_gridworld(spec: &GridSpec, seed: u64) -> Result<Mdp> {
    let (w, hgt) = (spec.width, spec.height);
    if w == 0 || hgt == 0 || spec.horizon == 0 {
        return Err(OpsError::invalid("gridworld needs positive width, height and horizon"));
    }
    if !(0.0..1.0).contains(&spec.slip) {
        return Err(OpsError::invalid(format!(
            "slip probability {} outside [0, 1)",
            spec.slip
        )));
    }
    if spec.start.0 >= w || spec.start.1 >= hgt {
        return Err(OpsError::invalid("start cell outside the grid"));
    }
    let n = w * hgt;
    let mut reward = vec![0.0; n];
    match &spec.rewards {
        RewardLayout::Zero => {}
        RewardLayout::Goal { x, y, value } => set_cell(&mut reward, w, hgt, *x, *y, *value)?,
        RewardLayout::Cells { cells } => {
            for &(x, y, v) in cells {
                set_cell(&mut reward, w, hgt, x, y, v)?;
            }
        }
        RewardLayout::Random { count } => {
            if *count > n {
                return Err(OpsError::invalid("more reward cells than grid cells"));
            }
            let mut rng = rng_from_seed(seed);
            let mut placed = 0;
            while placed < *count {
                let c = rng.random_range(0..n);
                if reward[c] == 0.0 {
                    reward[c] = 1.0 - rng.random::<f64>();
                    placed += 1;
                }
            }
        }
    }
    if spec.bernoulli && reward.iter().any(|&r| r > 1.0) {
        return Err(OpsError::invalid("Bernoulli rewards need values in [0, 1]"));
    }
    let r_max = reward
        .iter()
        .copied()
        .fold(0.0, f64::max)
        .max(if spec.bernoulli { 1.0 } else { 0.0 });
    let start = spec.start.1 * w + spec.start.0;
    let mut sizes = vec![n; spec.horizon];
    sizes[0] = 1;
    let mut b = MdpBuilder::new(sizes, 4, r_max.max(1.0))?;
    let p_move = |intended: usize, executed: usize| {
        let base = spec.slip / 4.0;
        if intended == executed {
            1.0 - spec.slip + base
        } else {
            base
        }
    };
    for h in 0..spec.horizon {
        let last = h + 1 == spec.horizon;
        let cells: Vec<usize> = if h == 0 { vec![start] } else { (0..n).collect() };
        for (i, &cell) in cells.iter().enumerate() {
            for a in 0..4 {
                let mut outs: Vec<Outcome> = Vec::new();
                for e in 0..4 {
                    let p = p_move(a, e);
                    if p == 0.0 {
                        continue;
                    }
                    let dest = step_cell(w, hgt, cell, e);
                    let next = (!last).then_some(dest);
                    let rv = reward[dest];
                    let atoms: Vec<(f64, f64)> = if spec.bernoulli {
                        vec![(1.0, rv), (0.0, 1.0 - rv)]
                    } else {
                        vec![(rv, 1.0)]
                    };
                    for (r, pr) in atoms {
                        let prob = p * pr;
                        if prob == 0.0 {
                            continue;
                        }
                        match outs.iter_mut().find(|o| o.next == next && o.reward == r) {
                            Some(o) => o.prob += prob,
                            None => outs.push(Outcome { next, reward: r, prob }),
                        }
                    }
                }
                b.set_outcomes(StateId::new(h, i), a, outs);
            }
        }
    }
    let coords = |cell: usize| {
        vec![
            if w > 1 { (cell % w) as f64 / (w - 1) as f64 } else { 0.0 },
            if hgt > 1 {
                (cell / w) as f64 / (hgt - 1) as f64
            } else {
                0.0
            },
        ]
    };
    let mut obs = vec![coords(start)];
    for _ in 1..spec.horizon {
        obs.extend((0..n).map(coords));
    }
    b.observations(obs);
    b.metadata("kind", "gridworld");
    b.metadata("size", format!("{w}x{hgt}"));
    if !reward_reachable(w, hgt, start, &reward, spec.horizon) {
        b.metadata("warning", "no rewarding cell is reachable within the horizon");
    }
    b.build()
}

fn set_cell(reward: &mut [f64], w: usize, h: usize, x: usize, y: usize, v: f64) -> Result<()> {
    if x >= w || y >= h {
        return Err(OpsError::invalid(format!("reward cell ({x}, {y}) outside the grid")));
    }
    if !(v >= 0.0 && v.is_finite()) {
        return Err(OpsError::invalid("reward values must be finite and non-negative"));
    }
    reward[y * w + x] = v;
    Ok(())
}

/// Whether some rewarding cell can be entered within `horizon` moves.
fn reward_reachable(w: usize, h: usize, start: usize, reward: &[f64], horizon: usize) -> bool {
    let mut dist = vec![usize::MAX; w * h];
    let mut queue = VecDeque::from([start]);
    dist[start] = 0;
    while let Some(c) = queue.pop_front() {
        for a in 0..4 {
            let d = step_cell(w, h, c, a);
            if dist[d] == usize::MAX {
                dist[d] = dist[c] + 1;
                queue.push_back(d);
            }
        }
    }
    (0..w * h).any(|c| reward[c] > 0.0 && dist[c].max(1) <= horizon)
}
