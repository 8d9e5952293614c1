//! Ground truth at desk scale: exact backward induction for the
//! horizon-conditioned recursion on a tabular MDP, an asynchronous tabular
//! TD learner that converges to it, and comparison utilities.

use rand::Rng;

use crate::envs::TabularMdp;
use crate::{Error, Result};

/// Q values indexed `[s][a][g][tau]`, goals ranging over all states.
#[derive(Debug, Clone)]
pub struct TdmTable {
    pub n_states: usize,
    pub n_actions: usize,
    pub tau_max: u32,
    data: Vec<f64>,
}

impl TdmTable {
    pub fn zeros(mdp: &TabularMdp, tau_max: u32) -> Self {
        let n = mdp.n_states * mdp.n_actions * mdp.n_states * (tau_max as usize + 1);
        TdmTable {
            n_states: mdp.n_states,
            n_actions: mdp.n_actions,
            tau_max,
            data: vec![0.0; n],
        }
    }

    #[inline]
    fn idx(&self, s: usize, a: usize, g: usize, tau: u32) -> usize {
        ((s * self.n_actions + a) * self.n_states + g) * (self.tau_max as usize + 1)
            + tau as usize
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize, g: usize, tau: u32) -> f64 {
        self.data[self.idx(s, a, g, tau)]
    }

    #[inline]
    pub fn set(&mut self, s: usize, a: usize, g: usize, tau: u32, v: f64) {
        let i = self.idx(s, a, g, tau);
        self.data[i] = v;
    }

    pub fn same_shape(&self, other: &TdmTable) -> bool {
        self.n_states == other.n_states
            && self.n_actions == other.n_actions
            && self.tau_max == other.tau_max
    }

    /// Greedy action set at (s, g, tau); ties within `tol` of the maximum.
    pub fn argmax_set(&self, s: usize, g: usize, tau: u32, tol: f64) -> Vec<usize> {
        let best = (0..self.n_actions)
            .map(|a| self.get(s, a, g, tau))
            .fold(f64::NEG_INFINITY, f64::max);
        (0..self.n_actions)
            .filter(|a| self.get(s, *a, g, tau) >= best - tol)
            .collect()
    }
}

/// Exact backward induction: layer 0 is the negative embedding distance of
/// the deterministic next state to the goal; layer tau maximizes layer
/// tau - 1 over the follow-up action.
pub fn dp_solve(mdp: &TabularMdp, tau_max: u32) -> TdmTable {
    let mut table = TdmTable::zeros(mdp, tau_max);
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let next = mdp.next(s, a).expect("indices in range");
            for g in 0..mdp.n_states {
                table.set(s, a, g, 0, -mdp.distance(next, g));
            }
        }
    }
    for tau in 1..=tau_max {
        for s in 0..mdp.n_states {
            for a in 0..mdp.n_actions {
                let next = mdp.next(s, a).expect("indices in range");
                for g in 0..mdp.n_states {
                    let best = (0..mdp.n_actions)
                        .map(|a2| table.get(next, a2, g, tau - 1))
                        .fold(f64::NEG_INFINITY, f64::max);
                    table.set(s, a, g, tau, best);
                }
            }
        }
    }
    table
}

/// One TD backup of cell (s, a, g, tau) from the real transition
/// `next(s, a)`. With alpha = 1 this is exactly the DP assignment for the
/// cell given the current lower layer.
pub fn td_update(
    table: &mut TdmTable,
    mdp: &TabularMdp,
    s: usize,
    a: usize,
    g: usize,
    tau: u32,
    alpha: f64,
) {
    let next = mdp.next(s, a).expect("indices in range");
    let target = if tau == 0 {
        -mdp.distance(next, g)
    } else {
        (0..mdp.n_actions)
            .map(|a2| table.get(next, a2, g, tau - 1))
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let old = table.get(s, a, g, tau);
    table.set(s, a, g, tau, old + alpha * (target - old));
}

/// Off-policy tabular TD with random goal/horizon relabeling per stored
/// transition. Behavior is epsilon-greedy toward a per-episode goal at the
/// remaining-time horizon; each observed transition triggers a handful of
/// relabeled backups, so the table converges to [`dp_solve`] regardless of
/// the behavior's quality.
pub fn tabular_tdm_qlearning<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    tau_max: u32,
    episodes: usize,
    alpha: f64,
    epsilon: f64,
    rng: &mut R,
) -> Result<TdmTable> {
    if !(0.0 < alpha && alpha <= 1.0) {
        return Err(Error::InvalidArg(format!("alpha {alpha} not in (0, 1]")));
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidArg(format!("epsilon {epsilon} not in [0, 1]")));
    }
    let mut table = TdmTable::zeros(mdp, tau_max);
    let horizon = (2 * mdp.n_states).max(tau_max as usize + 1);
    const RELABELS_PER_STEP: usize = 8;
    for _ in 0..episodes {
        let mut s = rng.random_range(0..mdp.n_states);
        let goal = rng.random_range(0..mdp.n_states);
        for t in 0..horizon {
            let remaining = ((horizon - 1 - t) as u32).min(tau_max);
            let a = if rng.random_range(0.0..1.0) < epsilon {
                rng.random_range(0..mdp.n_actions)
            } else {
                *table
                    .argmax_set(s, goal, remaining, 1e-12)
                    .first()
                    .expect("non-empty action set")
            };
            for _ in 0..RELABELS_PER_STEP {
                let g = rng.random_range(0..mdp.n_states);
                let tau = rng.random_range(0..=tau_max);
                td_update(&mut table, mdp, s, a, g, tau, alpha);
            }
            s = mdp.next(s, a)?;
        }
    }
    Ok(table)
}

/// Maximum absolute entry difference plus the number of (s, g, tau) cells
/// whose greedy action sets do not intersect.
pub fn compare_tables(a: &TdmTable, b: &TdmTable) -> Result<(f64, usize)> {
    if !a.same_shape(b) {
        return Err(Error::Shape {
            what: "tdm table",
            expected: a.data.len(),
            got: b.data.len(),
        });
    }
    let max_abs = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f64, f64::max);
    let mut mismatches = 0;
    for s in 0..a.n_states {
        for g in 0..a.n_states {
            for tau in 0..=a.tau_max {
                let sa = a.argmax_set(s, g, tau, 1e-9);
                let sb = b.argmax_set(s, g, tau, 1e-9);
                if !sa.iter().any(|x| sb.contains(x)) {
                    mismatches += 1;
                }
            }
        }
    }
    Ok((max_abs, mismatches))
}

/// Shortest-path steps between states under the deterministic dynamics,
/// used to check the zero-level-set property (BFS, independent of the DP
/// recursion).
pub fn reach_steps(mdp: &TabularMdp, from: usize, to: usize) -> Option<usize> {
    let mut dist = vec![usize::MAX; mdp.n_states];
    let mut queue = std::collections::VecDeque::new();
    dist[from] = 0;
    queue.push_back(from);
    while let Some(s) = queue.pop_front() {
        if s == to {
            return Some(dist[s]);
        }
        for a in 0..mdp.n_actions {
            let n = mdp.next(s, a).expect("in range");
            if dist[n] == usize::MAX {
                dist[n] = dist[s] + 1;
                queue.push_back(n);
            }
        }
    }
    None
}
