//! Explicit finite MDPs with deterministic transitions and a coordinate
//! embedding per state. These power the exact DP oracle and the neural
//! certification runs.

use std::io::BufRead;
use std::path::Path;

use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// next[s * n_actions + a]
    next: Vec<usize>,
    /// Row-major (n_states, embed_dim) coordinates used for distances.
    embedding: Vec<f64>,
    pub embed_dim: usize,
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        next: Vec<usize>,
        embedding: Vec<f64>,
        embed_dim: usize,
    ) -> Result<Self> {
        if next.len() != n_states * n_actions {
            return Err(Error::Shape {
                what: "transition table",
                expected: n_states * n_actions,
                got: next.len(),
            });
        }
        if embedding.len() != n_states * embed_dim {
            return Err(Error::Shape {
                what: "state embedding",
                expected: n_states * embed_dim,
                got: embedding.len(),
            });
        }
        if let Some(bad) = next.iter().find(|s| **s >= n_states) {
            return Err(Error::InvalidArg(format!(
                "transition target {bad} out of range for {n_states} states"
            )));
        }
        Ok(TabularMdp {
            n_states,
            n_actions,
            next,
            embedding,
            embed_dim,
        })
    }

    /// A 1-D chain with unit spacing and saturating ends. Actions: 0 = left,
    /// 1 = right.
    pub fn chain(n: usize) -> Self {
        let mut next = Vec::with_capacity(n * 2);
        for s in 0..n {
            next.push(s.saturating_sub(1));
            next.push((s + 1).min(n - 1));
        }
        let embedding = (0..n).map(|s| s as f64).collect();
        TabularMdp::new(n, 2, next, embedding, 1).expect("chain construction")
    }

    /// A width x height grid with saturating walls. Actions: 0 = +x, 1 = -x,
    /// 2 = +y, 3 = -y. State index is y * width + x.
    pub fn grid(width: usize, height: usize) -> Self {
        let n = width * height;
        let mut next = Vec::with_capacity(n * 4);
        let mut embedding = Vec::with_capacity(n * 2);
        for s in 0..n {
            let (x, y) = (s % width, s / width);
            next.push(y * width + (x + 1).min(width - 1));
            next.push(y * width + x.saturating_sub(1));
            next.push((y + 1).min(height - 1) * width + x);
            next.push(y.saturating_sub(1) * width + x);
        }
        for s in 0..n {
            embedding.push((s % width) as f64);
            embedding.push((s / width) as f64);
        }
        TabularMdp::new(n, 4, next, embedding, 2).expect("grid construction")
    }

    /// Loads a table from plain text: header `S A`, then S*A lines `s a next`.
    /// The embedding defaults to the 1-D state index.
    pub fn from_file(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_reader(std::io::BufReader::new(file))
    }

    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Config("mdp file is empty".to_string()))??;
        let mut parts = header.split_whitespace();
        let n_states: usize = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Config(format!("bad mdp header `{header}`")))?;
        let n_actions: usize = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Config(format!("bad mdp header `{header}`")))?;
        if n_states == 0 || n_actions == 0 {
            return Err(Error::Config("mdp needs at least one state and action".into()));
        }
        let mut next = vec![usize::MAX; n_states * n_actions];
        for line in lines {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let mut parts = t.split_whitespace();
            let parse = |tok: Option<&str>| -> Result<usize> {
                tok.and_then(|t| t.parse().ok())
                    .ok_or_else(|| Error::Config(format!("bad mdp line `{line}`")))
            };
            let s = parse(parts.next())?;
            let a = parse(parts.next())?;
            let ns = parse(parts.next())?;
            if s >= n_states || a >= n_actions || ns >= n_states {
                return Err(Error::Config(format!("mdp line out of range: `{line}`")));
            }
            next[s * n_actions + a] = ns;
        }
        if let Some(pos) = next.iter().position(|v| *v == usize::MAX) {
            return Err(Error::Config(format!(
                "mdp file missing transition for s={} a={}",
                pos / n_actions,
                pos % n_actions
            )));
        }
        let embedding = (0..n_states).map(|s| s as f64).collect();
        TabularMdp::new(n_states, n_actions, next, embedding, 1)
    }

    pub fn next(&self, s: usize, a: usize) -> Result<usize> {
        if s >= self.n_states {
            return Err(Error::InvalidArg(format!(
                "state index {s} out of range (< {})",
                self.n_states
            )));
        }
        if a >= self.n_actions {
            return Err(Error::InvalidArg(format!(
                "action index {a} out of range (< {})",
                self.n_actions
            )));
        }
        Ok(self.next[s * self.n_actions + a])
    }

    pub fn embed(&self, s: usize) -> &[f64] {
        &self.embedding[s * self.embed_dim..(s + 1) * self.embed_dim]
    }

    /// L1 distance between two states' embeddings; the DP oracle and the
    /// TDM reward share this metric.
    pub fn distance(&self, s: usize, g: usize) -> f64 {
        self.embed(s)
            .iter()
            .zip(self.embed(g))
            .map(|(a, b)| (a - b).abs())
            .sum()
    }

    pub fn one_hot(&self, s: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.n_states];
        v[s] = 1.0;
        v
    }

    pub fn state_of_one_hot(&self, v: &[f64]) -> Result<usize> {
        if v.len() != self.n_states {
            return Err(Error::Shape {
                what: "one-hot state",
                expected: self.n_states,
                got: v.len(),
            });
        }
        v.iter()
            .position(|x| *x == 1.0)
            .ok_or_else(|| Error::InvalidArg("vector is not one-hot".to_string()))
    }

    /// Dimension of the continuous action representation: 1 for two actions
    /// (sign), 2 for four (axis + sign).
    pub fn action_rep_dim(&self) -> usize {
        if self.n_actions <= 2 {
            1
        } else {
            2
        }
    }

    /// Continuous representative of a discrete action, matching
    /// [`snap_action`](Self::snap_action).
    pub fn canonical_action(&self, a: usize) -> Vec<f64> {
        if self.n_actions <= 2 {
            vec![if a == 0 { -1.0 } else { 1.0 }]
        } else {
            match a {
                0 => vec![1.0, 0.0],
                1 => vec![-1.0, 0.0],
                2 => vec![0.0, 1.0],
                _ => vec![0.0, -1.0],
            }
        }
    }

    pub fn canonical_action_set(&self) -> Vec<Vec<f64>> {
        (0..self.n_actions).map(|a| self.canonical_action(a)).collect()
    }

    /// Projects a continuous action onto the discrete set: the sign for
    /// chains, the dominant axis and its sign for grids. Ties resolve toward
    /// the x axis and the positive direction.
    pub fn snap_action(&self, a: &[f64]) -> usize {
        if self.n_actions <= 2 {
            usize::from(a[0] >= 0.0)
        } else if a[0].abs() >= a[1].abs() {
            if a[0] >= 0.0 {
                0
            } else {
                1
            }
        } else if a[1] >= 0.0 {
            2
        } else {
            3
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_moves_and_saturates() {
        let m = TabularMdp::chain(5);
        assert_eq!(m.next(0, 1).unwrap(), 1);
        assert_eq!(m.next(4, 1).unwrap(), 4);
        assert_eq!(m.next(0, 0).unwrap(), 0);
        assert_eq!(m.next(3, 0).unwrap(), 2);
    }

    #[test]
    fn grid_moves_up() {
        // 3x3 grid, s = (1,1), +y lands on (1,2).
        let m = TabularMdp::grid(3, 3);
        let s = 1 + 3; // (x=1, y=1)
        let up = m.next(s, 2).unwrap();
        assert_eq!((up % 3, up / 3), (1, 2));
    }

    #[test]
    fn out_of_range_indices_rejected() {
        let m = TabularMdp::chain(5);
        assert!(m.next(5, 0).is_err());
        assert!(m.next(0, 2).is_err());
    }

    #[test]
    fn file_round_trip_matches_chain() {
        let m = TabularMdp::chain(3);
        let mut text = String::from("3 2\n");
        for s in 0..3 {
            for a in 0..2 {
                text.push_str(&format!("{s} {a} {}\n", m.next(s, a).unwrap()));
            }
        }
        let loaded = TabularMdp::from_reader(text.as_bytes()).unwrap();
        for s in 0..3 {
            for a in 0..2 {
                assert_eq!(loaded.next(s, a).unwrap(), m.next(s, a).unwrap());
            }
        }
        assert_eq!(loaded.embed(2), &[2.0]);
    }

    #[test]
    fn file_missing_transition_rejected() {
        let text = "2 2\n0 0 0\n0 1 1\n1 0 0\n";
        assert!(TabularMdp::from_reader(text.as_bytes()).is_err());
    }

    #[test]
    fn snap_is_inverse_of_canonical() {
        for m in [TabularMdp::chain(4), TabularMdp::grid(3, 3)] {
            for a in 0..m.n_actions {
                assert_eq!(m.snap_action(&m.canonical_action(a)), a);
            }
        }
    }

    #[test]
    fn grid_distance_is_manhattan() {
        let m = TabularMdp::grid(3, 3);
        // (0,0) to (2,2)
        assert_eq!(m.distance(0, 8), 4.0);
    }
}
