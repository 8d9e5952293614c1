//! Dense feed-forward networks with hand-written backprop, the Adam
//! optimizer, and polyak-averaged target copies. No autodiff graph: the
//! network zoo here is tiny and fixed, so per-layer gradients are coded
//! directly and certified against finite differences in the tests.

mod adam;
mod checkpoint;
mod mlp;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{load_params, save_params};
pub use mlp::{mlp_backward, mlp_forward, Activation, Layer, MlpGrads, MlpParams};

use crate::{Error, Result};

/// A slow-moving snapshot of a source network, advanced by polyak averaging.
#[derive(Debug, Clone)]
pub struct TargetCopy {
    pub params: MlpParams,
    /// Polyak coefficient; 1 freezes the target, 0 hard-copies the source.
    pub rho: f64,
}

impl TargetCopy {
    pub fn new(source: &MlpParams, rho: f64) -> Self {
        TargetCopy {
            params: source.clone(),
            rho,
        }
    }
}

/// `target <- rho * target + (1 - rho) * source`, elementwise.
pub fn polyak_update(target: &mut TargetCopy, source: &MlpParams) -> Result<()> {
    let rho = target.rho;
    polyak_blend(&mut target.params, source, rho)
}

/// The blend behind [`polyak_update`], usable on bare parameters when the
/// target copy lives inside a larger struct.
pub fn polyak_blend(target: &mut MlpParams, source: &MlpParams, rho: f64) -> Result<()> {
    if target.layers.len() != source.layers.len() {
        return Err(Error::Shape {
            what: "polyak layer count",
            expected: target.layers.len(),
            got: source.layers.len(),
        });
    }
    for (tl, sl) in target.layers.iter_mut().zip(&source.layers) {
        if tl.w.len() != sl.w.len() || tl.b.len() != sl.b.len() {
            return Err(Error::Shape {
                what: "polyak layer size",
                expected: tl.w.len(),
                got: sl.w.len(),
            });
        }
        for (t, s) in tl.w.iter_mut().zip(&sl.w) {
            *t = rho * *t + (1.0 - rho) * s;
        }
        for (t, s) in tl.b.iter_mut().zip(&sl.b) {
            *t = rho * *t + (1.0 - rho) * s;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_net(seed: u64) -> MlpParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MlpParams::new(&[3, 8, 2], Activation::Linear, &mut rng)
    }

    #[test]
    fn polyak_rho_one_leaves_target_unchanged() {
        let source = small_net(1);
        let mut target = TargetCopy::new(&small_net(2), 1.0);
        let before = target.params.clone();
        polyak_update(&mut target, &source).unwrap();
        assert_eq!(before.flatten(), target.params.flatten());
    }

    #[test]
    fn polyak_rho_zero_copies_source() {
        let source = small_net(1);
        let mut target = TargetCopy::new(&small_net(2), 0.0);
        polyak_update(&mut target, &source).unwrap();
        assert_eq!(source.flatten(), target.params.flatten());
    }

    #[test]
    fn polyak_scalar_matches_paper_coefficient() {
        // target 0, source 1, rho = 0.999 -> 0.001
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut source = MlpParams::new(&[1, 1], Activation::Linear, &mut rng);
        source.layers[0].w[0] = 1.0;
        source.layers[0].b[0] = 1.0;
        let mut zero = source.clone();
        zero.layers[0].w[0] = 0.0;
        zero.layers[0].b[0] = 0.0;
        let mut target = TargetCopy::new(&zero, 0.999);
        polyak_update(&mut target, &source).unwrap();
        assert!((target.params.layers[0].w[0] - 0.001).abs() < 1e-15);
    }

    #[test]
    fn polyak_contracts_toward_fixed_source() {
        let source = small_net(3);
        let mut target = TargetCopy::new(&small_net(4), 0.9);
        let dist = |t: &TargetCopy| {
            t.params
                .flatten()
                .iter()
                .zip(source.flatten())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max)
        };
        let d0 = dist(&target);
        for k in 1..=20 {
            polyak_update(&mut target, &source).unwrap();
            let bound = 0.9f64.powi(k) * d0 + 1e-12;
            assert!(
                dist(&target) <= bound,
                "step {k}: {} > {}",
                dist(&target),
                bound
            );
        }
    }

    #[test]
    fn polyak_rejects_mismatched_shapes() {
        let source = small_net(1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let other = MlpParams::new(&[3, 9, 2], Activation::Linear, &mut rng);
        let mut target = TargetCopy::new(&other, 0.5);
        assert!(matches!(
            polyak_update(&mut target, &source),
            Err(Error::Shape { .. })
        ));
    }
}
