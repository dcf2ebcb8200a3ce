//! Cross-attention over retrieved neighbours followed by a learned gate.

use super::ops::{affine, affine_backward, dot, sigmoid, softmax_in_place};
use super::params::Linear;
use crate::error::ModelError;

#[derive(Debug, Clone, PartialEq)]
pub struct Fused {
    /// Attention weights over the neighbours.
    pub alpha: Vec<f64>,
    /// Weighted neighbour summary.
    pub context: Vec<f64>,
    pub gate: Vec<f64>,
    pub output: Vec<f64>,
}

/// Scaled dot-product attention of the query over its neighbours. Has no
/// trainable parameters, so callers may compute it once per sample.
pub fn attend(query: &[f64], neighbours: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
    if neighbours.is_empty() {
        return Err(ModelError::NoNeighbours);
    }
    let d = query.len();
    for n in neighbours {
        if n.len() != d {
            return Err(ModelError::Shape {
                what: "neighbour embedding",
                expected: d,
                got: n.len(),
            });
        }
    }
    let scale = (d as f64).sqrt();
    let mut alpha: Vec<f64> = neighbours.iter().map(|n| dot(query, n) / scale).collect();
    softmax_in_place(&mut alpha);
    let mut context = vec![0.0; d];
    for (a, n) in alpha.iter().zip(neighbours) {
        for (c, v) in context.iter_mut().zip(n) {
            *c += a * v;
        }
    }
    Ok((alpha, context))
}

/// Gate between the query and a precomputed neighbour summary.
pub fn gate_fuse(query: &[f64], context: &[f64], gate: &Linear) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
    let d = query.len();
    if context.len() != d || gate.input_dim() != 2 * d || gate.output_dim() != d {
        return Err(ModelError::Shape {
            what: "fusion gate",
            expected: 2 * d,
            got: gate.input_dim(),
        });
    }
    let input = [query, context].concat();
    let u: Vec<f64> = affine(gate, &input, 1).into_iter().map(sigmoid).collect();
    let out = (0..d).map(|i| u[i] * query[i] + (1.0 - u[i]) * context[i]).collect();
    Ok((u, out))
}

pub fn fuse_context(query: &[f64], neighbours: &[Vec<f64>], gate: &Linear) -> Result<Fused, ModelError> {
    let (alpha, context) = attend(query, neighbours)?;
    let (u, output) = gate_fuse(query, &context, gate)?;
    Ok(Fused {
        alpha,
        context,
        gate: u,
        output,
    })
}

/// Accumulates gate gradients given `d_output`.
pub(crate) fn gate_backward(query: &[f64], context: &[f64], u: &[f64], d_output: &[f64], gate: &Linear, grad: &mut Linear) {
    let d_pre: Vec<f64> = (0..query.len())
        .map(|i| d_output[i] * (query[i] - context[i]) * u[i] * (1.0 - u[i]))
        .collect();
    let input = [query, context].concat();
    affine_backward(gate, &input, 1, &d_pre, grad, false);
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn single_neighbour_gets_all_weight() {
        let (alpha, ctx) = attend(&[1.0, 2.0], &[vec![3.0, -1.0]]).unwrap();
        assert_eq!(alpha, vec![1.0]);
        assert_eq!(ctx, vec![3.0, -1.0]);
    }

    #[test]
    fn equal_scores_split_evenly() {
        let (alpha, _) = attend(&[1.0, 0.0], &[vec![2.0, 5.0], vec![2.0, -7.0]]).unwrap();
        assert_eq!(alpha, vec![0.5, 0.5]);
    }

    #[test]
    fn saturated_gate_returns_query() {
        let d = 4;
        let mut gate = Linear::zeros(2 * d, d);
        gate.b.data.iter_mut().for_each(|b| *b = 20.0);
        let q = vec![0.3, -0.2, 0.9, 0.1];
        let f = fuse_context(&q, &[vec![1.0; 4], vec![-1.0; 4]], &gate).unwrap();
        for (a, b) in f.output.iter().zip(&q) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
    }

    #[test]
    fn no_neighbours_is_an_error() {
        assert!(matches!(attend(&[1.0], &[]), Err(ModelError::NoNeighbours)));
    }

    #[test]
    fn matches_hand_rolled_oracle_and_is_convex() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = 5;
        let q = random_vec(&mut rng, d);
        let ns: Vec<_> = (0..3).map(|_| random_vec(&mut rng, d)).collect();
        let mut gate = Linear::zeros(2 * d, d);
        gate.w.data = random_vec(&mut rng, 2 * d * d);
        gate.b.data = random_vec(&mut rng, d);
        let f = fuse_context(&q, &ns, &gate).unwrap();

        // Oracle written out longhand.
        let s: Vec<f64> = ns
            .iter()
            .map(|n| (0..d).map(|i| q[i] * n[i]).sum::<f64>() / (d as f64).sqrt())
            .collect();
        let m = s.iter().cloned().fold(f64::MIN, f64::max);
        let z: f64 = s.iter().map(|v| (v - m).exp()).sum();
        let a: Vec<f64> = s.iter().map(|v| (v - m).exp() / z).collect();
        assert_abs_diff_eq!(f.alpha.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        for i in 0..d {
            let ctx = a[0] * ns[0][i] + a[1] * ns[1][i] + a[2] * ns[2][i];
            let mut pre_ctx = gate.b.data[i];
            for j in 0..d {
                let cj = a[0] * ns[0][j] + a[1] * ns[1][j] + a[2] * ns[2][j];
                pre_ctx += gate.w.data[i * 2 * d + j] * q[j] + gate.w.data[i * 2 * d + d + j] * cj;
            }
            let u = 1.0 / (1.0 + (-pre_ctx).exp());
            let expected = u * q[i] + (1.0 - u) * ctx;
            assert_abs_diff_eq!(f.output[i], expected, epsilon = 1e-6);
            let (lo, hi) = if q[i] < ctx { (q[i], ctx) } else { (ctx, q[i]) };
            assert!(f.output[i] >= lo - 1e-15 && f.output[i] <= hi + 1e-15);
        }
    }
}
