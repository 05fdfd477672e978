//! Independent reference computations shared by the integration tests and
//! the acceptance suite. Nothing here calls the code under test except to
//! build inputs.
#![allow(dead_code)]

pub mod checks;

use afocp_core::attention::AttentionParams;
use afocp_core::neuralnet::{Activation, MlpParams, ParamSet};
use afocp_core::rng::SeedStream;

/// Smallest atom value `v` (possibly `+∞`) with `Σ_{a ≤ v} w_a ≥ level`,
/// recomputing every cumulative sum from scratch.
pub fn brute_quantile(atoms: &[(f64, f64)], level: f64) -> f64 {
    if level < 0.0 {
        return f64::NEG_INFINITY;
    }
    if level.is_nan() || level > 1.0 {
        return f64::INFINITY;
    }
    let mut candidates: Vec<f64> = atoms.iter().map(|a| a.0).collect();
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for v in candidates {
        let mass: f64 = atoms.iter().filter(|a| a.0 <= v).map(|a| a.1).sum();
        if mass >= level {
            return v;
        }
    }
    f64::INFINITY
}

/// `L` scores plus `L + 1` weights that are multiples of `2⁻¹⁰` summing to
/// exactly 1, so cumulative sums are exact in any order.
pub fn dyadic_distribution(rng: &mut SeedStream, max_atoms: usize) -> (Vec<f64>, Vec<f64>) {
    const UNITS: u64 = 1024;
    let l = rng.int_inclusive(1, max_atoms);
    let tie_heavy = rng.below(2) == 0;
    let scores: Vec<f64> = (0..l)
        .map(|_| {
            if tie_heavy {
                rng.below(4) as f64 * 0.5
            } else {
                rng.uniform_range(0.0, 10.0)
            }
        })
        .collect();
    // Random composition of UNITS into L + 1 nonnegative parts.
    let mut cuts: Vec<u64> = (0..l).map(|_| rng.below(UNITS + 1)).collect();
    cuts.sort_unstable();
    let mut weights = Vec::with_capacity(l + 1);
    let mut prev = 0;
    for c in cuts {
        weights.push((c - prev) as f64 / UNITS as f64);
        prev = c;
    }
    weights.push((UNITS - prev) as f64 / UNITS as f64);
    (scores, weights)
}

pub fn random_vec(rng: &mut SeedStream, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.standard_normal()).collect()
}

/// Random head with nonzero biases.
pub fn random_head(
    rng: &mut SeedStream,
    d: usize,
    h: usize,
    out: usize,
    activation: Activation,
) -> MlpParams {
    let mut head = MlpParams::init(d, h, out, activation, rng);
    for b in head
        .layer1_bias
        .iter_mut()
        .chain(head.layer2_bias.iter_mut())
    {
        *b = 0.3 * rng.standard_normal();
    }
    head
}

/// Uniform sample from the L2 ball of `radius` around `center`.
pub fn ball_sample(rng: &mut SeedStream, center: &[f64], radius: f64) -> Vec<f64> {
    let d = center.len();
    let dir = random_vec(rng, d, 1.0);
    let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    let r = radius * rng.uniform().powf(1.0 / d as f64);
    center
        .iter()
        .zip(&dir)
        .map(|(c, u)| c + r * u / n)
        .collect()
}

/// Central difference of `f` with respect to every entry of every tensor.
pub fn central_differences<P: ParamSet + Clone>(
    params: &P,
    h: f64,
    f: impl Fn(&P) -> f64,
) -> Vec<Vec<f64>> {
    let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let mut out = Vec::with_capacity(shapes.len());
    for (t, &len) in shapes.iter().enumerate() {
        let mut grads = Vec::with_capacity(len);
        for i in 0..len {
            let mut plus = params.clone();
            plus.tensors_mut()[t][i] += h;
            let mut minus = params.clone();
            minus.tensors_mut()[t][i] -= h;
            grads.push((f(&plus) - f(&minus)) / (2.0 * h));
        }
        out.push(grads);
    }
    out
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)` over all entries, 0 when both vanish.
pub fn relative_error(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let (mut diff, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (ta, tb) in a.iter().zip(b) {
        for (x, y) in ta.iter().zip(tb) {
            diff += (x - y) * (x - y);
            na += x * x;
            nb += y * y;
        }
    }
    let scale = na.max(nb).sqrt();
    if scale == 0.0 {
        0.0
    } else {
        diff.sqrt() / scale
    }
}

/// Smallest distance from a ReLU pre-activation to its kink at `x`.
pub fn kink_margin(head: &MlpParams, x: &[f64]) -> f64 {
    if head.activation == Activation::Identity {
        return f64::INFINITY;
    }
    let z = head.layer1_weights.matvec(x);
    z.iter()
        .zip(&head.layer1_bias)
        .map(|(a, b)| (a + b).abs())
        .fold(f64::INFINITY, f64::min)
}

pub fn tensors_of<P: ParamSet>(p: &P) -> Vec<Vec<f64>> {
    p.tensors().iter().map(|t| t.to_vec()).collect()
}

/// Squared loss of the attention score predictor, written out directly.
pub fn attention_loss(
    params: &AttentionParams,
    query: &[f64],
    keys: &[Vec<f64>],
    scores: &[f64],
    target: f64,
) -> f64 {
    let qp: Vec<f64> = (0..params.latent_dim())
        .map(|j| {
            (0..params.feature_dim())
                .map(|i| params.query_weights[(i, j)] * query[i])
                .sum()
        })
        .collect();
    let logits: Vec<f64> = keys
        .iter()
        .map(|k| {
            let kp: Vec<f64> = (0..params.latent_dim())
                .map(|j| {
                    (0..params.feature_dim())
                        .map(|i| params.key_weights[(i, j)] * k[i])
                        .sum()
                })
                .collect();
            params.beta * qp.iter().zip(&kp).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect();
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let total: f64 = e.iter().sum();
    let pred: f64 = e.iter().zip(scores).map(|(a, s)| a / total * s).sum();
    (target - pred).powi(2)
}

/// Solves the symmetric positive definite system `M z = r` by Gaussian
/// elimination with partial pivoting.
pub fn solve(mut m: Vec<Vec<f64>>, mut r: Vec<f64>) -> Vec<f64> {
    let n = r.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&a, &b| m[a][col].abs().partial_cmp(&m[b][col].abs()).unwrap())
            .unwrap();
        m.swap(col, piv);
        r.swap(col, piv);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for k in col..n {
                m[row][k] -= f * m[col][k];
            }
            r[row] -= f * r[col];
        }
    }
    let mut z = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| m[i][k] * z[k]).sum();
        z[i] = (r[i] - s) / m[i][i];
    }
    z
}

/// Distance from `c` to `{v : A v + b = y}` for full-row-rank `A`, via the
/// normal equations: `‖Aᵀ (A Aᵀ)⁻¹ (A c + b − y)‖`.
pub fn affine_preimage_distance(a: &[Vec<f64>], b: &[f64], c: &[f64], y: &[f64]) -> f64 {
    let m = a.len();
    let gram: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            (0..m)
                .map(|j| a[i].iter().zip(&a[j]).map(|(x, z)| x * z).sum())
                .collect()
        })
        .collect();
    let resid: Vec<f64> = (0..m)
        .map(|i| a[i].iter().zip(c).map(|(x, z)| x * z).sum::<f64>() + b[i] - y[i])
        .collect();
    let z = solve(gram, resid);
    let step: Vec<f64> = (0..c.len())
        .map(|k| (0..m).map(|i| a[i][k] * z[i]).sum())
        .collect();
    step.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Spearman rank correlation without ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
        let mut r = vec![0.0; v.len()];
        for (rank, i) in idx.into_iter().enumerate() {
            r[i] = rank as f64 + 1.0;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b).powi(2)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}
