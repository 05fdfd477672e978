//! Criterion runners returning `Err(detail)` on the first violation, so the
//! same checks back both the integration tests and the acceptance report.

use afocp_core::attention::{attention_grad, AttentionParams};
use afocp_core::calibration::{
    band_radius, AlphaTracker, BandEstimator, WeightedScoreDistribution,
};
use afocp_core::data::{generate_synthetic, Regime, SyntheticConfig};
use afocp_core::linalg::Matrix;
use afocp_core::neuralnet::{Activation, MlpParams, TwoStageModel};
use afocp_core::rng::SeedStream;
use afocp_core::scores::{feature_score, InversionConfig};

use super::*;

pub type Check = Result<String, String>;

pub fn quantile_oracle(cases: usize, seed: u64) -> Check {
    let mut rng = SeedStream::new(seed);
    for case in 0..cases {
        let (scores, weights) = dyadic_distribution(&mut rng, 12);
        let dist =
            WeightedScoreDistribution::from_scores(&scores, &weights).map_err(|e| e.to_string())?;
        let mut atoms: Vec<(f64, f64)> = scores
            .iter()
            .copied()
            .zip(weights.iter().copied())
            .collect();
        atoms.push((f64::INFINITY, *weights.last().unwrap()));
        // Probe every cumulative boundary, its neighbours, and random levels.
        let mut levels = vec![-0.25, -1e-12, 0.0, 1.0, 1.0 + 1e-12, 1.5];
        let mut acc = 0.0;
        for w in &weights {
            acc += w;
            levels.extend([acc, acc - 1e-12, acc + 1e-12]);
        }
        levels.extend((0..8).map(|_| rng.uniform_range(-0.1, 1.1)));
        for level in levels {
            let got = dist.quantile(level);
            let want = brute_quantile(&atoms, level);
            if got != want {
                return Err(format!(
                    "case {case}: level {level}: got {got}, oracle {want}, atoms {atoms:?}"
                ));
            }
        }
    }
    Ok(format!("{cases} distributions, all levels agree"))
}

pub fn mlp_gradients(instances: usize, seed: u64) -> Check {
    let mut rng = SeedStream::new(seed);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < instances {
        let d = rng.int_inclusive(1, 6);
        let h = rng.int_inclusive(1, 8);
        let o = rng.int_inclusive(1, 4);
        let act = if rng.below(4) == 0 {
            Activation::Identity
        } else {
            Activation::Relu
        };
        let net = random_head(&mut rng, d, h, o, act);
        let x = random_vec(&mut rng, d, 1.0);
        if kink_margin(&net, &x) < 1e-3 {
            continue;
        }
        let upstream = random_vec(&mut rng, o, 1.0);
        let objective = |p: &MlpParams, x: &[f64]| -> f64 {
            p.forward(x)
                .unwrap()
                .iter()
                .zip(&upstream)
                .map(|(a, b)| a * b)
                .sum()
        };
        let analytic = net.backward(&x, &upstream).map_err(|e| e.to_string())?;
        let numeric = central_differences(&net, 1e-5, |p| objective(p, &x));
        let mut err = relative_error(&tensors_of(&analytic.params), &numeric);
        let input_numeric: Vec<f64> = (0..d)
            .map(|i| {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[i] += 1e-5;
                xm[i] -= 1e-5;
                (objective(&net, &xp) - objective(&net, &xm)) / 2e-5
            })
            .collect();
        err = err.max(relative_error(
            std::slice::from_ref(&analytic.input),
            &[input_numeric],
        ));
        worst = worst.max(err);
        if err > 1e-4 {
            return Err(format!(
                "instance {done}: relative error {err:.3e} ({act:?}, {d}x{h}x{o})"
            ));
        }
        done += 1;
    }
    Ok(format!(
        "{instances} instances, worst relative error {worst:.2e}"
    ))
}

pub fn attention_gradients(instances: usize, seed: u64) -> Check {
    let mut rng = SeedStream::new(seed);
    let mut worst = 0.0f64;
    for case in 0..instances {
        let d = rng.int_inclusive(1, 6);
        let dl = rng.int_inclusive(1, 5);
        let l = rng.int_inclusive(1, 7);
        let params = AttentionParams::init(d, dl, rng.next_u64());
        let query = random_vec(&mut rng, d, 1.0);
        let keys: Vec<Vec<f64>> = (0..l).map(|_| random_vec(&mut rng, d, 1.0)).collect();
        let scores: Vec<f64> = (0..l).map(|_| rng.uniform_range(0.0, 3.0)).collect();
        let target = rng.uniform_range(0.0, 3.0);
        let key_refs: Vec<&[f64]> = keys.iter().map(Vec::as_slice).collect();
        let (grads, loss) = attention_grad(&params, &query, &key_refs, &scores, target)
            .map_err(|e| e.to_string())?;
        let direct = attention_loss(&params, &query, &keys, &scores, target);
        if (loss - direct).abs() > 1e-12 * (1.0 + direct) {
            return Err(format!("case {case}: loss {loss} vs direct {direct}"));
        }
        let numeric = central_differences(&params, 1e-5, |p| {
            attention_loss(p, &query, &keys, &scores, target)
        });
        let err = relative_error(&tensors_of(&grads), &numeric);
        worst = worst.max(err);
        if err > 1e-4 {
            return Err(format!("case {case}: relative error {err:.3e}"));
        }
    }
    Ok(format!(
        "{instances} instances, worst relative error {worst:.2e}"
    ))
}

pub fn bound_soundness(band: BandEstimator, heads: usize, samples: usize, seed: u64) -> Check {
    let mut rng = SeedStream::new(seed);
    let mut checked = 0u64;
    for head_idx in 0..heads {
        let d = rng.int_inclusive(1, 12);
        let h = rng.int_inclusive(1, 12);
        let o = rng.int_inclusive(1, 4);
        let act = if head_idx % 5 == 4 {
            Activation::Identity
        } else {
            Activation::Relu
        };
        let head = random_head(&mut rng, d, h, o, act);
        let center = random_vec(&mut rng, d, 1.0);
        let radius = rng.uniform_range(0.0, 2.0);
        let iv = band
            .interval(&head, &center, radius)
            .map_err(|e| e.to_string())?;
        for s in 0..samples {
            // Every tenth sample sits on the sphere.
            let u = if s % 10 == 0 {
                let dir = random_vec(&mut rng, d, 1.0);
                let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                center
                    .iter()
                    .zip(&dir)
                    .map(|(c, v)| c + radius * v / n)
                    .collect()
            } else {
                ball_sample(&mut rng, &center, radius)
            };
            let y = head.forward(&u).map_err(|e| e.to_string())?;
            if !iv.contains(&y) {
                return Err(format!(
                    "head {head_idx} sample {s}: {y:?} outside [{:?}, {:?}]",
                    iv.lower, iv.upper
                ));
            }
            checked += 1;
        }
    }
    Ok(format!("{heads} heads, {checked} samples, 0 violations"))
}

/// Builds `g(v) = A v + b` as a two-stage head with an identity first layer.
pub fn affine_head(a: &[Vec<f64>], b: &[f64]) -> MlpParams {
    let (m, d) = (a.len(), a[0].len());
    MlpParams::new(
        Matrix::identity(d),
        vec![0.0; d],
        Matrix::from_fn(m, d, |i, j| a[i][j]),
        b.to_vec(),
        Activation::Identity,
    )
    .unwrap()
}

pub fn inversion_oracle(cases: usize, seed: u64) -> Check {
    let mut rng = SeedStream::new(seed);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let d = rng.int_inclusive(2, 16);
        let m = rng.int_inclusive(1, (d / 2).max(1));
        let a: Vec<Vec<f64>> = (0..m)
            .map(|_| random_vec(&mut rng, d, 1.0 / (d as f64).sqrt()))
            .collect();
        let b = random_vec(&mut rng, m, 0.5);
        let y = random_vec(&mut rng, m, 1.0);
        let x = random_vec(&mut rng, d, 1.0);
        let head = affine_head(&a, &b);
        let extractor = MlpParams::new(
            Matrix::identity(d),
            vec![0.0; d],
            Matrix::identity(d),
            vec![0.0; d],
            Activation::Identity,
        )
        .unwrap();
        let model = TwoStageModel::new(extractor, head).unwrap();
        // η = 1/(2‖A‖_F²) keeps descent monotone; enough steps for the
        // slowest direction of a well-conditioned A.
        let fro2: f64 = a.iter().flatten().map(|v| v * v).sum();
        let cfg = InversionConfig::new(0.5 / fro2, 4000).unwrap();
        let got = feature_score(&model, &x, &y, &cfg).map_err(|e| e.to_string())?;
        let want = affine_preimage_distance(&a, &b, &x, &y);
        let rel = (got - want).abs() / want.max(1e-12);
        worst = worst.max(rel);
        if rel > 0.01 {
            return Err(format!(
                "case {case} (D = {d}, rows = {m}): score {got}, closed form {want}"
            ));
        }
    }
    Ok(format!(
        "{cases} affine heads (D <= 16), worst relative gap {worst:.2e}"
    ))
}

pub fn band_radius_below_preimage_distance(cases: usize, seed: u64) -> Check {
    let mut rng = SeedStream::new(seed);
    for case in 0..cases {
        let d = rng.int_inclusive(2, 10);
        let m = rng.int_inclusive(1, d);
        let a: Vec<Vec<f64>> = (0..m).map(|_| random_vec(&mut rng, d, 1.0)).collect();
        let b = random_vec(&mut rng, m, 0.5);
        let y = random_vec(&mut rng, m, 1.0);
        let c = random_vec(&mut rng, d, 1.0);
        let head = affine_head(&a, &b);
        let r = band_radius(BandEstimator::LinearRelaxation, &head, &c, &y)
            .map_err(|e| e.to_string())?;
        let exact = affine_preimage_distance(&a, &b, &c, &y);
        if r > exact * (1.0 + 1e-8) + 1e-12 {
            return Err(format!(
                "case {case}: band radius {r} exceeds preimage distance {exact}"
            ));
        }
        if !BandEstimator::LinearRelaxation
            .interval(&head, &c, r)
            .unwrap()
            .contains(&y)
        {
            return Err(format!("case {case}: band at radius {r} misses the target"));
        }
    }
    Ok(format!("{cases} affine heads"))
}

pub fn synthetic_statistics(seed: u64) -> Check {
    let series = generate_synthetic(&SyntheticConfig {
        length: 5000,
        seed,
        ..SyntheticConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let mut a_draws = Vec::new();
    let mut b_max = 0.0f64;
    for seg in &series.segments {
        for row in &series.noise[seg.start..seg.start + seg.len] {
            match seg.regime {
                Regime::A => a_draws.extend_from_slice(row),
                Regime::B => b_max = row.iter().fold(b_max, |m, v| m.max(v.abs())),
            }
        }
    }
    a_draws.truncate(100_000);
    if a_draws.len() < 100_000 {
        return Err(format!("only {} regime-A draws", a_draws.len()));
    }
    let n = a_draws.len() as f64;
    let mean = a_draws.iter().sum::<f64>() / n;
    let var = a_draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if (var - 1.5).abs() > 0.05 {
        return Err(format!("regime-A variance {var}"));
    }
    if b_max >= 21.0 {
        return Err(format!("regime-B noise reached {b_max}"));
    }
    let last = series.segments.len() - 1;
    for (i, seg) in series.segments.iter().enumerate() {
        let ok = (40..=80).contains(&seg.len) || (i == last && seg.len < 40);
        if !ok {
            return Err(format!("segment {i} has length {}", seg.len));
        }
    }
    Ok(format!(
        "variance {var:.4} over 1e5 draws, max |B noise| {b_max:.4}, {} segments in [40, 80]",
        series.segments.len()
    ))
}

/// Level tracker driven by a constant miss pattern for `steps` steps.
pub fn constant_stream_bound(steps: usize, err: bool) -> Check {
    let mut tracker = AlphaTracker::new(0.1, 0.005).map_err(|e| e.to_string())?;
    for _ in 0..steps {
        tracker.update(err);
    }
    let b = tracker.coverage_bound();
    if !b.holds || !b.two_sided_holds || b.lhs > b.rhs {
        return Err(format!("bound failed: {b:?}"));
    }
    Ok(format!(
        "T = {steps}, err = {err}: lhs {} <= rhs {}",
        b.lhs, b.rhs
    ))
}
