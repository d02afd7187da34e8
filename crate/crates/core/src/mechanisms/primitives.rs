//! Randomization primitives shared by both composed mechanisms.

use rand::distributions::Open01;
use rand::Rng;

use crate::error::{domain, Result};

/// Keep probability of generalized randomized response over `d` categories:
/// `e^eps / (e^eps + d - 1)`.
///
/// `eps = +inf` yields 1.
pub fn grr_keep_prob(eps: f64, d: u32) -> Result<f64> {
    if eps.is_nan() || eps < 0.0 {
        return Err(domain(format!("GRR budget must be >= 0, got {eps}")));
    }
    if d < 2 {
        return Err(domain(format!("GRR needs at least 2 categories, got {d}")));
    }
    // Written with e^-eps so that large budgets do not overflow.
    Ok(1.0 / (1.0 + f64::from(d - 1) * (-eps).exp()))
}

/// Generalized randomized response: keeps `x` with probability `a`, otherwise
/// reports one of the other `d - 1` categories uniformly at random.
///
/// Consumes exactly one uniform draw.
pub fn grr_perturb<R: Rng + ?Sized>(x: u32, d: u32, a: f64, rng: &mut R) -> Result<u32> {
    if d < 2 {
        return Err(domain(format!("GRR needs at least 2 categories, got {d}")));
    }
    if x >= d {
        return Err(domain(format!("category {x} outside 0..{d}")));
    }
    if !(a >= 1.0 / f64::from(d) - 1e-15 && a <= 1.0) {
        return Err(domain(format!(
            "GRR keep probability {a} outside [1/{d}, 1]"
        )));
    }
    let u: f64 = rng.gen();
    if u < a {
        return Ok(x);
    }
    // Reuse the residual of the same uniform to pick among the other categories.
    let others = d - 1;
    let r = ((u - a) / (1.0 - a) * f64::from(others)) as u32;
    let r = r.min(others - 1);
    Ok(if r >= x { r + 1 } else { r })
}

/// Harmony discretization: returns `true` with probability `(1 + v) / 2`, so
/// that `2B - 1` has expectation `v`.
pub fn harmony_discretize<R: Rng + ?Sized>(v: f64, rng: &mut R) -> Result<bool> {
    if !(-1.0..=1.0).contains(&v) {
        return Err(domain(format!("value {v} outside [-1, 1]")));
    }
    let u: f64 = rng.gen();
    Ok(u < (1.0 + v) / 2.0)
}

/// Sample from a zero-mean Laplace distribution by inverting its CDF at one
/// open-interval uniform draw.
pub fn laplace_sample<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> Result<f64> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(domain(format!(
            "Laplace scale must be positive, got {scale}"
        )));
    }
    let u: f64 = rng.sample(Open01);
    let centered = u - 0.5;
    Ok(-scale * centered.signum() * (-2.0 * centered.abs()).ln_1p())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;

    const DRAWS: u64 = 1_000_000;

    fn within_sigmas(freq: f64, p: f64, n: u64, k: f64) -> bool {
        let sd = (p * (1.0 - p) / n as f64).sqrt();
        (freq - p).abs() <= k * sd.max(1e-12)
    }

    #[test]
    fn keep_prob_examples() {
        assert_eq!(grr_keep_prob(0.0, 2).unwrap(), 0.5);
        assert!((grr_keep_prob(3f64.ln(), 2).unwrap() - 0.75).abs() < 1e-15);
        // e / (e + 1)
        let direct = 1f64.exp() / (1f64.exp() + 1.0);
        assert!((grr_keep_prob(1.0, 2).unwrap() - direct).abs() < 1e-15);
        assert!((grr_keep_prob(1.0, 2).unwrap() - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert_eq!(grr_keep_prob(f64::INFINITY, 2).unwrap(), 1.0);
        assert_eq!(grr_keep_prob(0.0, 5).unwrap(), 0.2);
    }

    #[test]
    fn keep_prob_errors() {
        assert!(grr_keep_prob(-0.1, 2).is_err());
        assert!(grr_keep_prob(f64::NAN, 2).is_err());
        assert!(grr_keep_prob(1.0, 1).is_err());
    }

    #[test]
    fn keep_prob_monotone() {
        let mut prev = grr_keep_prob(0.0, 3).unwrap();
        for i in 1..200 {
            let a = grr_keep_prob(f64::from(i) * 0.05, 3).unwrap();
            assert!(a > prev && a < 1.0);
            prev = a;
        }
    }

    #[test]
    fn keep_prob_matches_empirical_keep_frequency() {
        let a = grr_keep_prob(1.0, 2).unwrap();
        let kept = (0..DRAWS)
            .filter(|&i| grr_perturb(0, 2, a, &mut CounterRng::for_client(3, 0, i)).unwrap() == 0)
            .count();
        assert!(within_sigmas(
            kept as f64 / DRAWS as f64,
            0.731_058,
            DRAWS,
            4.0
        ));
    }

    #[test]
    fn grr_identity_and_uniform() {
        let mut rng = CounterRng::new(1);
        for _ in 0..1000 {
            assert_eq!(grr_perturb(1, 2, 1.0, &mut rng).unwrap(), 1);
        }
        let zeros = (0..DRAWS)
            .filter(|&i| grr_perturb(0, 2, 0.5, &mut CounterRng::for_client(5, 0, i)).unwrap() == 0)
            .count();
        assert!(within_sigmas(zeros as f64 / DRAWS as f64, 0.5, DRAWS, 3.0));
    }

    #[test]
    fn grr_four_categories() {
        let mut counts = [0u64; 4];
        for i in 0..DRAWS {
            let y = grr_perturb(2, 4, 0.7, &mut CounterRng::for_client(9, 1, i)).unwrap();
            counts[y as usize] += 1;
        }
        for (c, &count) in counts.iter().enumerate() {
            let p = if c == 2 { 0.7 } else { 0.1 };
            assert!(
                within_sigmas(count as f64 / DRAWS as f64, p, DRAWS, 3.0),
                "category {c}: {count}"
            );
        }
    }

    #[test]
    fn grr_invalid_arguments() {
        let mut rng = CounterRng::new(0);
        assert!(grr_perturb(2, 2, 0.7, &mut rng).is_err());
        assert!(grr_perturb(0, 2, 0.4, &mut rng).is_err());
        assert!(grr_perturb(0, 2, 1.1, &mut rng).is_err());
        assert!(grr_perturb(0, 1, 1.0, &mut rng).is_err());
    }

    #[test]
    fn harmony_extremes_and_half() {
        let mut rng = CounterRng::new(2);
        for _ in 0..1000 {
            assert!(harmony_discretize(1.0, &mut rng).unwrap());
            assert!(!harmony_discretize(-1.0, &mut rng).unwrap());
        }
        let ones = (0..DRAWS)
            .filter(|&i| harmony_discretize(0.5, &mut CounterRng::for_client(4, 0, i)).unwrap())
            .count();
        assert!(within_sigmas(ones as f64 / DRAWS as f64, 0.75, DRAWS, 3.0));
        assert!(harmony_discretize(1.5, &mut rng).is_err());
    }

    #[test]
    fn harmony_is_unbiased_on_grid() {
        for (j, &v) in [-1.0, -0.5, 0.0, 0.5, 1.0].iter().enumerate() {
            let sum: f64 = (0..DRAWS)
                .map(|i| {
                    let b =
                        harmony_discretize(v, &mut CounterRng::for_client(6, j as u64, i)).unwrap();
                    if b {
                        1.0
                    } else {
                        -1.0
                    }
                })
                .sum();
            let mean = sum / DRAWS as f64;
            let se = ((1.0 - v * v) / DRAWS as f64).sqrt();
            assert!((mean - v).abs() <= 4.0 * se.max(1e-12), "v={v}: {mean}");
        }
    }

    fn laplace_moments(scale: f64, seed: u64) -> (f64, f64) {
        let xs: Vec<f64> = (0..DRAWS)
            .map(|i| laplace_sample(scale, &mut CounterRng::for_client(seed, 0, i)).unwrap())
            .collect();
        let mean = xs.iter().sum::<f64>() / DRAWS as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (DRAWS - 1) as f64;
        (mean, var)
    }

    #[test]
    fn laplace_unit_scale_moments() {
        let (mean, var) = laplace_moments(1.0, 10);
        // Var = 2, fourth central moment 24 => sd of sample variance sqrt((24 - 4)/n).
        assert!(mean.abs() <= 3.0 * (2.0 / DRAWS as f64).sqrt(), "{mean}");
        assert!(
            (var - 2.0).abs() <= 3.0 * (20.0 / DRAWS as f64).sqrt(),
            "{var}"
        );
    }

    #[test]
    fn laplace_value_scale_moments() {
        // eps2 = 2, scale 2/eps2 = 1 -> variance 2.
        let (_, var) = laplace_moments(2.0 / 2.0, 11);
        assert!(
            (var - 2.0).abs() <= 3.0 * (20.0 / DRAWS as f64).sqrt(),
            "{var}"
        );
    }

    #[test]
    fn laplace_is_deterministic_per_stream_state() {
        let a = laplace_sample(0.7, &mut CounterRng::for_client(1, 2, 3)).unwrap();
        let b = laplace_sample(0.7, &mut CounterRng::for_client(1, 2, 3)).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(laplace_sample(0.0, &mut CounterRng::new(0)).is_err());
        assert!(laplace_sample(-1.0, &mut CounterRng::new(0)).is_err());
    }
}
