//! Synthetic populations and repeated end-to-end experiments.
//!
//! Client `i` in run `r` perturbs with the stream keyed by `(seed, r, i)`;
//! runs and client chunks are reduced in a fixed order, so results are
//! identical for any thread count.

use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::{
    allocated_spec, chebyshev_alpha, mse_gap, mse_gap_upper, mse_misestimated_sizes,
    AllocationKind, GroupProfile, MseReport, PopulationProfile,
};
use crate::error::{domain, Error, Result};
use crate::estimation::{estimator_denominator, CompensatedSum};
use crate::io::read_observations;
use crate::mechanisms::{ClientRecord, MechanismSpec, Perturber};
use crate::rng::{stream_key, CounterRng, GENERATION_DOMAIN};

/// Clients per work unit inside a run.
const CHUNK: usize = 4096;

/// How one group's values are produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GroupMode {
    /// `mean + s` for the first `ceil(n/2)` clients and `mean - s` for the
    /// rest, with `s = sqrt(nu2 - mean^2)`.
    TwoPoint {
        mean: f64,
        nu2: f64,
    },
    /// Draws with replacement from seed observations, given inline or read
    /// from `file` by [`GeneratorSpec::load_files`].
    Resample {
        #[serde(default)]
        observations: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        file: Option<PathBuf>,
        /// Map file values from `[0, 1]` to `[-1, 1]`.
        #[serde(default)]
        rescale: bool,
    },
    Constant {
        value: f64,
    },
    /// Exactly these values.
    Fixed {
        values: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupGenerator {
    /// Group size; optional for `fixed`, where it defaults to the value count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    #[serde(flatten)]
    pub mode: GroupMode,
}

impl GroupGenerator {
    pub fn two_point(n: u64, mean: f64, nu2: f64) -> Self {
        Self {
            n: Some(n),
            mode: GroupMode::TwoPoint { mean, nu2 },
        }
    }

    pub fn constant(n: u64, value: f64) -> Self {
        Self {
            n: Some(n),
            mode: GroupMode::Constant { value },
        }
    }

    pub fn fixed(values: Vec<f64>) -> Self {
        Self {
            n: None,
            mode: GroupMode::Fixed { values },
        }
    }

    pub fn resample(n: u64, observations: Vec<f64>) -> Self {
        Self {
            n: Some(n),
            mode: GroupMode::Resample {
                observations,
                file: None,
                rescale: false,
            },
        }
    }

    fn size(&self, idx: u32) -> Result<u64> {
        match (&self.mode, self.n) {
            (GroupMode::Fixed { values }, None) => Ok(values.len() as u64),
            (GroupMode::Fixed { values }, Some(n)) if n != values.len() as u64 => {
                Err(Error::InfeasibleGenerator(format!(
                    "group {idx}: n = {n} but {} fixed values",
                    values.len()
                )))
            }
            (_, Some(n)) => Ok(n),
            (_, None) => Err(Error::InfeasibleGenerator(format!(
                "group {idx}: missing n"
            ))),
        }
    }

    fn validate(&self, idx: u32) -> Result<()> {
        let n = self.size(idx)?;
        let bad = |msg: String| Err(Error::InfeasibleGenerator(format!("group {idx}: {msg}")));
        let in_range = |v: f64| (-1.0..=1.0).contains(&v);
        match &self.mode {
            GroupMode::TwoPoint { mean, nu2 } => {
                if !(0.0..=1.0).contains(nu2) || !in_range(*mean) {
                    return bad(format!("mean {mean}, nu2 {nu2} out of range"));
                }
                if mean * mean > nu2 + 1e-12 {
                    return bad(format!("nu2 = {nu2} below mean^2 = {}", mean * mean));
                }
                let s = (nu2 - mean * mean).max(0.0).sqrt();
                if mean.abs() + s > 1.0 + 1e-12 {
                    return bad(format!("support mean +- {s} leaves [-1, 1]"));
                }
            }
            GroupMode::Resample {
                observations, file, ..
            } => {
                if observations.is_empty() && n > 0 {
                    if file.is_some() {
                        return bad("seed file not loaded".into());
                    }
                    return Err(Error::EmptySeed(idx));
                }
                if let Some(v) = observations.iter().find(|v| !in_range(**v)) {
                    return bad(format!("seed value {v} outside [-1, 1]"));
                }
            }
            GroupMode::Constant { value } => {
                if !in_range(*value) {
                    return bad(format!("value {value} outside [-1, 1]"));
                }
            }
            GroupMode::Fixed { values } => {
                if let Some(v) = values.iter().find(|v| !in_range(**v)) {
                    return bad(format!("value {v} outside [-1, 1]"));
                }
            }
        }
        Ok(())
    }
}

/// Per-group generators; entry `i` produces the clients of group `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub groups: Vec<GroupGenerator>,
}

impl GeneratorSpec {
    pub fn new(groups: Vec<GroupGenerator>) -> Self {
        Self { groups }
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() {
            return Err(Error::InfeasibleGenerator("no groups".into()));
        }
        for (i, g) in self.groups.iter().enumerate() {
            g.validate(i as u32)?;
        }
        Ok(())
    }

    pub fn sizes(&self) -> Result<Vec<u64>> {
        self.groups
            .iter()
            .enumerate()
            .map(|(i, g)| g.size(i as u32))
            .collect()
    }

    /// Reads every `resample` seed file, resolving relative paths against `base`.
    ///
    /// A file with a `group` column contributes only the rows of the group
    /// whose generator names it.
    pub fn load_files(&mut self, base: &Path) -> Result<()> {
        for (i, g) in self.groups.iter_mut().enumerate() {
            if let GroupMode::Resample {
                observations,
                file: Some(file),
                rescale,
            } = &mut g.mode
            {
                let path = if file.is_absolute() {
                    file.clone()
                } else {
                    base.join(&*file)
                };
                let f = std::fs::File::open(&path)?;
                *observations = read_observations(f, Some(i as u32), *rescale)?;
                if observations.is_empty() {
                    return Err(Error::EmptySeed(i as u32));
                }
            }
        }
        Ok(())
    }
}

/// Builds the population, group 0 first. Only `resample` consumes randomness,
/// from a stream per group that no experiment run uses.
pub fn generate(spec: &GeneratorSpec, seed: u64) -> Result<Vec<ClientRecord>> {
    spec.validate()?;
    let sizes = spec.sizes()?;
    let mut out = Vec::with_capacity(sizes.iter().sum::<u64>() as usize);
    for (i, (g, &n)) in spec.groups.iter().zip(&sizes).enumerate() {
        let group = i as u32;
        let n = n as usize;
        match &g.mode {
            GroupMode::TwoPoint { mean, nu2 } => {
                let s = (nu2 - mean * mean).max(0.0).sqrt();
                let hi = (mean + s).clamp(-1.0, 1.0);
                let lo = (mean - s).clamp(-1.0, 1.0);
                let n_hi = n.div_ceil(2);
                out.extend((0..n).map(|j| ClientRecord {
                    group,
                    value: if j < n_hi { hi } else { lo },
                }));
            }
            GroupMode::Resample { observations, .. } => {
                let mut rng =
                    CounterRng::new(stream_key(seed, GENERATION_DOMAIN, u64::from(group)));
                out.extend((0..n).map(|_| ClientRecord {
                    group,
                    value: observations[rng.gen_range(0..observations.len())],
                }));
            }
            GroupMode::Constant { value } => {
                out.extend((0..n).map(|_| ClientRecord {
                    group,
                    value: *value,
                }));
            }
            GroupMode::Fixed { values } => {
                out.extend(values.iter().map(|&value| ClientRecord { group, value }));
            }
        }
    }
    Ok(out)
}

/// Exact profile of groups 0 and 1 of a population.
pub fn population_profile(records: &[ClientRecord]) -> Result<PopulationProfile> {
    let values = |g: u32| -> Vec<f64> {
        records
            .iter()
            .filter(|r| r.group == g)
            .map(|r| r.value)
            .collect()
    };
    PopulationProfile::new(
        GroupProfile::from_values(&values(0))?,
        GroupProfile::from_values(&values(1))?,
    )
}

/// Mechanism given explicitly or as a total budget and an allocation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MechanismConfig {
    Allocated { alloc: AllocationKind, eps: f64 },
    Explicit(MechanismSpec),
}

impl MechanismConfig {
    pub fn resolve(&self) -> Result<MechanismSpec> {
        let spec = match *self {
            MechanismConfig::Allocated { alloc, eps } => allocated_spec(alloc, eps)?,
            MechanismConfig::Explicit(spec) => spec,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<MechanismSpec> for MechanismConfig {
    fn from(spec: MechanismSpec) -> Self {
        MechanismConfig::Explicit(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputFlags {
    /// Keep the estimates of every run.
    #[serde(default)]
    pub per_run: bool,
    #[serde(default = "yes")]
    pub summary: bool,
}

fn yes() -> bool {
    true
}

impl Default for OutputFlags {
    fn default() -> Self {
        Self {
            per_run: false,
            summary: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub generator: GeneratorSpec,
    pub mechanism: MechanismConfig,
    pub runs: u64,
    #[serde(default)]
    pub seed: u64,
    /// Sizes the estimator divides by, when they differ from the true ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claimed_sizes: Option<[u64; 2]>,
    #[serde(default)]
    pub outputs: OutputFlags,
}

impl ExperimentConfig {
    pub fn new(
        generator: GeneratorSpec,
        mechanism: impl Into<MechanismConfig>,
        runs: u64,
        seed: u64,
    ) -> Self {
        Self {
            generator,
            mechanism: mechanism.into(),
            runs,
            seed,
            claimed_sizes: None,
            outputs: OutputFlags::default(),
        }
    }

    pub fn validate(&self) -> Result<MechanismSpec> {
        if self.runs == 0 {
            return Err(domain("runs must be at least 1"));
        }
        self.generator.validate()?;
        if self.generator.groups.len() != 2 {
            return Err(Error::InfeasibleGenerator(format!(
                "experiments need exactly 2 groups, got {}",
                self.generator.groups.len()
            )));
        }
        if let Some(c) = self.claimed_sizes {
            if c.contains(&0) {
                return Err(domain("claimed sizes must be positive"));
            }
        }
        let spec = self.mechanism.resolve()?;
        spec.claimed_epsilon()?;
        Ok(spec)
    }
}

/// Group estimates of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunEstimate {
    pub run: u64,
    pub mean_a: f64,
    pub mean_b: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub mechanism: MechanismSpec,
    pub runs: u64,
    pub seed: u64,
    pub sizes: [u64; 2],
    pub claimed_sizes: [u64; 2],
    pub true_means: [f64; 2],
    pub nu2: [f64; 2],
    /// `|m_A - m_B|`.
    pub true_gap: f64,
    /// `m_A - m_B`.
    pub true_diff: f64,
    /// Mean of `((m^_A - m^_B) - (m_A - m_B))^2` over runs.
    pub empirical_mse: f64,
    pub mse_se: f64,
    /// Mean of `(m^_A - m^_B) - (m_A - m_B)`.
    pub empirical_bias: f64,
    pub bias_se: f64,
    /// Covariance of the two group estimators, centered at their expectations.
    pub empirical_group_cov: f64,
    pub cov_se: f64,
    /// Closed-form MSE at the population's exact `nu2`.
    pub theoretical_mse: f64,
    pub theoretical: MseReport,
    /// Mean of `|gap^ - true_gap|`.
    pub mean_abs_error: f64,
    pub sd_abs_error: f64,
    /// Standard errors are 0 when `runs = 1`.
    #[serde(skip)]
    pub per_run: Option<Vec<RunEstimate>>,
}

/// Generates the population and runs the experiment on it.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let population = generate(&cfg.generator, cfg.seed)?;
    run_on_population(cfg, &population)
}

fn chunk_sums(
    chunk: &[ClientRecord],
    offset: u64,
    perturber: &Perturber,
    seed: u64,
    run: u64,
) -> Result<[CompensatedSum; 2]> {
    let mut sums = [CompensatedSum::default(); 2];
    for (j, rec) in chunk.iter().enumerate() {
        let mut rng = CounterRng::for_client(seed, run, offset + j as u64);
        let out = perturber.perturb(rec, &mut rng)?;
        if let Some(s) = sums.get_mut(out.group as usize) {
            s.add(out.value);
        }
    }
    Ok(sums)
}

fn run_sums(
    population: &[ClientRecord],
    perturber: &Perturber,
    seed: u64,
    run: u64,
) -> Result<[f64; 2]> {
    let sums = if population.len() <= CHUNK {
        chunk_sums(population, 0, perturber, seed, run)?
    } else {
        let parts: Vec<[CompensatedSum; 2]> = population
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(c, chunk)| chunk_sums(chunk, (c * CHUNK) as u64, perturber, seed, run))
            .collect::<Result<_>>()?;
        let mut total = [CompensatedSum::default(); 2];
        for p in &parts {
            total[0].merge(&p[0]);
            total[1].merge(&p[1]);
        }
        total
    };
    Ok([sums[0].value(), sums[1].value()])
}

#[derive(Default)]
struct Moments {
    sum: CompensatedSum,
    sq: CompensatedSum,
    n: u64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.sum.add(x);
        self.sq.add(x * x);
        self.n += 1;
    }

    fn mean(&self) -> f64 {
        self.sum.value() / self.n as f64
    }

    /// Sample standard deviation, 0 for a single observation.
    fn sd(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let n = self.n as f64;
        let m = self.mean();
        ((self.sq.value() - n * m * m).max(0.0) / (n - 1.0)).sqrt()
    }

    fn se(&self) -> f64 {
        self.sd() / (self.n as f64).sqrt()
    }
}

/// Runs the experiment on a given population of groups 0 and 1.
pub fn run_on_population(
    cfg: &ExperimentConfig,
    population: &[ClientRecord],
) -> Result<ExperimentResult> {
    let mech = cfg.validate()?;
    let profile = population_profile(population)?;
    let sizes = profile.sizes();
    let claimed = cfg.claimed_sizes.unwrap_or(sizes);
    let true_means = [
        profile.groups[0].mean.unwrap_or(0.0),
        profile.groups[1].mean.unwrap_or(0.0),
    ];
    let true_diff = true_means[0] - true_means[1];
    let true_gap = true_diff.abs();
    let denom = [
        estimator_denominator(claimed[0], &mech)?,
        estimator_denominator(claimed[1], &mech)?,
    ];
    // Expected estimates; they differ from the true means when sizes are misstated.
    let expected = [
        true_means[0] * sizes[0] as f64 / claimed[0] as f64,
        true_means[1] * sizes[1] as f64 / claimed[1] as f64,
    ];

    let perturber = mech.perturber()?;
    let seed = cfg.seed;
    let estimates: Vec<[f64; 2]> = (0..cfg.runs)
        .into_par_iter()
        .map(|run| {
            let s = run_sums(population, &perturber, seed, run)?;
            Ok([s[0] / denom[0], s[1] / denom[1]])
        })
        .collect::<Result<_>>()?;

    let mut err = Moments::default();
    let mut cov = Moments::default();
    let mut abs = Moments::default();
    for m in &estimates {
        err.push((m[0] - m[1]) - true_diff);
        cov.push((m[0] - expected[0]) * (m[1] - expected[1]));
        abs.push(((m[0] - m[1]).abs() - true_gap).abs());
    }
    let bias = err.mean();
    // Two-pass so that mse >= bias^2 holds exactly.
    let mut centered = CompensatedSum::default();
    let mut sq_err = Moments::default();
    for m in &estimates {
        let e = (m[0] - m[1]) - true_diff;
        centered.add((e - bias) * (e - bias));
        sq_err.push(e * e);
    }
    let empirical_mse = centered.value() / cfg.runs as f64 + bias * bias;

    let theoretical = match cfg.claimed_sizes {
        Some(c) if c != sizes => {
            mse_misestimated_sizes(&profile, &mech, [c[0] as f64, c[1] as f64])?
        }
        _ => mse_gap(&profile, &mech)?,
    };

    let per_run = cfg.outputs.per_run.then(|| {
        estimates
            .iter()
            .enumerate()
            .map(|(run, m)| RunEstimate {
                run: run as u64,
                mean_a: m[0],
                mean_b: m[1],
                gap: (m[0] - m[1]).abs(),
            })
            .collect()
    });

    Ok(ExperimentResult {
        mechanism: mech,
        runs: cfg.runs,
        seed,
        sizes,
        claimed_sizes: claimed,
        true_means,
        nu2: [profile.groups[0].nu2, profile.groups[1].nu2],
        true_gap,
        true_diff,
        empirical_mse,
        mse_se: sq_err.se(),
        empirical_bias: bias,
        bias_se: err.se(),
        empirical_group_cov: cov.mean(),
        cov_se: cov.se(),
        theoretical_mse: theoretical.point,
        theoretical,
        mean_abs_error: abs.mean(),
        sd_abs_error: abs.sd(),
        per_run,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChebyshevRow {
    pub eps: f64,
    pub allocation: AllocationKind,
    pub mean_abs_error: f64,
    pub sd_abs_error: f64,
    /// Chebyshev half-width from the worst-case MSE.
    pub alpha: f64,
}

/// Empirical mean absolute error next to the Chebyshev `alpha` for each total
/// budget, using the optimal allocation of the configured mechanism kind.
pub fn chebyshev_comparison(
    cfg: &ExperimentConfig,
    eps_list: &[f64],
    prob: f64,
) -> Result<Vec<ChebyshevRow>> {
    let kind = cfg.validate()?.kind;
    let allocation = AllocationKind::optimal_for(kind);
    let population = generate(&cfg.generator, cfg.seed)?;
    let sizes = population_profile(&population)?.sizes();
    eps_list
        .iter()
        .map(|&eps| {
            let run_cfg = ExperimentConfig {
                mechanism: MechanismConfig::Allocated {
                    alloc: allocation,
                    eps,
                },
                outputs: OutputFlags {
                    per_run: false,
                    summary: true,
                },
                ..cfg.clone()
            };
            let res = run_on_population(&run_cfg, &population)?;
            let alpha = chebyshev_alpha(mse_gap_upper(sizes, &res.mechanism)?, prob)?;
            Ok(ChebyshevRow {
                eps,
                allocation,
                mean_abs_error: res.mean_abs_error,
                sd_abs_error: res.sd_abs_error,
                alpha,
            })
        })
        .collect()
}
