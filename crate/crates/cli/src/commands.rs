use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Map, Value};

use ldpgap::analytics::{
    alloc_grid, budget_table, chebyshev_alpha, mse_gap, mse_sweep, ratio_sweep, MseReport,
    PopulationProfile,
};
use ldpgap::estimation::{estimate_gap, estimator_denominator, GroupTally, Tallies};
use ldpgap::io::{unscale, write_records, write_table, RecordReader, ValueDomain};
use ldpgap::mechanisms::{
    audit_l_grid, audit_r_exact, AuditReport, MechanismKind, MechanismSpec, PerturbedRecord,
};
use ldpgap::rng::CounterRng;
use ldpgap::simulation::{
    chebyshev_comparison, generate, run_experiment, ExperimentConfig, GeneratorSpec, GroupGenerator,
};

use crate::args::{
    parse_allocations, parse_counts, parse_grid, parse_list, parse_pair, parse_sizes, MechArgs,
};
use crate::manifest::{open_input, open_output, RunManifest};
use crate::{Command, Io};

/// A config file that failed to parse or validate.
#[derive(Debug)]
struct ConfigError(String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid config: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_error(e: impl fmt::Display) -> anyhow::Error {
    ConfigError(e.to_string()).into()
}

/// 3 for invalid parameters, 2 for everything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<ldpgap::Error>() {
            return if e.is_parameter_error() { 3 } else { 2 };
        }
    }
    2
}

pub fn run(cmd: Command, manifest: Option<&Path>) -> Result<()> {
    match cmd {
        Command::Perturb {
            io,
            mech,
            seed,
            rescale,
        } => perturb(&io, &mech, seed, rescale, manifest),
        Command::Estimate {
            io,
            mech,
            sizes,
            pair,
            nu2,
            nu2_worst,
            prob,
            rescale,
        } => {
            let opts = EstimateOpts {
                sizes,
                pair,
                nu2,
                nu2_worst,
                prob,
                rescale,
            };
            estimate(&io, &mech, &opts, manifest)
        }
        Command::Budget {
            totals,
            alphas,
            prob,
            alloc,
            output,
        } => budget(&totals, &alphas, prob, &alloc, &output, manifest),
        Command::MseSweep {
            sizes,
            eps,
            alloc,
            output,
        } => {
            let sizes = parse_sizes(&sizes)?;
            let eps = parse_grid(&eps)?;
            let kinds = parse_allocations(&alloc)?;
            let rows = mse_sweep(sizes, &eps, &kinds)?;
            write_rows(&output, &rows)?;
            let config = json!({ "sizes": sizes, "eps": eps, "alloc": kinds });
            RunManifest::new("mse-sweep", config, None, &[&output])?.emit(manifest)
        }
        Command::RatioSweep {
            total,
            ratios,
            eps,
            alloc,
            output,
        } => {
            let total = *parse_counts(&total)?
                .first()
                .ok_or_else(|| anyhow!("--total is empty"))?;
            let ratios: Vec<f64> = parse_list(&ratios)?;
            let eps = parse_grid(&eps)?;
            let kinds = parse_allocations(&alloc)?;
            let mut rows = Vec::new();
            for &kind in &kinds {
                rows.extend(ratio_sweep(total, &ratios, &eps, kind)?);
            }
            write_rows(&output, &rows)?;
            let config = json!({ "total": total, "ratios": ratios, "eps": eps, "alloc": kinds });
            RunManifest::new("ratio-sweep", config, None, &[&output])?.emit(manifest)
        }
        Command::AllocGrid {
            sizes,
            eps1,
            eps2,
            k,
            output,
        } => {
            let sizes = parse_sizes(&sizes)?;
            let eps1 = parse_grid(&eps1)?;
            let eps2 = parse_grid(&eps2)?;
            let rows = alloc_grid(sizes, &eps1, &eps2, k)?;
            write_rows(&output, &rows)?;
            let config = json!({ "sizes": sizes, "eps1": eps1, "eps2": eps2, "k": k });
            RunManifest::new("alloc-grid", config, None, &[&output])?.emit(manifest)
        }
        Command::Simulate {
            config,
            output,
            per_run,
            seed,
            chebyshev,
            prob,
        } => simulate(
            &config,
            &output,
            per_run.as_deref(),
            seed,
            chebyshev.as_deref(),
            prob,
            manifest,
        ),
        Command::Audit {
            mech,
            out_range,
            grid_step,
            output,
        } => audit(&mech, out_range, grid_step, &output, manifest),
        Command::Gen {
            groups,
            spec,
            seed,
            output,
        } => gen(&groups, spec.as_deref(), seed, &output, manifest),
    }
}

fn write_rows<T: Serialize>(output: &str, rows: &[T]) -> Result<()> {
    let mut out = open_output(output)?;
    write_table(&mut out, rows)?;
    out.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(output: &str, value: &T) -> Result<()> {
    let mut out = open_output(output)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn perturb(
    io: &Io,
    mech: &MechArgs,
    seed: u64,
    rescale: bool,
    manifest: Option<&Path>,
) -> Result<()> {
    let spec = mech.resolve()?;
    let mut reader = RecordReader::new(open_input(&io.input)?, ValueDomain::input(rescale))?;
    let empty = reader.is_empty_input();
    let mut records = Vec::new();
    while let Some(rec) = reader.next() {
        let rec = rec?;
        if rec.group >= spec.groups {
            return Err(ldpgap::Error::MalformedRow {
                row: reader.line(),
                msg: format!("group {} outside 0..{}", rec.group, spec.groups),
            }
            .into());
        }
        records.push(rec);
    }
    let perturber = spec.perturber()?;
    let perturbed: Vec<PerturbedRecord> = records
        .par_iter()
        .enumerate()
        .map(|(i, rec)| perturber.perturb(rec, &mut CounterRng::for_client(seed, 0, i as u64)))
        .collect::<ldpgap::Result<_>>()?;
    log::info!("perturbed {} records", perturbed.len());

    let mut out = open_output(&io.output)?;
    if !empty {
        write_records(&mut out, &perturbed)?;
    }
    out.flush()?;
    let config = json!({ "mechanism": spec, "input": io.input, "rescale": rescale });
    RunManifest::new("perturb", config, Some(seed), &[&io.output])?.emit(manifest)
}

struct EstimateOpts {
    sizes: String,
    pair: String,
    nu2: Option<String>,
    nu2_worst: bool,
    prob: f64,
    rescale: bool,
}

#[derive(Serialize)]
struct UnitScale {
    mean_a: f64,
    mean_b: f64,
    gap: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha_upper: Option<f64>,
}

#[derive(Serialize)]
struct EstimateOutput {
    groups: [u32; 2],
    sizes: [u64; 2],
    observed_counts: [u64; 2],
    mean_a: f64,
    mean_b: f64,
    gap: f64,
    signed_diff: f64,
    mechanism: MechanismSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    mse: Option<MseReport>,
    prob: f64,
    /// Chebyshev half-width at the point MSE.
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    /// Chebyshev half-width at the worst-case MSE.
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha_upper: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    unit_scale: Option<UnitScale>,
}

fn estimate(io: &Io, mech: &MechArgs, opts: &EstimateOpts, manifest: Option<&Path>) -> Result<()> {
    let spec = mech.resolve()?;
    let sizes = parse_sizes(&opts.sizes)?;
    let pair: [u32; 2] = parse_pair(&opts.pair, "--pair")?;
    // Fail on a degenerate estimator before reading any input.
    estimator_denominator(1, &spec)?;
    chebyshev_alpha(0.0, opts.prob)?;

    let mut tallies = Tallies::new();
    tallies.insert(GroupTally::new(pair[0]));
    tallies.insert(GroupTally::new(pair[1]));
    for rec in RecordReader::new(open_input(&io.input)?, ValueDomain::Any)?.perturbed() {
        tallies.push(&rec?);
    }
    let est = estimate_gap(&tallies, pair, sizes, &spec)?;
    let count = |g: u32| tallies.get(g).map_or(0, |t| t.observed_count);

    let mse = match (&opts.nu2, opts.nu2_worst) {
        (Some(raw), _) => {
            let nu2: [f64; 2] = parse_pair(raw, "--nu2")?;
            Some(mse_gap(&PopulationProfile::from_sizes(sizes, nu2)?, &spec)?)
        }
        (None, true) => {
            let rep = mse_gap(&PopulationProfile::from_sizes(sizes, [0.0, 0.0])?, &spec)?;
            Some(MseReport {
                point: rep.upper,
                ..rep
            })
        }
        (None, false) => None,
    };
    let alpha = mse
        .map(|m| chebyshev_alpha(m.point, opts.prob))
        .transpose()?;
    let alpha_upper = mse
        .map(|m| chebyshev_alpha(m.upper, opts.prob))
        .transpose()?;
    // On [0, 1] differences halve.
    let unit_scale = opts.rescale.then(|| UnitScale {
        mean_a: unscale(est.mean_a),
        mean_b: unscale(est.mean_b),
        gap: est.gap / 2.0,
        alpha: alpha.map(|a| a / 2.0),
        alpha_upper: alpha_upper.map(|a| a / 2.0),
    });
    let out = EstimateOutput {
        groups: pair,
        sizes,
        observed_counts: [count(pair[0]), count(pair[1])],
        mean_a: est.mean_a,
        mean_b: est.mean_b,
        gap: est.gap,
        signed_diff: est.signed_diff,
        mechanism: spec,
        mse,
        prob: opts.prob,
        alpha,
        alpha_upper,
        unit_scale,
    };
    write_json(&io.output, &out)?;
    let config = json!({
        "mechanism": spec, "input": io.input, "sizes": sizes, "pair": pair,
        "nu2": opts.nu2, "nu2_worst": opts.nu2_worst, "prob": opts.prob, "rescale": opts.rescale,
    });
    RunManifest::new("estimate", config, None, &[&io.output])?.emit(manifest)
}

fn budget(
    totals: &str,
    alphas: &str,
    prob: f64,
    alloc: &str,
    output: &str,
    manifest: Option<&Path>,
) -> Result<()> {
    let totals = parse_counts(totals)?;
    let alphas: Vec<f64> = parse_list(alphas)?;
    let kinds = parse_allocations(alloc)?;
    let rows = budget_table(&totals, &alphas, prob, &kinds)?;
    let mut out = open_output(output)?;
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(["total", "alpha", "allocation", "eps"])?;
        for row in &rows {
            let s = &row.solution;
            w.write_record([
                row.total.to_string(),
                s.alpha.to_string(),
                s.allocation.to_string(),
                s.display_eps(),
            ])?;
        }
        w.flush()?;
    }
    out.flush()?;
    let config = json!({ "totals": totals, "alphas": alphas, "prob": prob, "alloc": kinds });
    RunManifest::new("budget", config, None, &[output])?.emit(manifest)
}

fn simulate(
    path: &Path,
    output: &str,
    per_run: Option<&Path>,
    seed: Option<u64>,
    chebyshev: Option<&str>,
    prob: f64,
    manifest: Option<&Path>,
) -> Result<()> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut cfg: ExperimentConfig =
        serde_json::from_reader(std::io::BufReader::new(file)).map_err(config_error)?;
    let base = path
        .parent()
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf);
    cfg.generator.load_files(&base).map_err(config_error)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if per_run.is_some() {
        cfg.outputs.per_run = true;
    }
    cfg.validate().map_err(config_error)?;

    let mut outputs = vec![output.to_string()];
    if let Some(grid) = chebyshev {
        let eps = parse_grid(grid)?;
        let rows = chebyshev_comparison(&cfg, &eps, prob)?;
        write_rows(output, &rows)?;
    } else {
        let res = run_experiment(&cfg)?;
        if cfg.outputs.summary {
            write_json(output, &res)?;
        }
        match (per_run, &res.per_run) {
            (Some(p), Some(rows)) => {
                let p = p.to_string_lossy().into_owned();
                write_rows(&p, rows)?;
                outputs.push(p);
            }
            (None, Some(_)) => {
                log::warn!("per-run estimates requested but no --per-run path given")
            }
            _ => {}
        }
    }
    let config = json!({ "experiment": cfg, "chebyshev": chebyshev, "prob": prob });
    let outputs: Vec<&str> = outputs.iter().map(String::as_str).collect();
    RunManifest::new("simulate", config, Some(cfg.seed), &outputs)?.emit(manifest)
}

#[derive(Serialize)]
struct AuditOutput {
    mechanism: MechanismSpec,
    #[serde(flatten)]
    report: AuditReport,
}

fn audit(
    mech: &MechArgs,
    out_range: f64,
    grid_step: f64,
    output: &str,
    manifest: Option<&Path>,
) -> Result<()> {
    let spec = mech.resolve()?;
    if spec.groups != 2 {
        return Err(ldpgap::Error::UncertifiedArity(spec.groups).into());
    }
    let report = match spec.kind {
        MechanismKind::R => audit_r_exact(&spec.budget)?,
        MechanismKind::L => audit_l_grid(&spec.budget, out_range, grid_step)?,
    };
    if report.tight_eps > report.claimed_eps + 1e-9 {
        log::warn!(
            "audited loss {} exceeds the claimed {}",
            report.tight_eps,
            report.claimed_eps
        );
    }
    write_json(
        output,
        &AuditOutput {
            mechanism: spec,
            report,
        },
    )?;
    let config = json!({ "mechanism": spec, "out_range": out_range, "grid_step": grid_step });
    RunManifest::new("audit", config, None, &[output])?.emit(manifest)
}

/// Parses `MODE:key=value,...` into a group generator.
fn parse_group(raw: &str) -> Result<GroupGenerator> {
    let (mode, rest) = raw.split_once(':').unwrap_or((raw, ""));
    let mut obj = Map::new();
    obj.insert("mode".into(), Value::String(mode.trim().replace('-', "_")));
    let number = |s: &str| -> Result<Value> {
        let x: f64 = s
            .trim()
            .parse()
            .with_context(|| format!("bad number {s:?}"))?;
        serde_json::Number::from_f64(x)
            .map(Value::Number)
            .ok_or_else(|| anyhow!("{x} is not finite"))
    };
    for kv in rest.split(',').filter(|s| !s.trim().is_empty()) {
        let (key, val) = kv
            .split_once('=')
            .ok_or_else(|| anyhow!("expected key=value in {kv:?}"))?;
        let key = key.trim();
        let value = match key {
            "values" | "observations" => {
                Value::Array(val.split(';').map(number).collect::<Result<_>>()?)
            }
            "n" => json!(parse_counts(val)?.first().copied().unwrap_or(0)),
            "rescale" => Value::Bool(
                val.trim()
                    .parse()
                    .context("rescale must be true or false")?,
            ),
            "file" => Value::String(val.trim().to_string()),
            _ => number(val)?,
        };
        obj.insert(key.to_string(), value);
    }
    serde_json::from_value(Value::Object(obj)).with_context(|| format!("bad --group {raw:?}"))
}

fn gen(
    groups: &[String],
    spec: Option<&Path>,
    seed: u64,
    output: &str,
    manifest: Option<&Path>,
) -> Result<()> {
    let (mut generator, base) = match spec {
        Some(p) => {
            let f = std::fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
            let g: GeneratorSpec =
                serde_json::from_reader(std::io::BufReader::new(f)).map_err(config_error)?;
            (
                g,
                p.parent()
                    .map_or_else(|| PathBuf::from("."), Path::to_path_buf),
            )
        }
        None => {
            if groups.is_empty() {
                bail!("give at least one --group");
            }
            let g = groups
                .iter()
                .map(|s| parse_group(s))
                .collect::<Result<Vec<_>>>()?;
            (GeneratorSpec::new(g), PathBuf::from("."))
        }
    };
    generator.load_files(&base)?;
    let population = generate(&generator, seed)?;
    let mut out = open_output(output)?;
    write_records(&mut out, &population)?;
    out.flush()?;
    RunManifest::new("gen", &generator, Some(seed), &[output])?.emit(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ldpgap::simulation::GroupMode;

    #[test]
    fn group_specs() {
        let g = parse_group("two_point:n=10,mean=0,nu2=1").unwrap();
        assert_eq!(g, GroupGenerator::two_point(10, 0.0, 1.0));
        let g = parse_group("fixed:values=0.1;-0.2").unwrap();
        assert_eq!(
            g.mode,
            GroupMode::Fixed {
                values: vec![0.1, -0.2]
            }
        );
        let g = parse_group("constant:n=1e3,value=0.5").unwrap();
        assert_eq!(g, GroupGenerator::constant(1000, 0.5));
        assert!(parse_group("nope:n=3").is_err());
        assert!(parse_group("constant:n=3,value").is_err());
    }

    #[test]
    fn exit_codes() {
        let param: anyhow::Error = ldpgap::Error::DegenerateBudget("x".into()).into();
        assert_eq!(exit_code(&param), 3);
        assert_eq!(exit_code(&param.context("while estimating")), 3);
        let input: anyhow::Error = ldpgap::Error::MalformedRow {
            row: 2,
            msg: "x".into(),
        }
        .into();
        assert_eq!(exit_code(&input), 2);
        assert_eq!(exit_code(&config_error("bad")), 2);
        assert_eq!(exit_code(&anyhow!("usage")), 2);
    }
}
