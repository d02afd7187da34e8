use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, ValueEnum};
use ldpgap::analytics::{allocated_spec, AllocationKind};
use ldpgap::mechanisms::{Budget, MechanismKind, MechanismSpec, DEFAULT_BUDGET_CAP, DEFAULT_K};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MechArg {
    R,
    L,
}

impl From<MechArg> for MechanismKind {
    fn from(m: MechArg) -> Self {
        match m {
            MechArg::R => MechanismKind::R,
            MechArg::L => MechanismKind::L,
        }
    }
}

/// Either `--eps1 --eps2 [--k]` with `--mech`, or `--eps` with `--alloc`.
#[derive(Debug, Clone, Args)]
pub struct MechArgs {
    #[arg(long, value_enum)]
    pub mech: Option<MechArg>,
    /// Group budget.
    #[arg(long, requires = "eps2", conflicts_with = "eps")]
    pub eps1: Option<f64>,
    /// Value budget.
    #[arg(long, requires = "eps1", conflicts_with = "eps")]
    pub eps2: Option<f64>,
    /// Laplace scale factor for flipped clients (L only).
    #[arg(long, default_value_t = DEFAULT_K, conflicts_with = "eps")]
    pub k: f64,
    /// Total budget, split by `--alloc`.
    #[arg(long)]
    pub eps: Option<f64>,
    /// r, l-k2, l-opt, or opt (the optimal one for `--mech`).
    #[arg(long)]
    pub alloc: Option<String>,
    /// Number of group categories.
    #[arg(long, default_value_t = 2)]
    pub groups: u32,
    /// Budgets above the cap make the matching randomized response exact.
    #[arg(long, default_value_t = DEFAULT_BUDGET_CAP)]
    pub cap: f64,
}

impl MechArgs {
    pub fn resolve(&self) -> Result<MechanismSpec> {
        let spec = match (self.eps, self.eps1, self.eps2) {
            (Some(eps), _, _) => {
                let alloc = self.allocation()?;
                if let Some(m) = self.mech {
                    if MechanismKind::from(m) != alloc.mechanism_kind() {
                        bail!("--alloc {alloc} does not match --mech {m:?}");
                    }
                }
                allocated_spec(alloc, eps)?
            }
            (None, Some(eps1), Some(eps2)) => {
                let kind = self
                    .mech
                    .ok_or_else(|| anyhow!("--eps1/--eps2 need --mech"))?;
                MechanismSpec::new(kind.into(), Budget::new(eps1, eps2, self.k)?)
            }
            _ => bail!("give either --mech with --eps1 and --eps2, or --eps with --alloc"),
        };
        let spec = MechanismSpec {
            groups: self.groups,
            cap: self.cap,
            ..spec
        };
        spec.validate()?;
        Ok(spec)
    }

    fn allocation(&self) -> Result<AllocationKind> {
        let raw = self
            .alloc
            .as_deref()
            .ok_or_else(|| anyhow!("--eps needs --alloc"))?;
        let mech = self.mech.map(MechanismKind::from);
        match (raw, mech) {
            ("opt", Some(kind)) => Ok(AllocationKind::optimal_for(kind)),
            ("k2", Some(MechanismKind::L)) => Ok(AllocationKind::LK2),
            ("opt" | "k2", _) => bail!("--alloc {raw} needs a matching --mech"),
            _ => Ok(raw.parse()?),
        }
    }
}

/// Comma-separated list.
pub fn parse_list<T: std::str::FromStr>(raw: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|e| anyhow!("bad list item {s:?}: {e}"))
        })
        .collect()
}

/// Client counts, accepting scientific notation such as `1e6`.
pub fn parse_counts(raw: &str) -> Result<Vec<u64>> {
    parse_list::<f64>(raw)?
        .into_iter()
        .map(|x| {
            if x >= 1.0 && x.fract() == 0.0 && x < u64::MAX as f64 {
                Ok(x as u64)
            } else {
                Err(anyhow!("{x} is not a positive integer count"))
            }
        })
        .collect()
}

pub fn parse_pair<T: std::str::FromStr + Copy>(raw: &str, what: &str) -> Result<[T; 2]>
where
    T::Err: std::fmt::Display,
{
    let v = parse_list::<T>(raw).with_context(|| format!("parsing {what}"))?;
    match v.as_slice() {
        [a, b] => Ok([*a, *b]),
        _ => bail!("{what} needs two comma-separated values, got {raw:?}"),
    }
}

pub fn parse_sizes(raw: &str) -> Result<[u64; 2]> {
    let v = parse_counts(raw).context("parsing --sizes")?;
    match v.as_slice() {
        [a, b] => Ok([*a, *b]),
        _ => bail!("--sizes needs nA,nB, got {raw:?}"),
    }
}

/// `min:max:step` (inclusive) or a comma-separated list.
pub fn parse_grid(raw: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = raw.split(':').collect();
    match parts.as_slice() {
        [_] => parse_list(raw),
        [lo, hi, step] => {
            let lo: f64 = lo.trim().parse().context("grid start")?;
            let hi: f64 = hi.trim().parse().context("grid end")?;
            let step: f64 = step.trim().parse().context("grid step")?;
            if !(step > 0.0) || !(hi >= lo) {
                bail!("grid {raw:?} needs start <= end and a positive step");
            }
            let n = ((hi - lo) / step + 1e-9).floor() as u64;
            // Round off representation noise such as 0.30000000000000004.
            Ok((0..=n)
                .map(|i| ((lo + i as f64 * step) * 1e12).round() / 1e12)
                .collect())
        }
        _ => bail!("grid {raw:?} must be min:max:step or a list"),
    }
}

pub fn parse_allocations(raw: &str) -> Result<Vec<AllocationKind>> {
    parse_list::<AllocationKind>(raw)
}
