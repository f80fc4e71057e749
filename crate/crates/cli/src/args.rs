use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Parser)]
#[command(name = "vips", version, about = "Differentially private variational Bayes", args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Privacy loss of repeated subsampled Gaussian releases.
    Accountant(AccountantArgs),
    /// Latent Dirichlet allocation.
    Lda(LdaArgs),
    /// Bayesian logistic regression.
    Blr(BlrArgs),
    /// Sigmoid belief network.
    Sbn(SbnArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SamplerArg {
    Fixed,
    Poisson,
}

#[derive(Debug, Clone, Args)]
pub struct AccountantArgs {
    #[arg(long)]
    pub sampling_rate: f64,
    #[arg(long)]
    pub steps: u64,
    #[arg(long, default_value_t = 1)]
    pub releases_per_step: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub delta: f64,
    #[arg(long, required_unless_present = "calibrate", conflicts_with = "calibrate")]
    pub noise_multiplier: Option<f64>,
    /// Solve for the multiplier that spends `--epsilon`.
    #[arg(long, requires = "epsilon")]
    pub calibrate: bool,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, default_value_t = vips_core::accountant::DEFAULT_MAX_ORDER)]
    pub max_order: u32,
    /// Also print a CSV header and row.
    #[arg(long)]
    pub csv: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Flags shared by the three training subcommands.
#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    #[arg(long, default_value_t = 0.0)]
    pub noise_multiplier: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub delta: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Metrics CSV path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SamplerArg::Fixed)]
    pub sampler: SamplerArg,
    #[arg(long, default_value_t = 1024.0)]
    pub tau0: f64,
    #[arg(long, default_value_t = 0.7)]
    pub kappa: f64,
    /// Evaluate the metric every this many iterations (and at the last).
    #[arg(long, default_value_t = 1)]
    pub eval_every: usize,
    #[arg(long, default_value_t = vips_core::accountant::DEFAULT_MAX_ORDER)]
    pub max_order: u32,
    /// Record wall-clock milliseconds in the metrics CSV.
    #[arg(long)]
    pub timing: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct LdaArgs {
    /// UCI bag-of-words file.
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    pub data: Option<PathBuf>,
    #[arg(long, requires = "data")]
    pub vocab: Option<PathBuf>,
    /// Planted corpus `D,V,K`.
    #[arg(long)]
    pub synthetic: Option<String>,
    #[arg(long)]
    pub topics: Option<usize>,
    #[arg(long, default_value_t = 100)]
    pub batch: usize,
    #[arg(long, default_value_t = 500)]
    pub doc_cap: usize,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    pub holdout_fraction: f64,
    /// Print the top N words of each topic to stderr.
    #[arg(long)]
    pub top_words: Option<usize>,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Clone, Args)]
pub struct BlrArgs {
    /// LIBSVM training file.
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    pub data: Option<PathBuf>,
    #[arg(long, requires = "data")]
    pub test_file: Option<PathBuf>,
    /// Planted separator data `N,d,margin`.
    #[arg(long)]
    pub synthetic: Option<String>,
    /// Trailing fraction held out when no test file is given.
    #[arg(long, default_value_t = 0.2, conflicts_with = "test_file")]
    pub test_size: f64,
    /// Mini-batch size; 0 trains on the full batch.
    #[arg(long, default_value_t = 0)]
    pub batch: usize,
    #[arg(long, default_value_t = 1.0)]
    pub a0: f64,
    #[arg(long, default_value_t = 1.0)]
    pub b0: f64,
    #[arg(long, default_value_t = vips_core::blr::DEFAULT_MC_SAMPLES)]
    pub mc_samples: usize,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SbnArgs {
    /// Dense 0/1 CSV, one image per row.
    #[arg(long, conflicts_with = "synthetic_bars", required_unless_present = "synthetic_bars")]
    pub data: Option<PathBuf>,
    /// Bars generator `JxK,N`.
    #[arg(long)]
    pub synthetic_bars: Option<String>,
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Mini-batch size; 0 trains on the full batch.
    #[arg(long, default_value_t = 100)]
    pub batch: usize,
    #[arg(long, default_value_t = vips_core::sbn::DEFAULT_SWEEPS)]
    pub sweeps: usize,
    #[arg(long, default_value_t = 0.2)]
    pub test_size: f64,
    #[command(flatten)]
    pub train: TrainArgs,
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> CliResult<()> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Usage(msg()))
    }
}

fn check_delta(delta: f64) -> CliResult<()> {
    check(delta > 0.0 && delta < 1.0, || format!("--delta must lie in (0, 1), got {delta}"))
}

fn check_fraction(name: &str, f: f64) -> CliResult<()> {
    check((0.0..1.0).contains(&f), || format!("--{name} must lie in [0, 1), got {f}"))
}

fn parse_list<T: std::str::FromStr>(flag: &str, text: &str, seps: &[char], n: usize) -> CliResult<Vec<T>> {
    let parts: Vec<&str> = text.split(|c| seps.contains(&c)).collect();
    let bad = || CliError::Usage(format!("--{flag} expects {n} comma-separated values, got `{text}`"));
    if parts.len() != n {
        return Err(bad());
    }
    parts.iter().map(|p| p.trim().parse().map_err(|_| bad())).collect()
}

/// Planted corpus size `D,V,K`.
pub fn parse_corpus_spec(text: &str) -> CliResult<(usize, usize, usize)> {
    let v = parse_list::<usize>("synthetic", text, &[','], 3)?;
    Ok((v[0], v[1], v[2]))
}

/// Planted separator `N,d,margin`.
pub fn parse_blr_spec(text: &str) -> CliResult<(usize, usize, f64)> {
    let v = parse_list::<f64>("synthetic", text, &[','], 3)?;
    check(v[0].fract() == 0.0 && v[1].fract() == 0.0 && v[0] >= 1.0 && v[1] >= 1.0, || {
        format!("--synthetic needs integer N and d, got `{text}`")
    })?;
    Ok((v[0] as usize, v[1] as usize, v[2]))
}

/// Bars generator `JxK,N`.
pub fn parse_bars_spec(text: &str) -> CliResult<(usize, usize, usize)> {
    let v = parse_list::<usize>("synthetic-bars", text, &['x', ','], 3)?;
    Ok((v[0], v[1], v[2]))
}

impl AccountantArgs {
    pub fn validate(&self) -> CliResult<()> {
        check(self.sampling_rate > 0.0 && self.sampling_rate <= 1.0, || {
            format!("--sampling-rate must lie in (0, 1], got {}", self.sampling_rate)
        })?;
        check(self.steps > 0, || "--steps must be positive".into())?;
        check(self.releases_per_step > 0, || "--releases-per-step must be positive".into())?;
        check(self.max_order > 0, || "--max-order must be positive".into())?;
        check_delta(self.delta)?;
        if let Some(z) = self.noise_multiplier {
            check(z > 0.0 && z.is_finite(), || format!("--noise-multiplier must be positive, got {z}"))?;
        }
        if let Some(e) = self.epsilon {
            check(self.calibrate, || "--epsilon is only used with --calibrate".into())?;
            check(e > 0.0 && e.is_finite(), || format!("--epsilon must be positive, got {e}"))?;
        }
        Ok(())
    }
}

impl TrainArgs {
    pub fn validate(&self) -> CliResult<()> {
        check(self.iters > 0, || "--iters must be positive".into())?;
        check(self.noise_multiplier >= 0.0 && self.noise_multiplier.is_finite(), || {
            format!("--noise-multiplier must be non-negative, got {}", self.noise_multiplier)
        })?;
        check_delta(self.delta)?;
        check(self.tau0 > 0.0, || format!("--tau0 must be positive, got {}", self.tau0))?;
        check((0.5..=1.0).contains(&self.kappa), || format!("--kappa must lie in [0.5, 1], got {}", self.kappa))?;
        check(self.eval_every > 0, || "--eval-every must be positive".into())?;
        check(self.max_order > 0, || "--max-order must be positive".into())
    }
}

impl LdaArgs {
    pub fn validate(&self) -> CliResult<()> {
        self.train.validate()?;
        check(self.batch > 0, || "--batch must be positive".into())?;
        check(self.doc_cap > 0, || "--doc-cap must be positive".into())?;
        check_fraction("holdout-fraction", self.holdout_fraction)?;
        for (name, v) in [("alpha", self.alpha), ("eta", self.eta)] {
            if let Some(v) = v {
                check(v > 0.0 && v.is_finite(), || format!("--{name} must be positive, got {v}"))?;
            }
        }
        if let Some(n) = self.top_words {
            check(n > 0, || "--top-words must be positive".into())?;
        }
        match &self.synthetic {
            Some(s) => {
                let (d, v, k) = parse_corpus_spec(s)?;
                check(d > 0 && v > 0 && k > 0, || format!("--synthetic sizes must be positive, got `{s}`"))?;
            }
            None => check(self.topics.is_some(), || "--topics is required with --data".into())?,
        }
        if let Some(k) = self.topics {
            check(k > 0, || "--topics must be positive".into())?;
        }
        Ok(())
    }
}

impl BlrArgs {
    pub fn validate(&self) -> CliResult<()> {
        self.train.validate()?;
        check(self.a0 > 0.0 && self.b0 > 0.0, || format!("--a0 and --b0 must be positive, got {}, {}", self.a0, self.b0))?;
        check(self.mc_samples > 0, || "--mc-samples must be positive".into())?;
        if self.test_file.is_none() {
            check(self.test_size > 0.0 && self.test_size < 1.0, || {
                format!("--test-size must lie in (0, 1), got {}", self.test_size)
            })?;
        }
        if let Some(s) = &self.synthetic {
            let (_, _, margin) = parse_blr_spec(s)?;
            check(margin >= 0.0 && margin.is_finite(), || format!("--synthetic margin must be non-negative, got {margin}"))?;
        }
        Ok(())
    }
}

impl SbnArgs {
    pub fn validate(&self) -> CliResult<()> {
        self.train.validate()?;
        check(self.sweeps > 0, || "--sweeps must be positive".into())?;
        check(self.test_size > 0.0 && self.test_size < 1.0, || {
            format!("--test-size must lie in (0, 1), got {}", self.test_size)
        })?;
        match &self.synthetic_bars {
            Some(s) => {
                let (j, k, n) = parse_bars_spec(s)?;
                check(j > 0 && k > 0 && n > 1, || format!("--synthetic-bars sizes must be positive, got `{s}`"))?;
                if let Some(h) = self.hidden {
                    check(h > 0, || "--hidden must be positive".into())?;
                }
            }
            None => check(self.hidden.is_some_and(|h| h > 0), || "--hidden K is required with --data".into())?,
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Result<Cli, clap::Error> {
        Cli::try_parse_from(std::iter::once("vips").chain(args.iter().copied()))
    }

    #[test]
    fn later_flags_override_earlier_ones() {
        let cli = parse(&["lda", "--synthetic", "10,5,2", "--iters", "3", "--iters", "7"]).unwrap();
        let Command::Lda(a) = cli.command else { panic!() };
        assert_eq!(a.train.iters, 7);
    }

    #[test]
    fn conflicting_sources_rejected() {
        assert!(parse(&["lda", "--synthetic", "10,5,2", "--data", "x"]).is_err());
        assert!(parse(&["sbn", "--hidden", "4"]).is_err());
        assert!(parse(&["accountant", "--sampling-rate", "0.1", "--steps", "3", "--calibrate"]).is_err());
        assert!(parse(&["accountant", "--sampling-rate", "0.1", "--steps", "3", "--noise-multiplier", "1", "--calibrate", "--epsilon", "1"]).is_err());
    }

    #[test]
    fn spec_strings() {
        assert_eq!(parse_corpus_spec("200,30,3").unwrap(), (200, 30, 3));
        assert_eq!(parse_bars_spec("16x4,1000").unwrap(), (16, 4, 1000));
        assert_eq!(parse_blr_spec("2000,10,0.5").unwrap(), (2000, 10, 0.5));
        assert!(parse_bars_spec("16,4").is_err());
        assert!(parse_blr_spec("20.5,10,0.5").is_err());
    }

    #[test]
    fn validation_catches_bad_values() {
        let cli = parse(&["lda", "--synthetic", "10,5,2", "--kappa", "0.3"]).unwrap();
        let Command::Lda(a) = cli.command else { panic!() };
        assert!(matches!(a.validate(), Err(CliError::Usage(_))));
        let cli = parse(&["sbn", "--data", "x.csv"]).unwrap();
        let Command::Sbn(a) = cli.command else { panic!() };
        assert!(a.validate().is_err());
        let cli = parse(&["lda", "--data", "x"]).unwrap();
        let Command::Lda(a) = cli.command else { panic!() };
        assert!(a.validate().is_err());
    }
}
