//! Orchestration: loaders, training loop, metrics file and the summary line.

use std::cell::RefCell;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::Path;

use clap::error::ErrorKind;
use clap::Parser;
use vips_core::accountant::{
    accountant_epsilon, calibrate_noise_multiplier, MechanismSpec, MomentOrders, PrivacyParams,
};
use vips_core::blr::{auc, BlrDataset, BlrModel};
use vips_core::ce_vb::{run_vips, Metric, SamplerMode, StepSchedule, TrainTrace, VipsConfig, VipsModel};
use vips_core::lda::LdaModel;
use vips_core::rng::{child_rng, Stream};
use vips_core::sbn::{SbnData, SbnModel, DEFAULT_THRESHOLD};
use vips_core::VipsError;

use crate::args::{
    parse_bars_spec, parse_blr_spec, parse_corpus_spec, AccountantArgs, BlrArgs, Cli, Command, LdaArgs, SamplerArg,
    SbnArgs, TrainArgs,
};
use crate::config::expand_config;
use crate::data::{load_binary_csv, load_bow, load_libsvm, load_libsvm_like, load_vocab};
use crate::error::{CliError, CliResult};
use crate::synth::{synth_bars, synth_blr, synth_corpus};

/// Parses `args` (including the program name), runs, and returns the exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match expand_config(args) {
        Ok(args) => args,
        Err(e) => return report(e, err),
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = write!(out, "{}", e.render());
            return 0;
        }
        Err(e) => return report(CliError::Usage(e.render().to_string().trim_end().to_string()), err),
    };
    match run(&cli, out, err) {
        Ok(()) => 0,
        Err(e) => report(e, err),
    }
}

fn report(e: CliError, err: &mut dyn Write) -> i32 {
    let _ = writeln!(err, "error[{}]: {e}", e.category());
    e.exit_code()
}

pub fn run(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    match &cli.command {
        Command::Accountant(a) => run_accountant(a, out),
        Command::Lda(a) => run_lda(a, out, err),
        Command::Blr(a) => run_blr(a, out, err),
        Command::Sbn(a) => run_sbn(a, out, err),
    }
}

fn io_out(e: std::io::Error) -> CliError {
    CliError::io(Path::new("<stdout>"), e)
}

fn print_summary(out: &mut dyn Write, epsilon: f64, delta: f64) -> CliResult<()> {
    writeln!(out, "epsilon={epsilon} delta={delta}").map_err(io_out)
}

fn run_accountant(a: &AccountantArgs, out: &mut dyn Write) -> CliResult<()> {
    a.validate()?;
    let orders = MomentOrders::up_to(a.max_order)?;
    let releases = a
        .steps
        .checked_mul(a.releases_per_step)
        .ok_or_else(|| CliError::Usage("--steps times --releases-per-step overflows".into()))?;
    let (sigma, epsilon) = if a.calibrate {
        let target = PrivacyParams::new(a.epsilon.expect("clap enforces --epsilon"), a.delta)?;
        let z = calibrate_noise_multiplier(a.sampling_rate, a.steps, a.releases_per_step, target, &orders)?;
        writeln!(out, "sigma={z}").map_err(io_out)?;
        (z, accountant_epsilon(MechanismSpec::new(z, a.sampling_rate)?, releases, a.delta, &orders)?)
    } else {
        let z = a.noise_multiplier.expect("clap enforces --noise-multiplier");
        (z, accountant_epsilon(MechanismSpec::new(z, a.sampling_rate)?, releases, a.delta, &orders)?)
    };
    if a.csv {
        writeln!(out, "sampling_rate,noise_multiplier,steps,releases_per_step,delta,epsilon").map_err(io_out)?;
        writeln!(out, "{},{sigma},{},{},{},{epsilon}", a.sampling_rate, a.steps, a.releases_per_step, a.delta)
            .map_err(io_out)?;
    }
    print_summary(out, epsilon, a.delta)
}

fn vips_config(t: &TrainArgs, batch: usize, full_batch: bool) -> CliResult<VipsConfig> {
    let mut cfg = VipsConfig::new(batch, t.iters, t.noise_multiplier, t.seed);
    cfg.delta = t.delta;
    cfg.schedule = if full_batch { StepSchedule::batch() } else { StepSchedule::new(t.tau0, t.kappa)? };
    cfg.sampler = match t.sampler {
        SamplerArg::Fixed => SamplerMode::Fixed,
        SamplerArg::Poisson => SamplerMode::Poisson,
    };
    cfg.orders = MomentOrders::up_to(t.max_order)?;
    cfg.timing = t.timing;
    Ok(cfg)
}

/// Runs training with a fallible metric evaluated every `eval_every` iterations.
fn train<M: VipsModel>(
    model: &mut M,
    data: &M::Data,
    cfg: &VipsConfig,
    eval_every: usize,
    name: &str,
    mut metric: impl FnMut(&M) -> vips_core::Result<f64>,
) -> CliResult<(TrainTrace, f64)> {
    let failure: RefCell<Option<VipsError>> = RefCell::new(None);
    let mut iter = 0usize;
    let outcome = run_vips(model, data, cfg, |m| {
        iter += 1;
        if failure.borrow().is_some() || (iter % eval_every != 0 && iter != cfg.iterations) {
            return None;
        }
        match metric(m) {
            Ok(value) => Some(Metric { name: name.to_string(), value }),
            Err(e) => {
                *failure.borrow_mut() = Some(e);
                None
            }
        }
    })?;
    if let Some(e) = failure.into_inner() {
        return Err(e.into());
    }
    Ok((outcome.trace, outcome.final_epsilon))
}

fn write_trace(trace: &TrainTrace, path: Option<&Path>) -> CliResult<()> {
    let Some(path) = path else { return Ok(()) };
    let mut buf = Vec::new();
    trace.write_csv(&mut buf).map_err(|e| CliError::io(path, e))?;
    fs::write(path, buf).map_err(|e| CliError::io(path, e))
}

fn check_batch(batch: usize, records: usize) -> CliResult<()> {
    if batch > records {
        return Err(CliError::Usage(format!("--batch {batch} exceeds the {records} training records")));
    }
    Ok(())
}

fn run_lda(a: &LdaArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    a.validate()?;
    let t = &a.train;
    let (corpus, planted_k) = match (&a.synthetic, &a.data) {
        (Some(s), _) => {
            let (d, v, k) = parse_corpus_spec(s)?;
            (synth_corpus(d, v, k, t.seed)?, Some(k))
        }
        (None, Some(path)) => (load_bow(path)?, None),
        (None, None) => unreachable!("clap requires a data source"),
    };
    let vocab = match &a.vocab {
        Some(path) => {
            let v = load_vocab(path)?;
            if v.len() != corpus.vocab_size {
                return Err(CliError::Usage(format!(
                    "vocabulary file has {} terms, corpus declares {}",
                    v.len(),
                    corpus.vocab_size
                )));
            }
            Some(v)
        }
        None => None,
    };
    let topics = a.topics.or(planted_k).expect("validated");
    let (train_set, test_set) = corpus.split_holdout(a.holdout_fraction)?;
    if train_set.docs.is_empty() {
        return Err(CliError::Usage("no training documents after the holdout split".into()));
    }
    check_batch(a.batch, train_set.docs.len())?;
    let train_set = train_set.truncated(a.doc_cap, t.seed);
    let prior = 1.0 / topics as f64;
    let mut model =
        LdaModel::new(topics, corpus.vocab_size, a.alpha.unwrap_or(prior), a.eta.unwrap_or(prior), a.doc_cap, t.seed)?;
    let cfg = vips_config(t, a.batch, false)?;
    let heldout = test_set.num_tokens() > 0;
    let weight = test_set.docs.len() as f64 / train_set.docs.len() as f64;
    let (name, eval_docs, eval_weight) =
        if heldout { ("heldout_perplexity", &test_set.docs, weight) } else { ("train_perplexity", &train_set.docs, 1.0) };
    let (trace, epsilon) =
        train(&mut model, &train_set, &cfg, t.eval_every, name, |m| m.perplexity_bound(eval_docs, eval_weight))?;
    write_trace(&trace, t.out.as_deref())?;
    if let Some(n) = a.top_words {
        for k in 0..topics {
            let words: Vec<String> = model
                .top_words(k, n)
                .into_iter()
                .map(|w| vocab.as_ref().map_or_else(|| w.to_string(), |v| v[w].clone()))
                .collect();
            let _ = writeln!(err, "topic {k}: {}", words.join(" "));
        }
    }
    print_summary(out, epsilon, t.delta)
}

fn split_tail(n: usize, fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let n_test = ((n as f64 * fraction).round() as usize).min(n.saturating_sub(1));
    ((0..n - n_test).collect(), (n - n_test..n).collect())
}

fn run_blr(a: &BlrArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    a.validate()?;
    let t = &a.train;
    let (train_set, test_set): (BlrDataset, BlrDataset) = match (&a.synthetic, &a.data) {
        (Some(s), _) => {
            let (n, d, margin) = parse_blr_spec(s)?;
            let all = synth_blr(n, d, margin, t.seed)?;
            let (tr, te) = split_tail(all.len(), a.test_size);
            (all.subset(&tr), all.subset(&te))
        }
        (None, Some(path)) => {
            let loaded = load_libsvm(path)?;
            if loaded.scale != 1.0 {
                let _ = writeln!(err, "scaled inputs by 1/{} to fit the unit ball", loaded.scale);
            }
            match &a.test_file {
                Some(tp) => {
                    let test = load_libsvm_like(tp, loaded.data.dim(), loaded.scale)?;
                    (loaded.data, test.data)
                }
                None => {
                    let (tr, te) = split_tail(loaded.data.len(), a.test_size);
                    (loaded.data.subset(&tr), loaded.data.subset(&te))
                }
            }
        }
        (None, None) => unreachable!("clap requires a data source"),
    };
    if test_set.is_empty() {
        return Err(CliError::Usage("held-out set is empty".into()));
    }
    check_batch(a.batch, train_set.len())?;
    let full = a.batch == 0;
    let batch = if full { train_set.len() } else { a.batch };
    let cfg = vips_config(t, batch, full)?;
    let mut model = BlrModel::new(train_set.dim(), a.a0, a.b0)?;
    let mut rng = child_rng(t.seed, Stream::Prediction);
    let (trace, epsilon) = train(&mut model, &train_set, &cfg, t.eval_every, "test_auc", |m| {
        let scores = m.predict_many(test_set.inputs(), a.mc_samples, &mut rng)?;
        auc(&scores, test_set.labels())
    })?;
    write_trace(&trace, t.out.as_deref())?;
    print_summary(out, epsilon, t.delta)
}

fn run_sbn(a: &SbnArgs, out: &mut dyn Write, _err: &mut dyn Write) -> CliResult<()> {
    a.validate()?;
    let t = &a.train;
    let (data, planted_k): (SbnData, Option<usize>) = match (&a.synthetic_bars, &a.data) {
        (Some(s), _) => {
            let (j, k, n) = parse_bars_spec(s)?;
            (synth_bars(j, k, n, t.seed)?, Some(k))
        }
        (None, Some(path)) => (load_binary_csv(path)?, None),
        (None, None) => unreachable!("clap requires a data source"),
    };
    let hidden = a.hidden.or(planted_k).expect("validated");
    let (tr, te) = split_tail(data.len(), a.test_size);
    let (train_set, test_set) = (data.subset(&tr), data.subset(&te));
    check_batch(a.batch, train_set.len())?;
    let full = a.batch == 0;
    let batch = if full { train_set.len() } else { a.batch };
    let cfg = vips_config(t, batch, full)?;
    let mut model = SbnModel::new(data.width(), hidden, t.seed)?;
    model.sweeps = a.sweeps;
    model.batch_mode = full;
    let (trace, epsilon) = train(&mut model, &train_set, &cfg, t.eval_every, "reconstruction_accuracy", |m| {
        Ok(m.reconstruction_accuracy(&test_set, DEFAULT_THRESHOLD))
    })?;
    write_trace(&trace, t.out.as_deref())?;
    print_summary(out, epsilon, t.delta)
}
