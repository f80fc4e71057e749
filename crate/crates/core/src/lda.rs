//! Latent Dirichlet allocation trained by private stochastic VB.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::ce_vb::{BlockRelease, ReleasePlan, VipsModel};
use crate::error::{domain, Result};
use crate::mechanisms::{BlockStats, SensitivityBound, StatBlock};
use crate::rng::{child_rng, Stream};

pub const DEFAULT_INNER_ITERS: usize = 100;
pub const DEFAULT_INNER_TOL: f64 = 1e-3;

/// Sparse bag of words: distinct `(word, count)` pairs with count ≥ 1.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Doc {
    pub words: Vec<(u32, u32)>,
}

impl Doc {
    pub fn new(mut words: Vec<(u32, u32)>) -> Result<Self> {
        words.sort_unstable();
        if words.iter().any(|&(_, c)| c == 0) {
            return domain("word counts must be at least 1");
        }
        if words.windows(2).any(|w| w[0].0 == w[1].0) {
            return domain("duplicate word id in document");
        }
        Ok(Self { words })
    }

    pub fn len(&self) -> usize {
        self.words.iter().map(|&(_, c)| c as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Keeps `cap` tokens drawn uniformly without replacement.
    pub fn truncated<R: Rng + ?Sized>(&self, cap: usize, rng: &mut R) -> Doc {
        let total = self.len();
        if total <= cap {
            return self.clone();
        }
        let mut picks = index::sample(rng, total, cap).into_vec();
        picks.sort_unstable();
        let mut out: Vec<(u32, u32)> = Vec::new();
        let mut start = 0usize;
        let mut p = 0usize;
        for &(w, c) in &self.words {
            let end = start + c as usize;
            let mut kept = 0u32;
            while p < picks.len() && picks[p] < end {
                kept += 1;
                p += 1;
            }
            if kept > 0 {
                out.push((w, kept));
            }
            start = end;
        }
        Doc { words: out }
    }
}

/// Documents over a vocabulary of `vocab_size` words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub docs: Vec<Doc>,
    pub vocab_size: usize,
}

impl Corpus {
    pub fn new(docs: Vec<Doc>, vocab_size: usize) -> Result<Self> {
        if let Some(&(w, _)) = docs.iter().flat_map(|d| &d.words).find(|(w, _)| *w as usize >= vocab_size) {
            return domain(format!("word id {w} outside vocabulary of size {vocab_size}"));
        }
        Ok(Self { docs, vocab_size })
    }

    /// Every document cut down to at most `cap` tokens.
    pub fn truncated(&self, cap: usize, seed: u64) -> Corpus {
        let mut rng = child_rng(seed, Stream::Truncation);
        Corpus { docs: self.docs.iter().map(|d| d.truncated(cap, &mut rng)).collect(), vocab_size: self.vocab_size }
    }

    pub fn max_doc_len(&self) -> usize {
        self.docs.iter().map(Doc::len).max().unwrap_or(0)
    }

    pub fn num_tokens(&self) -> usize {
        self.docs.iter().map(Doc::len).sum()
    }

    /// Splits off the trailing `fraction` of documents as a held-out set.
    pub fn split_holdout(&self, fraction: f64) -> Result<(Corpus, Corpus)> {
        if !(0.0..1.0).contains(&fraction) {
            return domain(format!("holdout fraction must lie in [0, 1), got {fraction}"));
        }
        let n_test = (self.docs.len() as f64 * fraction).round() as usize;
        let n_train = self.docs.len() - n_test;
        Ok((
            Corpus { docs: self.docs[..n_train].to_vec(), vocab_size: self.vocab_size },
            Corpus { docs: self.docs[n_train..].to_vec(), vocab_size: self.vocab_size },
        ))
    }
}

/// ψ(cᵢ) − ψ(Σc) for each coordinate.
pub fn dirichlet_expect_log(conc: &[f64]) -> Vec<f64> {
    let total = digamma(conc.iter().sum());
    conc.iter().map(|&c| digamma(c) - total).collect()
}

/// Local variational posterior of one document.
#[derive(Debug, Clone, PartialEq)]
pub struct DocPosterior {
    pub gamma: Vec<f64>,
    /// One topic distribution per distinct word, aligned with `Doc::words`.
    pub phi: Vec<Vec<f64>>,
    pub converged: bool,
}

impl DocPosterior {
    /// Σ_n φ_n w_n as sparse `(word, per-topic weight)` columns.
    pub fn word_stats<'a>(&'a self, doc: &'a Doc) -> impl Iterator<Item = (u32, Vec<f64>)> + 'a {
        doc.words
            .iter()
            .zip(&self.phi)
            .map(|(&(w, c), p)| (w, p.iter().map(|x| x * c as f64).collect()))
    }
}

/// Coordinate ascent on (φ, γ) for one document against fixed ⟨log β⟩ (K×V row-major).
pub fn e_step_doc(
    doc: &Doc,
    expected_log_beta: &[f64],
    topics: usize,
    vocab_size: usize,
    alpha: f64,
    inner_iters: usize,
    tol: f64,
) -> DocPosterior {
    let k = topics;
    let mut gamma = vec![alpha + doc.len() as f64 / k as f64; k];
    let mut phi = vec![vec![1.0 / k as f64; k]; doc.words.len()];
    let mut converged = false;
    let mut logits = vec![0.0; k];
    for _ in 0..inner_iters.max(1) {
        let elog_theta = dirichlet_expect_log(&gamma);
        let mut new_gamma = vec![alpha; k];
        for (row, &(w, c)) in phi.iter_mut().zip(&doc.words) {
            for t in 0..k {
                logits[t] = elog_theta[t] + expected_log_beta[t * vocab_size + w as usize];
            }
            let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut norm = 0.0;
            for t in 0..k {
                row[t] = (logits[t] - m).exp();
                norm += row[t];
            }
            for t in 0..k {
                row[t] /= norm;
                new_gamma[t] += c as f64 * row[t];
            }
        }
        let change = gamma.iter().zip(&new_gamma).map(|(a, b)| (a - b).abs()).sum::<f64>() / k as f64;
        gamma = new_gamma;
        if change < tol {
            converged = true;
            break;
        }
    }
    DocPosterior { gamma, phi, converged }
}

/// L2 sensitivity 2·N_max/D of the averaged topic-word statistic.
pub fn lda_sensitivity(doc_cap: usize, divisor: f64) -> Result<SensitivityBound> {
    SensitivityBound::new(2.0 * doc_cap as f64 / divisor)
}

/// Global variational state and fixed hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LdaModel {
    topics: usize,
    vocab_size: usize,
    /// Topic-word Dirichlet parameters, K×V row-major.
    lambda: Vec<f64>,
    alpha: f64,
    eta: f64,
    doc_cap: usize,
    pub inner_iters: usize,
    pub inner_tol: f64,
}

impl LdaModel {
    /// λ initialised from Gamma(100, 1/100) draws on the init stream.
    pub fn new(topics: usize, vocab_size: usize, alpha: f64, eta: f64, doc_cap: usize, seed: u64) -> Result<Self> {
        if topics == 0 || vocab_size == 0 || doc_cap == 0 {
            return domain("topics, vocabulary size and document cap must be positive");
        }
        if !(alpha > 0.0 && eta > 0.0) {
            return domain(format!("alpha and eta must be positive, got {alpha}, {eta}"));
        }
        let mut rng = child_rng(seed, Stream::Init);
        let init = Gamma::new(100.0, 0.01).expect("valid gamma parameters");
        let lambda = (0..topics * vocab_size).map(|_| init.sample(&mut rng)).collect();
        Ok(Self { topics, vocab_size, lambda, alpha, eta, doc_cap, inner_iters: DEFAULT_INNER_ITERS, inner_tol: DEFAULT_INNER_TOL })
    }

    pub fn with_lambda(mut self, lambda: Vec<f64>) -> Result<Self> {
        if lambda.len() != self.topics * self.vocab_size || lambda.iter().any(|x| !(*x > 0.0)) {
            return domain("lambda must be a positive K×V matrix");
        }
        self.lambda = lambda;
        Ok(self)
    }

    pub fn topics(&self) -> usize {
        self.topics
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn doc_cap(&self) -> usize {
        self.doc_cap
    }

    /// ⟨log β⟩ under q(β), K×V row-major.
    pub fn expected_log_beta(&self) -> Vec<f64> {
        self.lambda.chunks(self.vocab_size).flat_map(dirichlet_expect_log).collect()
    }

    pub fn e_step_doc(&self, doc: &Doc, expected_log_beta: &[f64]) -> DocPosterior {
        e_step_doc(doc, expected_log_beta, self.topics, self.vocab_size, self.alpha, self.inner_iters, self.inner_tol)
    }

    /// Averaged statistic (1/divisor)·Σ_d Σ_n φ_dn w_dn over `docs`, K×V row-major.
    pub fn batch_stats<'a>(&self, docs: impl IntoIterator<Item = &'a Doc>, divisor: f64) -> Vec<f64> {
        let elog_beta = self.expected_log_beta();
        let mut stats = vec![0.0; self.topics * self.vocab_size];
        for doc in docs {
            let post = self.e_step_doc(doc, &elog_beta);
            for (w, col) in post.word_stats(doc) {
                for (t, x) in col.into_iter().enumerate() {
                    stats[t * self.vocab_size + w as usize] += x;
                }
            }
        }
        stats.iter_mut().for_each(|s| *s /= divisor);
        stats
    }

    /// λ ← (1−ρ)λ + ρ(η + D·s̃).
    pub fn apply_m_step(&mut self, stats: &[f64], n_docs: usize, rho: f64) {
        let d = n_docs as f64;
        for (l, s) in self.lambda.iter_mut().zip(stats) {
            *l = (1.0 - rho) * *l + rho * (self.eta + d * s);
        }
    }

    /// Word ids of the `n` heaviest words of topic `k`.
    pub fn top_words(&self, k: usize, n: usize) -> Vec<usize> {
        let row = &self.lambda[k * self.vocab_size..(k + 1) * self.vocab_size];
        let mut ids: Vec<usize> = (0..self.vocab_size).collect();
        ids.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        ids.truncate(n);
        ids
    }

    /// −KL(q(β) ‖ p(β)) summed over topics.
    fn beta_elbo_term(&self, elog_beta: &[f64]) -> f64 {
        let v = self.vocab_size as f64;
        let mut total = 0.0;
        for (lam, elog) in self.lambda.chunks(self.vocab_size).zip(elog_beta.chunks(self.vocab_size)) {
            for (&l, &e) in lam.iter().zip(elog) {
                total += (self.eta - l) * e + ln_gamma(l);
            }
            total -= ln_gamma(lam.iter().sum());
            total += ln_gamma(v * self.eta) - v * ln_gamma(self.eta);
        }
        total
    }

    /// Per-document ELBO contribution with φ at its optimum for the fitted γ.
    fn doc_elbo(&self, doc: &Doc, elog_beta: &[f64]) -> f64 {
        let k = self.topics;
        let post = self.e_step_doc(doc, elog_beta);
        let elog_theta = dirichlet_expect_log(&post.gamma);
        let mut score = 0.0;
        for &(w, c) in &doc.words {
            let terms: Vec<f64> = (0..k).map(|t| elog_theta[t] + elog_beta[t * self.vocab_size + w as usize]).collect();
            score += c as f64 * crate::accountant::log_sum_exp(&terms);
        }
        for t in 0..k {
            score += (self.alpha - post.gamma[t]) * elog_theta[t] + ln_gamma(post.gamma[t]);
        }
        score -= ln_gamma(post.gamma.iter().sum());
        score += ln_gamma(k as f64 * self.alpha) - k as f64 * ln_gamma(self.alpha);
        score
    }

    /// exp(−ELBO / tokens) on `docs`, with the topic KL term weighted by `beta_weight`.
    ///
    /// The weight is 1 for the training set and the test-to-training document
    /// ratio for a held-out set.
    pub fn perplexity_bound(&self, docs: &[Doc], beta_weight: f64) -> Result<f64> {
        let tokens: usize = docs.iter().map(Doc::len).sum();
        if tokens == 0 {
            return domain("perplexity needs at least one token");
        }
        if !(beta_weight >= 0.0) {
            return domain(format!("beta weight must be non-negative, got {beta_weight}"));
        }
        let elog_beta = self.expected_log_beta();
        let docs_term: f64 = docs.iter().map(|d| self.doc_elbo(d, &elog_beta)).sum();
        let elbo = docs_term + beta_weight * self.beta_elbo_term(&elog_beta);
        Ok((-elbo / tokens as f64).exp())
    }
}

impl VipsModel for LdaModel {
    type Data = Corpus;

    fn num_records(data: &Corpus) -> usize {
        data.docs.len()
    }

    fn e_step(&self, data: &Corpus, batch: &[usize], divisor: f64) -> Result<BlockStats> {
        if let Some(&i) = batch.iter().find(|&&i| data.docs[i].len() > self.doc_cap) {
            return domain(format!("document {i} has {} tokens, above the cap {}", data.docs[i].len(), self.doc_cap));
        }
        let stats = self.batch_stats(batch.iter().map(|&i| &data.docs[i]), divisor);
        let block = StatBlock::new("topic_word", vec![self.topics, self.vocab_size], stats, lda_sensitivity(self.doc_cap, divisor)?)?;
        BlockStats::new(vec![block])
    }

    fn zero_stats(&self, divisor: f64) -> Result<BlockStats> {
        let zeros = vec![0.0; self.topics * self.vocab_size];
        let block = StatBlock::new("topic_word", vec![self.topics, self.vocab_size], zeros, lda_sensitivity(self.doc_cap, divisor)?)?;
        BlockStats::new(vec![block])
    }

    fn release_plan(&self) -> ReleasePlan {
        ReleasePlan::PerBlock(vec![BlockRelease::ClippedGaussian])
    }

    fn m_step(&mut self, stats: &BlockStats, rho: f64, n_total: usize) -> Result<()> {
        self.apply_m_step(&stats.blocks[0].values, n_total, rho);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc(words: &[(u32, u32)]) -> Doc {
        Doc::new(words.to_vec()).unwrap()
    }

    #[test]
    fn dirichlet_expect_log_examples() {
        assert_eq!(dirichlet_expect_log(&[1.0, 1.0]).iter().map(|x| (x * 1e12).round() / 1e12).collect::<Vec<_>>(), vec![-1.0, -1.0]);
        let v = dirichlet_expect_log(&[2.0, 1.0, 1.0]);
        let gold = [-0.8333333333333334, -1.8333333333333333, -1.8333333333333333];
        for (a, b) in v.iter().zip(gold) {
            assert!((a - b).abs() < 1e-12);
        }
        let s = dirichlet_expect_log(&[0.7; 5]);
        assert!(s.iter().all(|x| *x == s[0]));
    }

    #[test]
    fn flat_topics_give_uniform_phi() {
        let d = doc(&[(0, 3), (2, 1)]);
        let post = e_step_doc(&d, &[-1.0; 8], 2, 4, 0.5, 100, 1e-3);
        for row in &post.phi {
            assert!(row.iter().all(|p| (p - 0.5).abs() < 1e-12));
        }
        assert!(post.gamma.iter().all(|g| (g - 2.5).abs() < 1e-12));
    }

    #[test]
    fn dominant_topic_takes_the_word() {
        let mut elog = vec![-3.0; 6];
        elog[3 + 1] += 10.0;
        let post = e_step_doc(&doc(&[(1, 1)]), &elog, 2, 3, 0.5, 100, 1e-3);
        assert!(post.phi[0][1] >= 0.9999);
    }

    #[test]
    fn doc_stats_columns_sum_to_counts() {
        let d = doc(&[(0, 2), (3, 5)]);
        let elog: Vec<f64> = (0..12).map(|i| -((i % 5) as f64) - 0.5).collect();
        let post = e_step_doc(&d, &elog, 3, 4, 0.3, 100, 1e-6);
        for ((_, col), &(_, c)) in post.word_stats(&d).zip(&d.words) {
            assert!((col.iter().sum::<f64>() - c as f64).abs() < 1e-12);
        }
        for row in &post.phi {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
        let implied: Vec<f64> = (0..3)
            .map(|t| 0.3 + d.words.iter().zip(&post.phi).map(|(&(_, c), p)| c as f64 * p[t]).sum::<f64>())
            .collect();
        for (g, i) in post.gamma.iter().zip(implied) {
            assert!((g - i).abs() < 1e-8);
        }
    }

    #[test]
    fn truncation_examples() {
        let mut rng = child_rng(1, Stream::Truncation);
        let short = doc(&[(0, 2), (1, 1)]);
        assert_eq!(short.truncated(5, &mut rng), short);
        let long = doc(&[(0, 6), (1, 4), (4, 10)]);
        let cut = long.truncated(10, &mut rng);
        assert_eq!(cut.len(), 10);
        for &(w, c) in &cut.words {
            let orig = long.words.iter().find(|x| x.0 == w).unwrap().1;
            assert!(c <= orig);
        }
    }

    #[test]
    fn sensitivity_examples() {
        assert!((lda_sensitivity(100, 1000.0).unwrap().value() - 0.2).abs() < 1e-15);
        assert_eq!(lda_sensitivity(1, 2.0).unwrap().value(), 1.0);
    }

    fn small_model() -> LdaModel {
        LdaModel::new(2, 3, 0.5, 0.1, 10, 0).unwrap()
    }

    #[test]
    fn m_step_examples() {
        let mut m = small_model();
        m.apply_m_step(&[0.0; 6], 10, 1.0);
        assert!(m.lambda().iter().all(|l| (l - 0.1).abs() < 1e-15));
        let before = m.lambda().to_vec();
        m.apply_m_step(&[3.0; 6], 10, 0.0);
        assert_eq!(m.lambda(), before.as_slice());
        m.apply_m_step(&[0.05; 6], 10, 1.0);
        assert!(m.lambda().iter().all(|l| (l - 0.6).abs() < 1e-12));
    }

    #[test]
    fn single_topic_bound_is_finite() {
        let m = LdaModel::new(1, 4, 1.0, 0.5, 10, 3).unwrap();
        let p = m.perplexity_bound(&[doc(&[(0, 2), (3, 1)])], 1.0).unwrap();
        assert!(p.is_finite() && p > 1.0);
        assert!(m.perplexity_bound(&[Doc::default()], 1.0).is_err());
    }

    #[test]
    fn uniform_state_has_perplexity_near_vocab_size() {
        let v = 20;
        let m = LdaModel::new(1, v, 1.0, 1.0, 100, 0).unwrap().with_lambda(vec![1e4; v]).unwrap();
        let mut rng = child_rng(2, Stream::Synthetic);
        let docs: Vec<Doc> = (0..30)
            .map(|_| {
                let mut counts = vec![0u32; v];
                for _ in 0..40 {
                    counts[rng.random_range(0..v)] += 1;
                }
                Doc::new(counts.iter().enumerate().filter(|(_, c)| **c > 0).map(|(w, c)| (w as u32, *c)).collect()).unwrap()
            })
            .collect();
        let p = m.perplexity_bound(&docs, 0.0).unwrap();
        assert!(p <= v as f64 * 1.05, "perplexity {p}");
    }

    proptest! {
        #[test]
        fn phi_rows_are_distributions_and_gamma_dominates_alpha(
            counts in proptest::collection::vec(1u32..5, 1..6),
            seed in 0u64..1000,
        ) {
            let v = counts.len();
            let m = LdaModel::new(3, v, 0.2, 0.1, 100, seed).unwrap();
            let d = Doc::new(counts.iter().enumerate().map(|(w, c)| (w as u32, *c)).collect()).unwrap();
            let post = m.e_step_doc(&d, &m.expected_log_beta());
            for row in &post.phi {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
                prop_assert!(row.iter().all(|p| *p >= 0.0));
            }
            prop_assert!(post.gamma.iter().all(|g| *g >= 0.2));
        }
    }
}
