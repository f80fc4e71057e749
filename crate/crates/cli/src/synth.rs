//! Seeded synthetic stand-ins for the three model families.

use nalgebra::DVector;
use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use vips_core::blr::BlrDataset;
use vips_core::lda::{Corpus, Doc};
use vips_core::rng::{child_rng, Stream};
use vips_core::sbn::SbnData;
use vips_core::{Result, VipsError};

pub const TOPIC_CONCENTRATION: f64 = 0.1;
pub const DOC_CONCENTRATION: f64 = 0.5;
pub const DOC_LEN_RANGE: (usize, usize) = (30, 70);
pub const BAR_FLIP_PROB: f64 = 0.05;

fn dirichlet<R: Rng + ?Sized>(conc: f64, dim: usize, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(conc, 1.0).expect("positive concentration");
    let draws: Vec<f64> = (0..dim).map(|_| gamma.sample(rng).max(f64::MIN_POSITIVE)).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|g| g / total).collect()
}

fn gaussian_vec<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| StandardNormal.sample(rng))
}

/// Corpus drawn from a planted LDA model, returned with its topic-word matrix.
pub fn synth_corpus_with_topics(docs: usize, vocab: usize, topics: usize, seed: u64) -> Result<(Corpus, Vec<Vec<f64>>)> {
    if docs == 0 || vocab == 0 || topics == 0 {
        return Err(VipsError::Domain("corpus sizes must be positive".into()));
    }
    let mut rng = child_rng(seed, Stream::Synthetic);
    let beta: Vec<Vec<f64>> = (0..topics).map(|_| dirichlet(TOPIC_CONCENTRATION, vocab, &mut rng)).collect();
    let word_dists: Vec<WeightedIndex<f64>> =
        beta.iter().map(|b| WeightedIndex::new(b).expect("normalised topic")).collect();
    let mut out = Vec::with_capacity(docs);
    for _ in 0..docs {
        let theta = WeightedIndex::new(dirichlet(DOC_CONCENTRATION, topics, &mut rng)).expect("normalised mixture");
        let len = rng.random_range(DOC_LEN_RANGE.0..=DOC_LEN_RANGE.1);
        let mut counts = vec![0u32; vocab];
        for _ in 0..len {
            counts[word_dists[theta.sample(&mut rng)].sample(&mut rng)] += 1;
        }
        let words = counts.iter().enumerate().filter(|(_, &c)| c > 0).map(|(w, &c)| (w as u32, c)).collect();
        out.push(Doc::new(words)?);
    }
    Ok((Corpus::new(out, vocab)?, beta))
}

pub fn synth_corpus(docs: usize, vocab: usize, topics: usize, seed: u64) -> Result<Corpus> {
    synth_corpus_with_topics(docs, vocab, topics, seed).map(|(c, _)| c)
}

/// Planted-separator data: g ∼ N(0, I), y = 1[uᵀg > 0], x = g + margin·(2y − 1)·u,
/// then every row divided by the largest norm.
pub fn synth_blr_with_direction(n: usize, dim: usize, margin: f64, seed: u64) -> Result<(BlrDataset, DVector<f64>)> {
    if n == 0 || dim == 0 {
        return Err(VipsError::Domain("dataset sizes must be positive".into()));
    }
    if !(margin >= 0.0 && margin.is_finite()) {
        return Err(VipsError::Domain(format!("margin must be non-negative, got {margin}")));
    }
    let mut rng = child_rng(seed, Stream::Synthetic);
    let raw = gaussian_vec(dim, &mut rng);
    let u = &raw / raw.norm();
    let mut inputs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let g = gaussian_vec(dim, &mut rng);
        let y = u.dot(&g) > 0.0;
        let sign = if y { 1.0 } else { -1.0 };
        inputs.push(g + &u * (margin * sign));
        labels.push(y as u8);
    }
    let max_norm = inputs.iter().map(|x| x.norm()).fold(0.0, f64::max);
    if max_norm > 0.0 {
        inputs.iter_mut().for_each(|x| *x /= max_norm);
    }
    Ok((BlrDataset::new(inputs, labels)?, u))
}

pub fn synth_blr(n: usize, dim: usize, margin: f64, seed: u64) -> Result<BlrDataset> {
    synth_blr_with_direction(n, dim, margin, seed).map(|(d, _)| d)
}

/// Pixel indices of bar `k` on a side×side grid: row 0, column 0, row 1, column 1, …
pub fn bar_pixels(side: usize, k: usize) -> Vec<usize> {
    let line = k / 2;
    (0..side).map(|t| if k % 2 == 0 { line * side + t } else { t * side + line }).collect()
}

/// Bars images on a √J×√J grid: each of K bars switched on with probability
/// ½, then every pixel flipped with probability [`BAR_FLIP_PROB`].
pub fn synth_bars(visible: usize, hidden: usize, n: usize, seed: u64) -> Result<SbnData> {
    let side = (visible as f64).sqrt().round() as usize;
    if side == 0 || side * side != visible {
        return Err(VipsError::Domain(format!("bars need a square image, got {visible} pixels")));
    }
    if hidden == 0 || hidden > 2 * side {
        return Err(VipsError::Domain(format!("a {side}x{side} grid supports 1..={} bars, got {hidden}", 2 * side)));
    }
    let mut rng = child_rng(seed, Stream::Synthetic);
    let rows = (0..n)
        .map(|_| {
            let mut img = vec![0u8; visible];
            for k in 0..hidden {
                if rng.random::<bool>() {
                    bar_pixels(side, k).into_iter().for_each(|p| img[p] = 1);
                }
            }
            for p in img.iter_mut() {
                if rng.random::<f64>() < BAR_FLIP_PROB {
                    *p ^= 1;
                }
            }
            img
        })
        .collect();
    SbnData::new(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_deterministic_and_in_range() {
        let a = synth_corpus(20, 30, 3, 7).unwrap();
        assert_eq!(a, synth_corpus(20, 30, 3, 7).unwrap());
        assert_ne!(a, synth_corpus(20, 30, 3, 8).unwrap());
        for d in &a.docs {
            assert!((DOC_LEN_RANGE.0..=DOC_LEN_RANGE.1).contains(&d.len()));
        }
    }

    #[test]
    fn planted_topics_are_distributions() {
        let (_, beta) = synth_corpus_with_topics(5, 12, 4, 1).unwrap();
        for b in beta {
            assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn blr_with_margin_is_separated_by_planted_direction() {
        let (data, u) = synth_blr_with_direction(2000, 10, 1.0, 3).unwrap();
        let mut min_pos = f64::INFINITY;
        let mut max_neg = f64::NEG_INFINITY;
        for (x, &y) in data.inputs().iter().zip(data.labels()) {
            let s = u.dot(x);
            if y == 1 { min_pos = min_pos.min(s) } else { max_neg = max_neg.max(s) }
        }
        assert!(min_pos > 0.0 && max_neg < 0.0 && min_pos - max_neg > 0.0);
        let max_norm = data.inputs().iter().map(|x| x.norm()).fold(0.0, f64::max);
        assert!((max_norm - 1.0).abs() < 1e-12);
        assert_eq!(synth_blr(50, 4, 0.5, 9).unwrap(), synth_blr(50, 4, 0.5, 9).unwrap());
    }

    #[test]
    fn bars_are_unions_of_bars_up_to_flips() {
        let data = synth_bars(16, 4, 10, 5).unwrap();
        assert_eq!(data.len(), 10);
        let sources: Vec<Vec<usize>> = (0..4).map(|k| bar_pixels(4, k)).collect();
        let mut flips = 0;
        for row in data.rows() {
            let best = (0..16u32)
                .map(|mask| {
                    let mut img = [0u8; 16];
                    for (k, s) in sources.iter().enumerate() {
                        if mask & (1 << k) != 0 {
                            s.iter().for_each(|&p| img[p] = 1);
                        }
                    }
                    img.iter().zip(row).filter(|(a, b)| a != b).count()
                })
                .min()
                .unwrap();
            flips += best;
        }
        assert!(flips <= 16, "{flips} pixels disagree with the nearest union of bars");
        assert_eq!(synth_bars(16, 4, 10, 5).unwrap(), data);
        assert!(synth_bars(15, 4, 10, 5).is_err());
        assert!(synth_bars(16, 9, 10, 5).is_err());
    }
}
