use std::path::Path;

use serde::{Deserialize, Serialize};

use super::report::{report_stem, write_csv_rows};
use super::verification::pair_similarities;
use crate::datagen::{LabeledDataset, VerificationPairs};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::model::{read_params, Checkpoint};

pub const SIM_BINS: usize = 64;

/// Cosine-similarity histograms of positive and negative pairs over [-1, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityHistogram {
    pub resolution: usize,
    pub edges: Vec<f64>,
    pub positive: Vec<usize>,
    pub negative: Vec<usize>,
    /// `Σ_bins min(p_pos, p_neg)` of the normalized histograms.
    pub overlap: f64,
}

fn bin(s: f64) -> usize {
    (((s + 1.0) / 2.0 * SIM_BINS as f64).floor().max(0.0) as usize).min(SIM_BINS - 1)
}

/// Overlap coefficient of two count histograms; 0 when either is empty.
pub fn overlap_coefficient(a: &[usize], b: &[usize]) -> f64 {
    let (na, nb) = (a.iter().sum::<usize>(), b.iter().sum::<usize>());
    if na == 0 || nb == 0 {
        return 0.0;
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 / na as f64).min(y as f64 / nb as f64))
        .sum::<f64>()
        .min(1.0)
}

impl SimilarityHistogram {
    pub fn from_similarities(sims: &[f64], same: &[bool], resolution: usize) -> Result<Self> {
        if sims.is_empty() || sims.len() != same.len() {
            return Err(Error::invalid("need one label per similarity and at least one pair"));
        }
        let mut positive = vec![0; SIM_BINS];
        let mut negative = vec![0; SIM_BINS];
        for (&s, &y) in sims.iter().zip(same) {
            if y {
                positive[bin(s)] += 1;
            } else {
                negative[bin(s)] += 1;
            }
        }
        let edges = (0..=SIM_BINS)
            .map(|i| -1.0 + 2.0 * i as f64 / SIM_BINS as f64)
            .collect();
        Ok(Self {
            resolution,
            overlap: overlap_coefficient(&positive, &negative),
            edges,
            positive,
            negative,
        })
    }

    pub fn save(&self, dir: &Path, model_id: &str, seed: u64) -> Result<()> {
        let stem = report_stem(&format!("sim_hist_{}px", self.resolution), model_id, seed);
        let rows = (0..SIM_BINS).map(|i| {
            vec![
                self.edges[i].to_string(),
                self.edges[i + 1].to_string(),
                self.positive[i].to_string(),
                self.negative[i].to_string(),
            ]
        });
        write_csv_rows(
            &dir.join(format!("{stem}.csv")),
            &["bin_lo", "bin_hi", "positive", "negative"],
            rows,
        )?;
        write_atomic(&dir.join(format!("{stem}.json")), serde_json::to_string_pretty(self)?.as_bytes())
    }
}

/// Positive/negative similarity histograms with both pair images degraded
/// to `resolution`.
pub fn similarity_distributions(
    ck: &Checkpoint,
    ds: &LabeledDataset,
    pairs: &VerificationPairs,
    resolution: usize,
) -> Result<SimilarityHistogram> {
    if pairs.is_empty() {
        return Err(Error::invalid("no verification pairs"));
    }
    let params = read_params::<f32>(ck)?;
    if resolution == 0 || resolution > params.config.input_size {
        return Err(Error::invalid(format!("resolution {resolution} out of range")));
    }
    let sims = pair_similarities(&params, ds, pairs, resolution)?;
    let same: Vec<bool> = pairs.pairs.iter().map(|p| p.same).collect();
    SimilarityHistogram::from_similarities(&sims, &same, resolution)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bins_cover_the_range() {
        assert_eq!(bin(-1.0), 0);
        assert_eq!(bin(1.0), SIM_BINS - 1);
        assert_eq!(bin(0.0), SIM_BINS / 2);
        assert_eq!(bin(-1.5), 0);
    }

    #[test]
    fn disjoint_and_identical() {
        let h = SimilarityHistogram::from_similarities(&[0.9, -0.9], &[true, false], 14).unwrap();
        assert_eq!(h.overlap, 0.0);
        let h = SimilarityHistogram::from_similarities(&[0.3, 0.3], &[true, false], 14).unwrap();
        assert!((h.overlap - 1.0).abs() < 1e-15);
    }
}
