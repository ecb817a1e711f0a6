use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_INPUT_SIZE: usize = 112;

/// Weighted list of degradation resolutions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPlan {
    pub entries: Vec<(usize, f64)>,
    pub input_size: usize,
}

impl AugmentationPlan {
    pub fn new(entries: Vec<(usize, f64)>, input_size: usize) -> Result<Self> {
        let plan = Self {
            entries,
            input_size,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::invalid("augmentation plan is empty"));
        }
        for &(r, w) in &self.entries {
            if r == 0 || r > self.input_size {
                return Err(Error::invalid(format!(
                    "plan resolution {r} outside 1..={}",
                    self.input_size
                )));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::invalid(format!("plan weight {w} for {r} px must be positive")));
            }
        }
        Ok(())
    }

    /// No degradation: the partner image is the HR image itself.
    pub fn none(input_size: usize) -> Self {
        Self {
            entries: vec![(input_size, 1.0)],
            input_size,
        }
    }

    /// Single 14 px degradation.
    pub fn single(r: usize, input_size: usize) -> Self {
        Self {
            entries: vec![(r, 1.0)],
            input_size,
        }
    }

    /// Multi-resolution plan: 7, 14 and 20 px at 1:1:2.
    pub fn multi_resolution(input_size: usize) -> Self {
        Self {
            entries: vec![(7, 1.0), (14, 1.0), (20, 2.0)],
            input_size,
        }
    }

    /// Uniform 7/14/28/56 px plan used as a comparison policy.
    pub fn progressive(input_size: usize) -> Self {
        Self {
            entries: vec![(7, 1.0), (14, 1.0), (28, 1.0), (56, 1.0)],
            input_size,
        }
    }

    /// Parse either a preset name (`none`, `aug`, `maug`, `paug`) or an
    /// explicit list such as `7:1,14:1,20:2`.
    pub fn parse(spec: &str, input_size: usize) -> Result<Self> {
        let plan = match spec.trim().to_ascii_lowercase().as_str() {
            "none" | "baseline" => Self::none(input_size),
            "aug" => Self::single(14, input_size),
            "maug" => Self::multi_resolution(input_size),
            "paug" => Self::progressive(input_size),
            other => {
                let mut entries = Vec::new();
                for item in other.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                    let (r, w) = item.split_once(':').unwrap_or((item, "1"));
                    let r = usize::from_str(r.trim())
                        .map_err(|_| Error::invalid(format!("bad resolution `{r}` in plan `{spec}`")))?;
                    let w = f64::from_str(w.trim())
                        .map_err(|_| Error::invalid(format!("bad weight `{w}` in plan `{spec}`")))?;
                    entries.push((r, w));
                }
                Self {
                    entries,
                    input_size,
                }
            }
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn contains(&self, r: usize) -> bool {
        self.entries.iter().any(|&(e, _)| e == r)
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let total: f64 = self.entries.iter().map(|e| e.1).sum();
        self.entries.iter().map(|e| e.1 / total).collect()
    }

    /// True when every entry is the undegraded input size.
    pub fn is_identity(&self) -> bool {
        self.entries.iter().all(|&(r, _)| r == self.input_size)
    }
}

impl fmt::Display for AugmentationPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.entries.iter().map(|(r, w)| format!("{r}:{w}")).collect();
        f.write_str(&parts.join(","))
    }
}

/// Draw one resolution with probability proportional to its weight.
pub fn sample_resolution<R: Rng + ?Sized>(plan: &AugmentationPlan, rng: &mut R) -> Result<usize> {
    if plan.entries.is_empty() {
        return Err(Error::invalid("cannot sample from an empty plan"));
    }
    let total: f64 = plan.entries.iter().map(|e| e.1).sum();
    if !(total > 0.0) {
        return Err(Error::invalid("plan weights must sum to a positive value"));
    }
    let mut u = rng.gen::<f64>() * total;
    for &(r, w) in &plan.entries {
        if u < w {
            return Ok(r);
        }
        u -= w;
    }
    Ok(plan.entries.last().unwrap().0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DifficultyTier {
    ExtremelyHard,
    Hard,
    SemiHard,
    NotAugmented,
}

impl fmt::Display for DifficultyTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DifficultyTier::ExtremelyHard => "extremely-hard",
            DifficultyTier::Hard => "hard",
            DifficultyTier::SemiHard => "semi-hard",
            DifficultyTier::NotAugmented => "not-augmented",
        })
    }
}

/// `< 12` extremely hard, `12..20` hard, `20..=32` semi-hard, above that not
/// augmented.
pub fn classify_difficulty(r: usize) -> DifficultyTier {
    match r {
        0..=11 => DifficultyTier::ExtremelyHard,
        12..=19 => DifficultyTier::Hard,
        20..=32 => DifficultyTier::SemiHard,
        _ => DifficultyTier::NotAugmented,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tiers() {
        assert_eq!(classify_difficulty(7), DifficultyTier::ExtremelyHard);
        assert_eq!(classify_difficulty(11), DifficultyTier::ExtremelyHard);
        assert_eq!(classify_difficulty(12), DifficultyTier::Hard);
        assert_eq!(classify_difficulty(14), DifficultyTier::Hard);
        assert_eq!(classify_difficulty(20), DifficultyTier::SemiHard);
        assert_eq!(classify_difficulty(32), DifficultyTier::SemiHard);
        assert_eq!(classify_difficulty(33), DifficultyTier::NotAugmented);
        assert_eq!(classify_difficulty(56), DifficultyTier::NotAugmented);
    }

    #[test]
    fn single_entry_plan_is_constant() {
        let plan = AugmentationPlan::single(14, 112);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!((0..1000).all(|_| sample_resolution(&plan, &mut rng).unwrap() == 14));
    }

    #[test]
    fn same_seed_same_draws() {
        let plan = AugmentationPlan::multi_resolution(112);
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..200).map(|_| sample_resolution(&plan, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
    }

    #[test]
    fn empty_plan_errors() {
        let plan = AugmentationPlan {
            entries: vec![],
            input_size: 112,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_resolution(&plan, &mut rng).is_err());
        assert!(plan.validate().is_err());
    }

    #[test]
    fn parse_presets_and_lists() {
        assert_eq!(AugmentationPlan::parse("maug", 112).unwrap(), AugmentationPlan::multi_resolution(112));
        assert_eq!(
            AugmentationPlan::parse("7:1, 14:1, 20:2", 112).unwrap(),
            AugmentationPlan::multi_resolution(112)
        );
        assert_eq!(AugmentationPlan::parse("14", 112).unwrap(), AugmentationPlan::single(14, 112));
        assert!(AugmentationPlan::parse("200:1", 112).is_err());
        assert!(AugmentationPlan::parse("7:0", 112).is_err());
        assert!(AugmentationPlan::parse("x:1", 112).is_err());
    }
}
