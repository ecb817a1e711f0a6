use serde::{Deserialize, Serialize};

use super::cosface::{cosface_loss, normalize_rows};
use super::distance::DistanceKind;
use crate::error::{Error, Result};
use crate::numerics::kernels::l2_normalize_backward;
use crate::numerics::Tensor;

/// Loss configuration for the Siamese objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub dist: DistanceKind,
    /// Weight of the feature distance term.
    pub lambda: f64,
    pub cosface_scale: f64,
    pub cosface_margin: f64,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self {
            dist: DistanceKind::LogExp { p: 1.0 },
            lambda: 1.0,
            cosface_scale: 48.0,
            cosface_margin: 0.4,
        }
    }
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        self.dist.validate()?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.cosface_scale > 0.0 && self.cosface_scale.is_finite()) {
            return Err(Error::invalid(format!("CosFace s must be > 0, got {}", self.cosface_scale)));
        }
        if !(0.0..1.0).contains(&self.cosface_margin) {
            return Err(Error::invalid(format!(
                "CosFace m must lie in [0,1), got {}",
                self.cosface_margin
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TotalLossOutput {
    pub total: f64,
    /// Unweighted feature distance, averaged over pairs.
    pub dist: f64,
    pub cls_hr: f64,
    pub cls_lr: f64,
    pub grad_hr: Tensor,
    pub grad_lr: Tensor,
    pub grad_weights: Tensor,
}

/// Mean distance between row-normalized `a` and `b`, with gradients w.r.t.
/// the unnormalized rows.
pub fn normalized_pair_distance(a: &Tensor, b: &Tensor, kind: DistanceKind) -> Result<(f64, Tensor, Tensor)> {
    if a.shape() != b.shape() || a.shape().len() != 2 {
        return Err(Error::shape(
            "pair distance",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let (rows, d) = (a.shape()[0], a.shape()[1]);
    let (an, ar) = normalize_rows(a);
    let (bn, br) = normalize_rows(b);
    let inv = 1.0 / rows as f64;
    let mut value = 0.0;
    let mut ga = Vec::with_capacity(rows * d);
    let mut gb = Vec::with_capacity(rows * d);
    for i in 0..rows {
        let r = kind.eval(&an[i], &bn[i])?;
        value += r.value * inv;
        let gx: Vec<f64> = r.grad_x.iter().map(|g| g * inv).collect();
        let gy: Vec<f64> = r.grad_y.iter().map(|g| g * inv).collect();
        ga.extend(l2_normalize_backward(&an[i], ar[i], &gx));
        gb.extend(l2_normalize_backward(&bn[i], br[i], &gy));
    }
    Ok((value, Tensor::new(vec![rows, d], ga)?, Tensor::new(vec![rows, d], gb)?))
}

/// `λ·L_dist(f_hr/‖f_hr‖, f_lr/‖f_lr‖) + ½·L_cls(f_hr) + ½·L_cls(f_lr)`.
pub fn total_loss(
    f_hr: &Tensor,
    f_lr: &Tensor,
    class_weights: &Tensor,
    labels: &[usize],
    spec: &LossSpec,
) -> Result<TotalLossOutput> {
    spec.validate()?;
    if f_hr.shape() != f_lr.shape() {
        return Err(Error::shape(
            "total_loss",
            format!("f_hr {:?} vs f_lr {:?}", f_hr.shape(), f_lr.shape()),
        ));
    }
    let (s, m) = (spec.cosface_scale, spec.cosface_margin);
    let hr = cosface_loss(f_hr, class_weights, labels, s, m)?;
    let lr = cosface_loss(f_lr, class_weights, labels, s, m)?;
    let (dist, mut grad_hr, mut grad_lr) = if spec.lambda > 0.0 {
        normalized_pair_distance(f_hr, f_lr, spec.dist)?
    } else {
        (0.0, f_hr.zeros_like(), f_lr.zeros_like())
    };

    let lam = spec.lambda;
    for (g, c) in grad_hr.data_mut().iter_mut().zip(hr.grad_embeddings.data()) {
        *g = lam * *g + 0.5 * c;
    }
    for (g, c) in grad_lr.data_mut().iter_mut().zip(lr.grad_embeddings.data()) {
        *g = lam * *g + 0.5 * c;
    }
    let grad_weights = Tensor::new(
        class_weights.shape().to_vec(),
        hr.grad_weights
            .data()
            .iter()
            .zip(lr.grad_weights.data())
            .map(|(a, b)| 0.5 * (a + b))
            .collect(),
    )?;
    Ok(TotalLossOutput {
        total: lam * dist + 0.5 * hr.loss + 0.5 * lr.loss,
        dist,
        cls_hr: hr.loss,
        cls_lr: lr.loss,
        grad_hr,
        grad_lr,
        grad_weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_validation() {
        assert!(LossSpec::default().validate().is_ok());
        let bad = |f: fn(&mut LossSpec)| {
            let mut s = LossSpec::default();
            f(&mut s);
            s.validate().is_err()
        };
        assert!(bad(|s| s.lambda = -1.0));
        assert!(bad(|s| s.cosface_scale = 0.0));
        assert!(bad(|s| s.cosface_margin = 1.0));
        assert!(bad(|s| s.dist = DistanceKind::LogExp { p: 0.0 }));
    }
}
