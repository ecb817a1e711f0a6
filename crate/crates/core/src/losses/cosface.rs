use crate::error::{Error, Result};
use crate::numerics::kernels::{l2_normalize, l2_normalize_backward};
use crate::numerics::Tensor;

/// Additive cosine-margin softmax output.
#[derive(Clone, Debug)]
pub struct CosFaceOutput {
    /// Mean cross-entropy over the batch.
    pub loss: f64,
    pub grad_embeddings: Tensor,
    pub grad_weights: Tensor,
}

fn check_matrix(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::shape("cosface", format!("{what} must be 2-D, got {s:?}"))),
    }
}

/// Row-normalized copy of a matrix plus the row norms.
pub(crate) fn normalize_rows(t: &Tensor) -> (Vec<Vec<f64>>, Vec<f64>) {
    let w = t.shape()[1];
    t.data().chunks_exact(w).map(l2_normalize).unzip()
}

/// Cosine similarity of every embedding to every class centre (`B×K`).
pub fn cosine_logits(embeddings: &Tensor, class_weights: &Tensor) -> Result<Vec<Vec<f64>>> {
    let (_, d) = check_matrix(embeddings, "embeddings")?;
    let (_, dw) = check_matrix(class_weights, "class weights")?;
    if d != dw {
        return Err(Error::shape(
            "cosface",
            format!("embedding dim {d} vs class weight dim {dw}"),
        ));
    }
    let (xn, _) = normalize_rows(embeddings);
    let (wn, _) = normalize_rows(class_weights);
    Ok(xn
        .iter()
        .map(|x| wn.iter().map(|w| x.iter().zip(w).map(|(a, b)| a * b).sum()).collect())
        .collect())
}

/// CosFace loss: logits `s·(cos θ_j - m·[j = y])` over L2-normalized
/// embeddings and class weights, softmax cross-entropy averaged over the batch.
pub fn cosface_loss(
    embeddings: &Tensor,
    class_weights: &Tensor,
    labels: &[usize],
    scale: f64,
    margin: f64,
) -> Result<CosFaceOutput> {
    let (b, d) = check_matrix(embeddings, "embeddings")?;
    let (k, dw) = check_matrix(class_weights, "class weights")?;
    if d != dw {
        return Err(Error::shape(
            "cosface",
            format!("embedding dim {d} vs class weight dim {dw}"),
        ));
    }
    if labels.len() != b {
        return Err(Error::shape(
            "cosface",
            format!("{} labels for {b} embeddings", labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            classes: k,
        });
    }

    let (xn, xr) = normalize_rows(embeddings);
    let (wn, wr) = normalize_rows(class_weights);

    let mut loss = 0.0;
    let mut grad_xn = vec![vec![0.0; d]; b];
    let mut grad_wn = vec![vec![0.0; d]; k];
    let inv_b = 1.0 / b as f64;
    for i in 0..b {
        let logits: Vec<f64> = wn
            .iter()
            .enumerate()
            .map(|(j, w)| {
                let cos: f64 = xn[i].iter().zip(w).map(|(a, c)| a * c).sum();
                scale * (cos - if j == labels[i] { margin } else { 0.0 })
            })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        let log_z = max + sum_exp.ln();
        loss += log_z - logits[labels[i]];
        for j in 0..k {
            let prob = (logits[j] - log_z).exp();
            let dlogit = (prob - if j == labels[i] { 1.0 } else { 0.0 }) * inv_b;
            let dcos = scale * dlogit;
            for t in 0..d {
                grad_xn[i][t] += dcos * wn[j][t];
                grad_wn[j][t] += dcos * xn[i][t];
            }
        }
    }

    let gx: Vec<f64> = (0..b)
        .flat_map(|i| l2_normalize_backward(&xn[i], xr[i], &grad_xn[i]))
        .collect();
    let gw: Vec<f64> = (0..k)
        .flat_map(|j| l2_normalize_backward(&wn[j], wr[j], &grad_wn[j]))
        .collect();
    Ok(CosFaceOutput {
        loss: loss * inv_b,
        grad_embeddings: Tensor::new(vec![b, d], gx)?,
        grad_weights: Tensor::new(vec![k, d], gw)?,
    })
}
