//! Central-difference gradient checking.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::Serialize;

use super::graph::{backprop, evaluate, OpGraph};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    /// Maximum accepted relative error.
    pub tolerance: f64,
    /// Denominator floor for the relative error, so coordinates whose true
    /// gradient is ~0 are judged on absolute error instead.
    pub abs_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            tolerance: 1e-4,
            abs_floor: 1e-5,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamError {
    pub name: String,
    pub max_rel: f64,
    pub max_abs: f64,
    pub worst_index: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradReport {
    pub params: Vec<ParamError>,
    pub tolerance: f64,
    pub pass: bool,
}

impl GradReport {
    pub fn max_rel(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel).fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.params.iter().map(|p| p.max_abs).fold(0.0, f64::max)
    }

    /// Merge several reports into one (pass iff all pass).
    pub fn merge(reports: impl IntoIterator<Item = GradReport>, tolerance: f64) -> GradReport {
        let params: Vec<ParamError> = reports.into_iter().flat_map(|r| r.params).collect();
        let pass = params.iter().all(|p| p.max_rel <= tolerance);
        GradReport {
            params,
            tolerance,
            pass,
        }
    }

    /// Collapse entries sharing a name into their worst case, keeping first
    /// appearance order.
    pub fn worst_by_name(&self) -> GradReport {
        let mut params: Vec<ParamError> = Vec::new();
        for p in &self.params {
            match params.iter_mut().find(|q| q.name == p.name) {
                Some(q) => {
                    if p.max_rel > q.max_rel {
                        q.max_rel = p.max_rel;
                        q.worst_index = p.worst_index;
                    }
                    q.max_abs = q.max_abs.max(p.max_abs);
                }
                None => params.push(p.clone()),
            }
        }
        GradReport {
            params,
            tolerance: self.tolerance,
            pass: self.pass,
        }
    }
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<28} {:>12} {:>12} {:>8}", "parameter", "max_rel", "max_abs", "status")?;
        for p in &self.params {
            writeln!(
                f,
                "{:<28} {:>12.3e} {:>12.3e} {:>8}",
                p.name,
                p.max_rel,
                p.max_abs,
                if p.max_rel <= self.tolerance { "ok" } else { "FAIL" }
            )?;
        }
        write!(
            f,
            "tolerance {:.1e}: {}",
            self.tolerance,
            if self.pass { "PASS" } else { "FAIL" }
        )
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compare analytic gradients against central differences of `f`.
///
/// Every tensor in `inputs` with `requires_grad` set is perturbed coordinate
/// by coordinate; `analytic` must hold a same-shaped gradient for each.
pub fn check_gradients<F>(
    inputs: &BTreeMap<String, Tensor>,
    analytic: &BTreeMap<String, Tensor>,
    mut f: F,
    cfg: &GradCheckConfig,
) -> Result<GradReport>
where
    F: FnMut(&BTreeMap<String, Tensor>) -> Result<f64>,
{
    if cfg.epsilon <= 0.0 || !cfg.epsilon.is_finite() {
        return Err(Error::invalid(format!("epsilon must be > 0, got {}", cfg.epsilon)));
    }
    let mut work = inputs.clone();
    let mut params = Vec::new();
    for (name, t) in inputs {
        if !t.requires_grad {
            continue;
        }
        if !t.is_finite() {
            return Err(Error::invalid(format!("input `{name}` is not finite")));
        }
        let ga = analytic
            .get(name)
            .ok_or_else(|| Error::MissingInput(format!("analytic gradient for `{name}`")))?;
        if ga.shape() != t.shape() {
            return Err(Error::shape(
                "grad_check",
                format!("`{name}` gradient {:?} vs input {:?}", ga.shape(), t.shape()),
            ));
        }
        let mut pe = ParamError {
            name: name.clone(),
            max_rel: 0.0,
            max_abs: 0.0,
            worst_index: 0,
        };
        for i in 0..t.len() {
            let orig = t.data()[i];
            work.get_mut(name).unwrap().data_mut()[i] = orig + cfg.epsilon;
            let plus = f(&work)?;
            work.get_mut(name).unwrap().data_mut()[i] = orig - cfg.epsilon;
            let minus = f(&work)?;
            work.get_mut(name).unwrap().data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFiniteProbe {
                    name: name.clone(),
                    index: i,
                });
            }
            let numeric = (plus - minus) / (2.0 * cfg.epsilon);
            let a = ga.data()[i];
            let abs = (a - numeric).abs();
            let rel = relative_error(a, numeric, cfg.abs_floor);
            pe.max_abs = pe.max_abs.max(abs);
            if rel > pe.max_rel {
                pe.max_rel = rel;
                pe.worst_index = i;
            }
        }
        params.push(pe);
    }
    let pass = params.iter().all(|p| p.max_rel <= cfg.tolerance);
    Ok(GradReport {
        params,
        tolerance: cfg.tolerance,
        pass,
    })
}

/// Gradient check of an op graph. The checked scalar is the sum of the graph
/// output, i.e. backprop is seeded with ones.
pub fn grad_check(graph: &OpGraph, inputs: &HashMap<String, Tensor>, epsilon: f64) -> Result<GradReport> {
    grad_check_with(
        graph,
        inputs,
        &GradCheckConfig {
            epsilon,
            ..GradCheckConfig::default()
        },
    )
}

pub fn grad_check_with(
    graph: &OpGraph,
    inputs: &HashMap<String, Tensor>,
    cfg: &GradCheckConfig,
) -> Result<GradReport> {
    let fwd = evaluate(graph, inputs)?;
    let seed = fwd.output().map(|_| 1.0);
    let analytic = backprop(graph, &fwd, &seed)?;
    let ordered: BTreeMap<String, Tensor> = inputs.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    check_gradients(
        &ordered,
        &analytic,
        |probe| {
            let map: HashMap<String, Tensor> = probe.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
            match evaluate(graph, &map) {
                Ok(f) => Ok(f.output().data().iter().sum()),
                Err(Error::NonFinite { .. }) => Ok(f64::NAN),
                Err(e) => Err(e),
            }
        },
        cfg,
    )
}
