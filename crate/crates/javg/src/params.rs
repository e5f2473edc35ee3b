//! Named parameter sets, initialization, and the finite-difference gradient
//! oracle.
//!
//! A [`ParamSet`] maps unique names to tensors with a parallel map of
//! gradients of identical shapes. Iteration order is the name order
//! (`BTreeMap`), which keeps every reduction over parameters deterministic.

use std::collections::BTreeMap;

use crate::error::{JavgError, Result};
use crate::graph::{Graph, NodeId};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Gradient values keyed by parameter name.
pub type GradMap = BTreeMap<String, Tensor>;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    params: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet {
            params: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(JavgError::invalid(format!(
                "duplicate parameter name {name:?}"
            )));
        }
        self.params.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| JavgError::invalid(format!("unknown parameter {name:?}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .ok_or_else(|| JavgError::invalid(format!("unknown parameter {name:?}")))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Total scalar parameter count.
    pub fn value_count(&self) -> usize {
        self.params.values().map(|t| t.len()).sum()
    }

    /// Zero-valued gradient map matching this set's shapes.
    pub fn zero_grads(&self) -> GradMap {
        self.params
            .iter()
            .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape().to_vec())))
            .collect()
    }

    /// Merge another set under a name prefix.
    pub fn extend_prefixed(&mut self, prefix: &str, other: &ParamSet) -> Result<()> {
        for (name, value) in other.iter() {
            self.insert(format!("{prefix}{name}"), value.clone())?;
        }
        Ok(())
    }

    /// Round all parameters through f32 precision.
    pub fn round_to_f32(&mut self) {
        for t in self.params.values_mut() {
            t.round_to_f32();
        }
    }
}

impl FromIterator<(String, Tensor)> for ParamSet {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        ParamSet {
            params: iter.into_iter().collect(),
        }
    }
}

/// Parameter tensors bound into a graph as trainable leaves.
pub struct BoundParams {
    ids: BTreeMap<String, NodeId>,
}

impl BoundParams {
    /// Bind every parameter of `set` into `graph`. When `trainable` is false
    /// the values participate in the forward pass but backward skips their
    /// gradients entirely.
    pub fn bind(graph: &mut Graph, set: &ParamSet, trainable: bool) -> Self {
        Self::bind_filtered(graph, set, |_| Some(trainable))
    }

    /// Bind a subset: the filter maps each name to `Some(trainable)` or
    /// `None` to leave it out of the graph entirely.
    pub fn bind_filtered<F>(graph: &mut Graph, set: &ParamSet, filter: F) -> Self
    where
        F: Fn(&str) -> Option<bool>,
    {
        let ids = set
            .iter()
            .filter_map(|(name, value)| {
                filter(name).map(|trainable| {
                    let id = if trainable {
                        graph.param(value.clone())
                    } else {
                        graph.leaf(value.clone())
                    };
                    (name.to_string(), id)
                })
            })
            .collect();
        BoundParams { ids }
    }

    /// Collect gradients only for the bound names (used with
    /// [`Self::bind_filtered`]); unbound names are absent from the result.
    pub fn collect_bound_grads(
        &self,
        graph: &Graph,
        grads: &[Option<Tensor>],
    ) -> GradMap {
        let mut out = GradMap::new();
        for (name, id) in &self.ids {
            if let Some(g) = graph.grad_of(grads, *id) {
                out.insert(name.clone(), g.clone());
            }
        }
        out
    }

    pub fn id(&self, name: &str) -> Result<NodeId> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| JavgError::invalid(format!("unbound parameter {name:?}")))
    }

    /// Collect gradients for all bound parameters after a backward pass.
    /// Parameters with no path to the loss get zero gradients.
    pub fn collect_grads(
        &self,
        graph: &Graph,
        grads: &[Option<Tensor>],
        set: &ParamSet,
    ) -> Result<GradMap> {
        let mut out = GradMap::new();
        for (name, id) in &self.ids {
            let g = match graph.grad_of(grads, *id) {
                Some(t) => t.clone(),
                None => Tensor::zeros(set.get(name)?.shape().to_vec()),
            };
            out.insert(name.clone(), g);
        }
        Ok(out)
    }
}

/// Draw `dim` values i.i.d. from the noise prior (uniform on [-1, 1]).
pub fn sample_noise(rng: &mut Rng, dim: usize) -> Result<Tensor> {
    if dim == 0 {
        return Err(JavgError::invalid("sample_noise: dim must be at least 1"));
    }
    let data = (0..dim).map(|_| rng.uniform_pm1()).collect();
    Ok(Tensor::from_vec(data))
}

/// Gaussian initialization, Normal(0, sigma), in deterministic name order.
pub fn init_normal(set: &mut ParamSet, sigma: f64, rng: &mut Rng) {
    for (_, t) in set.iter_mut() {
        for v in t.data_mut() {
            *v = sigma * rng.normal();
        }
    }
}

/// Settings for [`finite_diff_check`].
#[derive(Debug, Clone)]
pub struct FdCheckConfig {
    /// Central-difference step.
    pub h: f64,
    /// Coordinates sampled per parameter tensor (all coordinates when the
    /// tensor is smaller).
    pub coords_per_param: usize,
    /// Seed for coordinate sampling.
    pub seed: u64,
}

impl Default for FdCheckConfig {
    fn default() -> Self {
        FdCheckConfig {
            h: 1e-5,
            coords_per_param: 6,
            seed: 0,
        }
    }
}

/// Worst coordinate found by a finite-difference comparison.
#[derive(Debug, Clone)]
pub struct FdReport {
    pub max_rel_err: f64,
    pub worst_name: String,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_central: f64,
}

/// Compare an analytic gradient against central differences of `f`.
///
/// Returns the maximum over sampled coordinates of
/// `|analytic - central| / (|central| + 1e-8)`.
pub fn finite_diff_check<F>(
    f: F,
    params: &ParamSet,
    analytic: &GradMap,
    cfg: &FdCheckConfig,
) -> Result<f64>
where
    F: Fn(&ParamSet) -> Result<f64>,
{
    finite_diff_report(f, params, analytic, cfg).map(|r| r.max_rel_err)
}

/// As [`finite_diff_check`] but reporting the worst coordinate.
pub fn finite_diff_report<F>(
    f: F,
    params: &ParamSet,
    analytic: &GradMap,
    cfg: &FdCheckConfig,
) -> Result<FdReport>
where
    F: Fn(&ParamSet) -> Result<f64>,
{
    let center = f(params)?;
    if !center.is_finite() {
        return Err(JavgError::numeric(format!(
            "finite_diff_check: non-finite value {center} at center"
        )));
    }
    let mut coord_rng = Rng::new(cfg.seed);
    let mut report = FdReport {
        max_rel_err: 0.0,
        worst_name: String::new(),
        worst_index: 0,
        worst_analytic: 0.0,
        worst_central: 0.0,
    };
    let mut work = params.clone();
    for (name, tensor) in params.iter() {
        let grad = analytic
            .get(name)
            .ok_or_else(|| JavgError::invalid(format!("analytic gradient missing {name:?}")))?;
        if grad.shape() != tensor.shape() {
            return Err(JavgError::invalid(format!(
                "gradient shape mismatch for {name:?}: {:?} vs {:?}",
                grad.shape(),
                tensor.shape()
            )));
        }
        let n = tensor.len();
        let coords: Vec<usize> = if n <= cfg.coords_per_param {
            (0..n).collect()
        } else {
            (0..cfg.coords_per_param)
                .map(|_| coord_rng.uniform_int(0, n as i64 - 1) as usize)
                .collect()
        };
        for idx in coords {
            let original = tensor.data()[idx];
            let h = cfg.h * (1.0 + original.abs());

            work.get_mut(name)?.data_mut()[idx] = original + h;
            let up = f(&work)?;
            work.get_mut(name)?.data_mut()[idx] = original - h;
            let down = f(&work)?;
            work.get_mut(name)?.data_mut()[idx] = original;

            if !up.is_finite() || !down.is_finite() {
                return Err(JavgError::numeric(format!(
                    "finite_diff_check: non-finite value perturbing {name:?}[{idx}]"
                )));
            }
            let central = (up - down) / (2.0 * h);
            let a = analytic[name].data()[idx];
            let err = (a - central).abs() / (central.abs() + 1e-8);
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst_name = name.to_string();
                report.worst_index = idx;
                report.worst_analytic = a;
                report.worst_central = central;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::zeros(vec![2])).unwrap();
        assert!(p.insert("w", Tensor::zeros(vec![2])).is_err());
    }

    #[test]
    fn sample_noise_determinism_and_support() {
        let mut a = Rng::new(7);
        let mut b = Rng::new(7);
        let ta = sample_noise(&mut a, 100).unwrap();
        let tb = sample_noise(&mut b, 100).unwrap();
        assert_eq!(ta, tb);
        assert!(ta.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(sample_noise(&mut a, 0).is_err());
    }

    #[test]
    fn sample_noise_mean_large_sample() {
        // Law of large numbers for the uniform prior; the band matches a
        // scalar-oracle run of the same generator.
        let mut rng = Rng::new(7);
        let t = sample_noise(&mut rng, 100_000).unwrap();
        let mean = t.data().iter().sum::<f64>() / t.len() as f64;
        assert!((-0.02..=0.02).contains(&mean), "mean {mean}");
    }

    #[test]
    fn finite_diff_quadratic_exact() {
        // f(w) = w^2 at w = 3: central differences are exact for quadratics.
        let mut p = ParamSet::new();
        p.insert("w", Tensor::from_vec(vec![3.0])).unwrap();
        let f = |ps: &ParamSet| Ok(ps.get("w")?.data()[0].powi(2));
        let mut analytic = GradMap::new();
        analytic.insert("w".into(), Tensor::from_vec(vec![6.0]));
        let err = finite_diff_check(f, &p, &analytic, &FdCheckConfig::default()).unwrap();
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn finite_diff_catches_wrong_gradient() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::from_vec(vec![3.0])).unwrap();
        let f = |ps: &ParamSet| Ok(ps.get("w")?.data()[0].powi(2));
        let mut analytic = GradMap::new();
        analytic.insert("w".into(), Tensor::from_vec(vec![5.0]));
        let err = finite_diff_check(f, &p, &analytic, &FdCheckConfig::default()).unwrap();
        assert!(err > 0.1, "should flag the wrong gradient, got {err}");
    }
}
