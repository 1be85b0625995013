//! Unit tensors, unit/auxiliary representations and the divergence metric.
//!
//! Every client probes its model with the same constant input. The softmax of
//! the logits on that input is the *unit representation* `I`, and the output
//! of the feature extractor is the *auxiliary representation*. Clients compare
//! unit representations with the symmetrized KL divergence
//! `Div(i, j) = KL(I_i || I_j) / 2 + KL(I_j || I_i) / 2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{softmax, LayeredModel};

/// Floor applied to probabilities before taking logarithms.
pub const DEFAULT_EPS: f64 = 1e-12;

pub const DEFAULT_UNIT_FILL: f64 = 1.0;

/// How the entries of a unit tensor are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum UnitFill {
    Constant(f64),
    /// Mean of a subset of local samples. Accepted for completeness; tensors
    /// are only ever built from constants.
    MeanOfSubset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitTensor {
    values: Vec<f64>,
    fill: UnitFill,
}

impl UnitTensor {
    pub fn new(len: usize, fill: UnitFill) -> Result<Self> {
        match fill {
            UnitFill::Constant(c) => make_unit_tensor(len, c),
            UnitFill::MeanOfSubset => Err(Error::Unsupported(
                "mean-of-subset unit tensors are not implemented; use a constant fill".into(),
            )),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn fill(&self) -> UnitFill {
        self.fill
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn make_unit_tensor(len: usize, fill: f64) -> Result<UnitTensor> {
    if len == 0 {
        return Err(Error::shape("unit tensor needs a positive length"));
    }
    if !fill.is_finite() {
        return Err(Error::Numeric("unit tensor fill must be finite".into()));
    }
    Ok(UnitTensor {
        values: vec![fill; len],
        fill: UnitFill::Constant(fill),
    })
}

/// Probability vector a model assigns to the unit tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitRep {
    probs: Vec<f64>,
}

impl UnitRep {
    /// Validates that `probs` lies on the simplex (within 1e-9).
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::shape("empty probability vector"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Numeric(
                "probabilities must be finite and non-negative".into(),
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Numeric(format!("probabilities sum to {total}")));
        }
        Ok(Self { probs })
    }

    /// Uniform distribution over `k` outcomes.
    pub fn uniform(k: usize) -> Result<Self> {
        Self::new(vec![1.0 / k as f64; k])
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Feature-extractor output on the unit tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxRep {
    features: Vec<f64>,
}

impl AuxRep {
    pub fn new(features: Vec<f64>) -> Result<Self> {
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("auxiliary representation must be finite".into()));
        }
        Ok(Self { features })
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

pub fn unit_representation(model: &LayeredModel, unit: &UnitTensor) -> Result<UnitRep> {
    let logits = model.forward_one(unit.values())?;
    UnitRep::new(softmax(&logits)?)
}

pub fn aux_representation(model: &LayeredModel, unit: &UnitTensor) -> Result<AuxRep> {
    AuxRep::new(model.feature_forward_one(unit.values())?)
}

fn clamp_normalize(p: &[f64], eps: f64) -> Vec<f64> {
    let clamped: Vec<f64> = p.iter().map(|v| v.max(eps)).collect();
    let total: f64 = clamped.iter().sum();
    clamped.into_iter().map(|v| v / total).collect()
}

/// `KL(p || q)` in nats over raw slices, after flooring both at `eps` and renormalizing.
pub fn kl_divergence(p: &[f64], q: &[f64], eps: f64) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::shape(format!(
            "distributions have lengths {} and {}",
            p.len(),
            q.len()
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::Precondition(format!("eps must be > 0, got {eps}")));
    }
    let p = clamp_normalize(p, eps);
    let q = clamp_normalize(q, eps);
    Ok(p.iter().zip(&q).map(|(a, b)| a * (a / b).ln()).sum())
}

pub fn kl_div(p: &UnitRep, q: &UnitRep, eps: f64) -> Result<f64> {
    kl_divergence(p.probs(), q.probs(), eps)
}

/// Symmetrized KL with the default floor.
pub fn js_div(p: &UnitRep, q: &UnitRep) -> Result<f64> {
    js_div_eps(p, q, DEFAULT_EPS)
}

pub fn js_div_eps(p: &UnitRep, q: &UnitRep, eps: f64) -> Result<f64> {
    let pq = kl_div(p, q, eps)?;
    let qp = kl_div(q, p, eps)?;
    Ok(0.5 * pq + 0.5 * qp)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn rep(v: &[f64]) -> UnitRep {
        UnitRep::new(v.to_vec()).unwrap()
    }

    #[test]
    fn unit_tensor_fills() {
        assert_eq!(make_unit_tensor(4, 1.0).unwrap().values(), &[1.0; 4]);
        assert_eq!(make_unit_tensor(3, 0.0).unwrap().values(), &[0.0; 3]);
        assert_eq!(make_unit_tensor(2, 0.5).unwrap().values(), &[0.5, 0.5]);
        assert!(make_unit_tensor(0, 1.0).is_err());
        assert!(matches!(
            UnitTensor::new(3, UnitFill::MeanOfSubset),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn zero_model_has_uniform_representation() {
        let m = LayeredModel::zeros(&[6, 8, 4, 5], 2).unwrap();
        let u = make_unit_tensor(6, 1.0).unwrap();
        let r = unit_representation(&m, &u).unwrap();
        for p in r.probs() {
            assert!((p - 0.2).abs() < 1e-15);
        }
        let aux = aux_representation(&m, &u).unwrap();
        assert_eq!(aux.features(), &[0.0; 4]);
    }

    #[test]
    fn identical_models_give_identical_representations() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let a = LayeredModel::mlp(&[6, 8, 4, 3], 2, &mut rng).unwrap();
        let b = a.clone();
        let u = make_unit_tensor(6, 1.0).unwrap();
        assert_eq!(
            unit_representation(&a, &u).unwrap(),
            unit_representation(&b, &u).unwrap()
        );
        assert_eq!(
            aux_representation(&a, &u).unwrap(),
            aux_representation(&b, &u).unwrap()
        );
    }

    #[test]
    fn aux_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(78);
        let m = LayeredModel::mlp(&[3, 4, 2, 2], 2, &mut rng).unwrap();
        let u = make_unit_tensor(3, 1.0).unwrap();
        let mut a = vec![1.0; 3];
        for layer in &m.layers()[..2] {
            a = (0..layer.out_dim())
                .map(|o| {
                    let s: f64 = layer.bias()[o]
                        + (0..layer.in_dim())
                            .map(|i| layer.weights()[o * layer.in_dim() + i] * a[i])
                            .sum::<f64>();
                    s.max(0.0)
                })
                .collect();
        }
        let got = aux_representation(&m, &u).unwrap();
        for (g, w) in got.features().iter().zip(&a) {
            assert!((g - w).abs() < 1e-14);
        }
    }

    #[test]
    fn kl_hand_case() {
        let v = kl_div(&rep(&[0.5, 0.5]), &rep(&[0.25, 0.75]), DEFAULT_EPS).unwrap();
        let direct = 0.5 * (0.5f64 / 0.25).ln() + 0.5 * (0.5f64 / 0.75).ln();
        assert!((v - direct).abs() < 1e-12);
        assert!((v - 0.14384).abs() < 1e-5);
    }

    #[test]
    fn kl_of_disjoint_supports_is_eps_limited() {
        let v = kl_div(&rep(&[1.0, 0.0]), &rep(&[0.0, 1.0]), 1e-12).unwrap();
        // clamp [1, 1e-12] and [1e-12, 1], renormalize, then sum
        let z: f64 = 1.0 + 1e-12;
        let (p0, p1) = (1.0 / z, 1e-12 / z);
        let (q0, q1) = (1e-12 / z, 1.0 / z);
        let direct = p0 * (p0 / q0).ln() + p1 * (p1 / q1).ln();
        assert!((v - direct).abs() < 1e-9);
        assert!((v - 27.631).abs() < 1e-3);
    }

    #[test]
    fn js_hand_case() {
        let p = rep(&[0.5, 0.5]);
        let q = rep(&[0.25, 0.75]);
        let kl_pq = 0.5 * (0.5f64 / 0.25).ln() + 0.5 * (0.5f64 / 0.75).ln();
        let kl_qp = 0.25 * (0.25f64 / 0.5).ln() + 0.75 * (0.75f64 / 0.5).ln();
        assert!((kl_qp - 0.13081).abs() < 1e-5);
        let v = js_div(&p, &q).unwrap();
        assert!((v - 0.5 * (kl_pq + kl_qp)).abs() < 1e-12);
        assert!((v - 0.13733).abs() < 1e-5);
    }

    #[test]
    fn length_mismatch_is_shape_error() {
        let p = rep(&[0.5, 0.5]);
        let q = rep(&[0.2, 0.3, 0.5]);
        assert!(matches!(kl_div(&p, &q, 1e-12), Err(Error::Shape(_))));
        assert!(matches!(js_div(&p, &q), Err(Error::Shape(_))));
    }

    #[test]
    fn unit_rep_rejects_off_simplex() {
        assert!(UnitRep::new(vec![0.5, 0.6]).is_err());
        assert!(UnitRep::new(vec![-0.1, 1.1]).is_err());
        assert!(UnitRep::new(vec![]).is_err());
    }

    fn simplex(len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, len).prop_filter_map("zero mass", |v| {
            let s: f64 = v.iter().sum();
            (s > 1e-6).then(|| v.iter().map(|x| x / s).collect())
        })
    }

    fn positive_simplex(len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.01f64..1.0, len).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn divergence_axioms(pair in (2usize..8).prop_flat_map(|k| (simplex(k), simplex(k)))) {
            let (p, q) = pair;
            let (p, q) = (UnitRep::new(p).unwrap(), UnitRep::new(q).unwrap());
            let pq = js_div(&p, &q).unwrap();
            let qp = js_div(&q, &p).unwrap();
            prop_assert!((pq - qp).abs() <= 1e-12);
            prop_assert!(pq >= -1e-12);
            prop_assert!(kl_div(&p, &q, DEFAULT_EPS).unwrap() >= -1e-12);
            prop_assert!(js_div(&p, &p).unwrap() <= 1e-12);
        }

        #[test]
        fn eps_stability_on_positive_inputs(
            pair in (2usize..8).prop_flat_map(|k| (positive_simplex(k), positive_simplex(k)))
        ) {
            let (p, q) = (UnitRep::new(pair.0).unwrap(), UnitRep::new(pair.1).unwrap());
            let a = js_div_eps(&p, &q, 1e-9).unwrap();
            let b = js_div_eps(&p, &q, 1e-12).unwrap();
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }
}
