use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }
}

impl Adam {
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Apply one update. Every gradient is checked for finiteness before
    /// any parameter is touched; a NaN or infinity names its tensor.
    pub fn step(
        &mut self,
        params: &mut BTreeMap<String, Tensor<f32>>,
        grads: &BTreeMap<String, Vec<f32>>,
        lr: f64,
    ) -> Result<()> {
        for (name, g) in grads {
            let p = params
                .get(name)
                .ok_or_else(|| Error::Training(format!("gradient for unknown parameter {name}")))?;
            if p.shape().numel() != g.len() {
                return Err(Error::dim(format!(
                    "gradient for {name} has {} values, parameter has {}",
                    g.len(),
                    p.shape().numel()
                )));
            }
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Training(format!(
                    "non-finite gradient {} in {name} at index {i}",
                    g[i]
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, g) in grads {
            let p = params.get_mut(name).expect("checked above");
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.len()]);
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.len()]);
            for (((w, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                let gi = gi as f64;
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let update = lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
                *w = (*w as f64 - update) as f32;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(values: Vec<f32>) -> BTreeMap<String, Tensor<f32>> {
        let n = values.len();
        BTreeMap::from([("w".to_string(), Tensor::new([1, 1, 1, n], values).unwrap())])
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = one(vec![0.5, -1.0]);
        let before = p.clone();
        let mut opt = Adam::default();
        for _ in 0..3 {
            opt.step(
                &mut p,
                &BTreeMap::from([("w".into(), vec![0.0, 0.0])]),
                1e-3,
            )
            .unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_opposes_gradient() {
        let mut p = one(vec![0.0, 0.0]);
        Adam::default()
            .step(
                &mut p,
                &BTreeMap::from([("w".into(), vec![3.0, -0.01])]),
                1e-3,
            )
            .unwrap();
        let d = p["w"].data();
        assert!(d[0] < 0.0 && d[1] > 0.0);
        // bias-corrected first step has magnitude ~lr
        assert!((d[0] + 1e-3).abs() < 1e-6);
    }

    #[test]
    fn nan_names_the_layer() {
        let mut p = one(vec![0.0]);
        let err = Adam::default()
            .step(
                &mut p,
                &BTreeMap::from([("w".into(), vec![f32::NAN])]),
                1e-3,
            )
            .unwrap_err();
        assert!(
            matches!(err, Error::Training(ref m) if m.contains("w")),
            "{err}"
        );
        assert_eq!(p["w"].data(), &[0.0]);
    }
}
