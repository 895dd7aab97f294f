//! AdamW (decoupled weight decay) and the warmup + cosine LR schedule.

use std::collections::BTreeMap;

use crate::diffcore::{NdArray, ParameterStore};
use crate::error::Result;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Linear warmup to `base`, then cosine decay to `min`.
#[derive(Debug, Clone, Copy)]
pub struct LrSchedule {
    pub base: f64,
    pub min: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn lr_at(&self, step: usize) -> f64 {
        if self.warmup_steps > 0 && step < self.warmup_steps {
            return self.base * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = (self.total_steps.max(self.warmup_steps + 1) - self.warmup_steps) as f64;
        let progress = ((step - self.warmup_steps) as f64 / span).min(1.0);
        self.min + 0.5 * (self.base - self.min) * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// AdamW over a [`ParameterStore`]'s accumulated gradients. Weight decay is
/// decoupled (applied to the parameter, not the moment estimates).
pub struct AdamW {
    weight_decay: f64,
    step_count: usize,
    first: BTreeMap<String, NdArray<f64>>,
    second: BTreeMap<String, NdArray<f64>>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        AdamW { weight_decay, step_count: 0, first: BTreeMap::new(), second: BTreeMap::new() }
    }

    /// Apply one update from the store's accumulated gradients. Names starting
    /// with any frozen prefix are skipped entirely.
    pub fn step(
        &mut self,
        store: &mut ParameterStore<f64>,
        lr: f64,
        frozen_prefixes: &[String],
    ) -> Result<()> {
        self.step_count += 1;
        let t = self.step_count as f64;
        let bc1 = 1.0 - BETA1.powf(t);
        let bc2 = 1.0 - BETA2.powf(t);
        let names: Vec<String> = store.names().map(String::from).collect();
        for name in names {
            if frozen_prefixes.iter().any(|p| name.starts_with(p.as_str())) {
                continue;
            }
            let grad = store.grad(&name)?;
            let m = self
                .first
                .entry(name.clone())
                .or_insert_with(|| NdArray::zeros(grad.shape()));
            let v = self
                .second
                .entry(name.clone())
                .or_insert_with(|| NdArray::zeros(grad.shape()));
            let param = store.get_mut(&name)?;
            for ((p, g), (mi, vi)) in param
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
            {
                *mi = BETA1 * *mi + (1.0 - BETA1) * g;
                *vi = BETA2 * *vi + (1.0 - BETA2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *p -= lr * (m_hat / (v_hat.sqrt() + EPS) + self.weight_decay * *p);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let s = LrSchedule { base: 2e-4, min: 1e-6, warmup_steps: 10, total_steps: 110 };
        assert!((s.lr_at(0) - 2e-5).abs() < 1e-12);
        assert!((s.lr_at(9) - 2e-4).abs() < 1e-12);
        assert!((s.lr_at(10) - 2e-4).abs() < 1e-9);
        assert!((s.lr_at(109) - 1e-6) < 1e-7);
        // monotone decreasing after warmup
        let mut prev = s.lr_at(10);
        for t in 11..110 {
            let cur = s.lr_at(t);
            assert!(cur <= prev + 1e-15);
            prev = cur;
        }
    }

    #[test]
    fn adamw_minimizes_quadratic() {
        // minimize (w - 3)^2 elementwise
        let mut store = ParameterStore::<f64>::new();
        store.insert("w", NdArray::from_vec(vec![0.0, 10.0])).unwrap();
        let mut opt = AdamW::new(0.0);
        for _ in 0..2000 {
            store.zero_grads();
            let w = store.get("w").unwrap().clone();
            let grad: Vec<f64> = w.data().iter().map(|x| 2.0 * (x - 3.0)).collect();
            store.accumulate_grad("w", NdArray::from_vec(grad)).unwrap();
            opt.step(&mut store, 0.05, &[]).unwrap();
        }
        for &x in store.get("w").unwrap().data() {
            assert!((x - 3.0).abs() < 1e-3, "w = {x}");
        }
    }

    #[test]
    fn frozen_prefixes_skip_updates() {
        let mut store = ParameterStore::<f64>::new();
        store.insert("force/head", NdArray::from_vec(vec![1.0])).unwrap();
        store.insert("trunk/w", NdArray::from_vec(vec![1.0])).unwrap();
        let mut opt = AdamW::new(0.1);
        store.accumulate_grad("force/head", NdArray::from_vec(vec![1.0])).unwrap();
        store.accumulate_grad("trunk/w", NdArray::from_vec(vec![1.0])).unwrap();
        opt.step(&mut store, 0.1, &["force/".to_string()]).unwrap();
        assert_eq!(store.get("force/head").unwrap().data(), &[1.0]);
        assert_ne!(store.get("trunk/w").unwrap().data(), &[1.0]);
    }
}
