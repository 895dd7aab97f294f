//! Training: loss computation, AdamW with cosine/warmup schedule, the
//! training loop with checkpoint selection, conservative fine-tuning, and the
//! ablation grid driver.

pub mod optimizer;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, LabeledFrame, Split};
use crate::diffcore::{NdArray, ParameterStore, Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::{build_neighbor_graph, AtomicSystem};
use crate::model::{
    build_model_graph, has_direct_head, init_parameters, predict, BuildOptions, ForceMode,
    ModelConfig, PredictionOutput,
};

pub use optimizer::{AdamW, LrSchedule};

/// Numerical smoothing under the L1 terms: |x| ≈ sqrt(x² + δ).
const ABS_SMOOTHING: f64 = 1e-24;
/// Displacement step (Å) for Hessian-vector products by gradient differences.
const HVP_STEP: f64 = 1e-3;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub base_lr: f64,
    pub min_lr: f64,
    pub warmup_fraction: f64,
    pub weight_decay: f64,
    pub lambda_energy: f64,
    pub lambda_force: f64,
    pub grad_clip: f64,
    pub seed: u64,
    pub rotation_augment: bool,
    /// Parameter-name prefixes excluded from optimizer updates.
    #[serde(default)]
    pub frozen_prefixes: Vec<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            epochs: 30,
            base_lr: 2e-4,
            min_lr: 1e-6,
            warmup_fraction: 0.05,
            weight_decay: 1e-3,
            lambda_energy: 4.0,
            lambda_force: 100.0,
            grad_clip: 10.0,
            seed: 0,
            rotation_augment: true,
            frozen_prefixes: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_energy < 0.0 || self.lambda_force < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if self.lambda_energy == 0.0 && self.lambda_force == 0.0 {
            return Err(Error::Config("at least one loss weight must be positive".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        Ok(())
    }
}

/// Metrics in the reference conventions: energy-per-atom MAE in meV, force
/// MAE per component in meV/Å.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossReport {
    pub epoch: usize,
    pub step: usize,
    pub energy_mae_mev_per_atom: f64,
    pub force_mae_mev_per_ang: f64,
    pub total_loss: f64,
    pub split: String,
}

/// Host-side loss/metrics for one frame.
pub fn compute_loss(
    pred: &PredictionOutput,
    reference: &LabeledFrame,
    lambda_energy: f64,
    lambda_force: f64,
) -> Result<LossReport> {
    let n = reference.system.len() as f64;
    let e_ref = reference
        .energy
        .ok_or_else(|| Error::invalid("compute_loss", "reference energy missing"))?;
    if !e_ref.is_finite() {
        return Err(Error::NonFinite { context: "reference energy".into() });
    }
    let e_err = (pred.energy - e_ref).abs() / n;
    let f_err = match &reference.forces {
        Some(f_ref) => {
            if f_ref.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { context: "reference forces".into() });
            }
            let total: f64 = pred
                .forces
                .iter()
                .zip(f_ref.iter())
                .flat_map(|(a, b)| (0..3).map(move |d| (a[d] - b[d]).abs()))
                .sum();
            total / (3.0 * n)
        }
        None => 0.0,
    };
    Ok(LossReport {
        epoch: 0,
        step: 0,
        energy_mae_mev_per_atom: e_err * 1000.0,
        force_mae_mev_per_ang: f_err * 1000.0,
        total_loss: lambda_energy * e_err + lambda_force * f_err,
        split: String::new(),
    })
}

fn smooth_abs_var<'t>(x: &Var<'t, f64>) -> Result<Var<'t, f64>> {
    x.square()?.add_scalar(ABS_SMOOTHING)?.sqrt()
}

fn rotated_frame(frame: &LabeledFrame, rot: &[[f64; 3]; 3]) -> LabeledFrame {
    let mut out = frame.clone();
    out.system = frame.system.rotated(rot);
    if let Some(forces) = &mut out.forces {
        for f in forces.iter_mut() {
            *f = crate::geometry::matvec(rot, *f);
        }
    }
    out
}

/// One frame's gradient accumulation in direct-force mode: the loss is fully
/// on-tape (energy term + per-component L1 on the direct forces).
fn accumulate_direct(
    frame: &LabeledFrame,
    cfg: &ModelConfig,
    store: &mut ParameterStore<f64>,
    tc: &TrainConfig,
) -> Result<f64> {
    let sys = &frame.system;
    let n = sys.len() as f64;
    let graph = build_neighbor_graph(sys, cfg.k, cfg.r_cut, cfg.knn)?;
    let tape = Tape::<f64>::new();
    let opts = BuildOptions { with_direct_forces: tc.lambda_force > 0.0, with_strain: false };
    let g = build_model_graph(&tape, sys, &graph, cfg, store, opts, None)?;
    let e_ref = frame.energy.ok_or_else(|| Error::invalid("train", "missing energy label"))?;
    let mut loss = smooth_abs_var(&g.total_energy.add_scalar(-e_ref)?)?
        .scale(tc.lambda_energy / n)?;
    if tc.lambda_force > 0.0 {
        let f_ref = frame
            .forces
            .as_ref()
            .ok_or_else(|| Error::invalid("train", "missing force labels"))?;
        let flat: Vec<f64> = f_ref.iter().flatten().copied().collect();
        let refs = tape.constant(NdArray::new(vec![sys.len(), 3], flat)?);
        let diff = g.direct_forces.as_ref().expect("direct forces requested").sub(&refs)?;
        let f_term = smooth_abs_var(&diff)?.mean_all()?.scale(tc.lambda_force)?;
        loss = loss.add(&f_term)?;
    }
    let loss_value = loss.value().scalar_value()?;
    let grads = loss.backward()?;
    g.bound.accumulate_grads(&grads, store)?;
    Ok(loss_value)
}

/// One frame's gradient accumulation in conservative mode. The energy term is
/// on-tape; the force term's parameter gradient needs d²E/dx dθ, obtained as a
/// Hessian-vector product by central differences of ∇θE along the force-residual
/// sign direction (the exact L1 subgradient direction).
fn accumulate_conservative(
    frame: &LabeledFrame,
    cfg: &ModelConfig,
    store: &mut ParameterStore<f64>,
    tc: &TrainConfig,
) -> Result<f64> {
    let sys = &frame.system;
    let n = sys.len() as f64;
    let e_ref = frame.energy.ok_or_else(|| Error::invalid("train", "missing energy label"))?;

    // Base evaluation: energy-term gradients and the conservative forces.
    let graph = build_neighbor_graph(sys, cfg.k, cfg.r_cut, cfg.knn)?;
    let tape = Tape::<f64>::new();
    let g = build_model_graph(&tape, sys, &graph, cfg, store, BuildOptions::default(), None)?;
    let e_loss = smooth_abs_var(&g.total_energy.add_scalar(-e_ref)?)?
        .scale(tc.lambda_energy / n)?;
    let mut loss_value = e_loss.value().scalar_value()?;
    let e_grads = e_loss.backward()?;
    g.bound.accumulate_grads(&e_grads, store)?;

    if tc.lambda_force > 0.0 {
        let f_ref = frame
            .forces
            .as_ref()
            .ok_or_else(|| Error::invalid("train", "missing force labels"))?;
        let f_grads = g.total_energy.backward()?;
        let dpos = f_grads.wrt(&g.positions)?;
        // residual signs: s_ia = sign(F_ia - Fref_ia), F = -dE/dx
        let mut signs = vec![0.0; sys.len() * 3];
        let mut f_l1 = 0.0;
        for (i, fr) in f_ref.iter().enumerate() {
            for d in 0..3 {
                let f = -dpos.data()[i * 3 + d];
                let r = f - fr[d];
                signs[i * 3 + d] = if r >= 0.0 { 1.0 } else { -1.0 };
                f_l1 += r.abs();
            }
        }
        loss_value += tc.lambda_force * f_l1 / (3.0 * n);
        // dLf/dθ = -(λF/3N)·d/dh ∇θE(x + h·s); central differences over h.
        let coeff = -tc.lambda_force / (3.0 * n) / (2.0 * HVP_STEP);
        for (sign, c) in [(1.0, coeff), (-1.0, -coeff)] {
            let mut probe = sys.clone();
            for (i, p) in probe.positions.iter_mut().enumerate() {
                for d in 0..3 {
                    p[d] += sign * HVP_STEP * signs[i * 3 + d];
                }
            }
            let pg = build_neighbor_graph(&probe, cfg.k, cfg.r_cut, cfg.knn)?;
            let ptape = Tape::<f64>::new();
            let pgraph =
                build_model_graph(&ptape, &probe, &pg, cfg, store, BuildOptions::default(), None)?;
            let pgrads = pgraph.total_energy.backward()?;
            for name in store.names().map(String::from).collect::<Vec<_>>() {
                let gv = pgrads.wrt(pgraph.bound.get(&name)?)?;
                store.accumulate_grad(&name, gv.map(|x| x * c))?;
            }
        }
    }
    Ok(loss_value)
}

fn val_metrics(
    frames: &[&LabeledFrame],
    cfg: &ModelConfig,
    store: &ParameterStore<f64>,
    tc: &TrainConfig,
) -> Result<LossReport> {
    let mut e_sum = 0.0;
    let mut f_sum = 0.0;
    let mut loss = 0.0;
    for frame in frames {
        let pred = predict(&frame.system, cfg, store)?;
        let r = compute_loss(&pred, frame, tc.lambda_energy, tc.lambda_force)?;
        e_sum += r.energy_mae_mev_per_atom;
        f_sum += r.force_mae_mev_per_ang;
        loss += r.total_loss;
    }
    let n = frames.len().max(1) as f64;
    Ok(LossReport {
        epoch: 0,
        step: 0,
        energy_mae_mev_per_atom: e_sum / n,
        force_mae_mev_per_ang: f_sum / n,
        total_loss: loss / n,
        split: "val".into(),
    })
}

pub struct TrainOutcome {
    /// Parameters after the final step.
    pub final_params: ParameterStore<f64>,
    /// Best-validation checkpoint.
    pub best_params: ParameterStore<f64>,
    pub best_val_loss: f64,
    pub reports: Vec<LossReport>,
}

/// Train from scratch (or from `init`) on the dataset's train split.
/// Deterministic per seed; keeps the best-validation checkpoint.
pub fn train(
    model_cfg: &ModelConfig,
    dataset: &Dataset,
    tc: &TrainConfig,
    init: Option<ParameterStore<f64>>,
) -> Result<TrainOutcome> {
    tc.validate()?;
    model_cfg.validate()?;
    let train_frames: Vec<&LabeledFrame> = dataset.split(Split::Train);
    let val_frames: Vec<&LabeledFrame> = dataset.split(Split::Val);
    if train_frames.is_empty() {
        return Err(Error::Config("dataset has no train split".into()));
    }
    let mut store = match init {
        Some(s) => s,
        None => init_parameters::<f64>(model_cfg, tc.seed)?,
    };
    let steps_per_epoch = train_frames.len().div_ceil(tc.batch_size);
    let total_steps = steps_per_epoch * tc.epochs;
    let schedule = LrSchedule {
        base: tc.base_lr,
        min: tc.min_lr,
        warmup_steps: ((total_steps as f64) * tc.warmup_fraction).ceil() as usize,
        total_steps,
    };
    let mut opt = AdamW::new(tc.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed ^ 0x7261696e);
    let mut reports = Vec::new();
    let mut best_val_loss = f64::INFINITY;
    let mut best_params = store.clone();
    let mut step = 0;

    for epoch in 0..tc.epochs {
        let mut order: Vec<usize> = (0..train_frames.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(tc.batch_size) {
            store.zero_grads();
            let mut batch_loss = 0.0;
            for &ix in chunk {
                let frame = if tc.rotation_augment {
                    let rot = crate::geometry::random_rotation(&mut rng);
                    rotated_frame(train_frames[ix], &rot)
                } else {
                    train_frames[ix].clone()
                };
                batch_loss += match model_cfg.force_mode {
                    ForceMode::Direct => accumulate_direct(&frame, model_cfg, &mut store, tc)?,
                    ForceMode::Conservative => {
                        accumulate_conservative(&frame, model_cfg, &mut store, tc)?
                    }
                };
            }
            let scale = 1.0 / chunk.len() as f64;
            store.scale_grads(scale);
            batch_loss *= scale;
            if !batch_loss.is_finite() || batch_loss > 1e6 {
                return Err(Error::Diverged {
                    step,
                    msg: format!("batch loss {batch_loss}"),
                });
            }
            let norm = store.grad_norm();
            if norm > tc.grad_clip {
                store.scale_grads(tc.grad_clip / norm);
            }
            let lr = schedule.lr_at(step);
            opt.step(&mut store, lr, &tc.frozen_prefixes)?;
            epoch_loss += batch_loss;
            step += 1;
        }
        let train_report = LossReport {
            epoch,
            step,
            energy_mae_mev_per_atom: f64::NAN,
            force_mae_mev_per_ang: f64::NAN,
            total_loss: epoch_loss / steps_per_epoch as f64,
            split: "train".into(),
        };
        if val_frames.is_empty() && train_report.total_loss < best_val_loss {
            best_val_loss = train_report.total_loss;
            best_params = store.clone();
        }
        reports.push(train_report);
        if !val_frames.is_empty() {
            let mut v = val_metrics(&val_frames, model_cfg, &store, tc)?;
            v.epoch = epoch;
            v.step = step;
            if v.total_loss < best_val_loss {
                best_val_loss = v.total_loss;
                best_params = store.clone();
            }
            reports.push(v);
        }
    }
    Ok(TrainOutcome { final_params: store, best_params, best_val_loss, reports })
}

/// Swap a direct-force model to gradient-based forces and continue training:
/// the direct head is frozen, the force loss is rewired to conservative
/// forces, and the optimizer state restarts.
pub fn conservative_finetune(
    model_cfg: &ModelConfig,
    params: ParameterStore<f64>,
    dataset: &Dataset,
    tc: &TrainConfig,
) -> Result<(ModelConfig, TrainOutcome)> {
    if !has_direct_head(&params) {
        return Err(Error::Config("conservative_finetune expects a direct-force checkpoint".into()));
    }
    let mut cons_cfg = model_cfg.clone();
    cons_cfg.force_mode = ForceMode::Conservative;
    let mut cons_tc = tc.clone();
    cons_tc.frozen_prefixes.push("force/".into());
    let outcome = train(&cons_cfg, dataset, &cons_tc, Some(params))?;
    Ok((cons_cfg, outcome))
}

/// One row of the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToggleSet {
    pub lae: bool,
    pub node_attention: bool,
    pub erope: bool,
}

impl std::fmt::Display for ToggleSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mark = |b: bool| if b { "on" } else { "off" };
        write!(
            f,
            "lae={} nodeatt={} erope={}",
            mark(self.lae),
            mark(self.node_attention),
            mark(self.erope)
        )
    }
}

/// Train one configuration per toggle set under an identical seed/budget and
/// report validation metrics per row (neighborhood attention always on).
pub fn run_ablation_grid(
    base_cfg: &ModelConfig,
    dataset: &Dataset,
    tc: &TrainConfig,
    grid: &[ToggleSet],
) -> Result<Vec<(ToggleSet, LossReport)>> {
    let mut rows = Vec::with_capacity(grid.len());
    for &toggles in grid {
        let mut cfg = base_cfg.clone();
        cfg.use_lae = toggles.lae;
        cfg.use_node_attention = toggles.node_attention;
        cfg.use_erope = toggles.erope && toggles.node_attention;
        let outcome = train(&cfg, dataset, tc, None)?;
        let val = dataset.split(Split::Val);
        let report = if val.is_empty() {
            outcome.reports.last().cloned().ok_or_else(|| Error::Config("no reports".into()))?
        } else {
            val_metrics(&val, &cfg, &outcome.best_params, tc)?
        };
        rows.push((toggles, report));
    }
    Ok(rows)
}
