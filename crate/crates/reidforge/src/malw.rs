//! Magnitude-aware adaptive loss weighting.
//!
//! Two loss streams (an ID classification loss and a metric loss) are
//! combined as `lambda_id * id + lambda_metric * metric`. Both weights
//! start at 1. Every `interval` steps the population standard deviation of
//! the recently recorded *weighted* losses is measured; when the ID stream
//! fluctuates more than the metric stream, `lambda_id` is pulled toward the
//! std ratio. `lambda_metric` never changes.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MalwMode {
    /// `lambda <- alpha * lambda + ratio`
    Literal,
    /// `lambda <- alpha * lambda + (1 - alpha) * ratio`
    Ema,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MalwConfig {
    /// steps between weight updates (k)
    pub interval: usize,
    /// smoothing factor
    pub alpha: f64,
    pub mode: MalwMode,
}

impl Default for MalwConfig {
    fn default() -> Self {
        Self {
            interval: 500,
            alpha: 0.9,
            mode: MalwMode::Literal,
        }
    }
}

impl MalwConfig {
    fn validate(&self) -> Result<()> {
        if self.interval == 0 {
            return Err(Error::InvalidParam {
                name: "interval",
                msg: "must be >= 1".into(),
            });
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::InvalidParam {
                name: "alpha",
                msg: format!("must lie in [0, 1), got {}", self.alpha),
            });
        }
        Ok(())
    }
}

/// One weight-update event: the measured stds and the weights in force
/// after the event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MalwUpdate {
    pub update_index: usize,
    pub lambda_id: f64,
    pub lambda_metric: f64,
    pub id_std: f64,
    pub metric_std: f64,
}

/// Weights applied to the current step's gradients, plus the update event
/// if this step triggered one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepWeights {
    pub lambda_id: f64,
    pub lambda_metric: f64,
    pub update: Option<MalwUpdate>,
}

#[derive(Debug, Clone)]
pub struct MalwState {
    config: MalwConfig,
    lambda_id: f64,
    lambda_metric: f64,
    id_buffer: Vec<f64>,
    metric_buffer: Vec<f64>,
    step: usize,
    updates: usize,
}

fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

pub fn malw_init(config: MalwConfig) -> Result<MalwState> {
    config.validate()?;
    Ok(MalwState {
        config,
        lambda_id: 1.0,
        lambda_metric: 1.0,
        id_buffer: Vec::with_capacity(config.interval),
        metric_buffer: Vec::with_capacity(config.interval),
        step: 0,
        updates: 0,
    })
}

impl MalwState {
    pub fn lambda_id(&self) -> f64 {
        self.lambda_id
    }

    pub fn lambda_metric(&self) -> f64 {
        self.lambda_metric
    }

    pub fn step_count(&self) -> usize {
        self.step
    }
}

/// Advance the schedule by one training step.
///
/// The raw losses are weighted with the current lambdas and recorded; every
/// `interval`-th step (including step 0, whose single-entry window is a
/// no-op) the window statistics are folded into `lambda_id` and the window
/// is emptied. The returned weights are the ones in force *before* any
/// update, i.e. the weights the caller should apply to this step's
/// gradients.
pub fn malw_step(state: &mut MalwState, raw_id: f64, raw_metric: f64) -> Result<StepWeights> {
    if !raw_id.is_finite() || !raw_metric.is_finite() {
        return Err(Error::InvalidParam {
            name: "loss",
            msg: format!("non-finite loss pair ({raw_id}, {raw_metric})"),
        });
    }
    let applied_id = state.lambda_id;
    let applied_metric = state.lambda_metric;
    state.id_buffer.push(applied_id * raw_id);
    state.metric_buffer.push(applied_metric * raw_metric);

    let mut update = None;
    if state.step % state.config.interval == 0 {
        let id_std = population_std(&state.id_buffer);
        let metric_std = population_std(&state.metric_buffer);
        state.id_buffer.clear();
        state.metric_buffer.clear();
        if id_std > metric_std {
            let ratio = metric_std / id_std;
            state.lambda_id = match state.config.mode {
                MalwMode::Literal => state.config.alpha * state.lambda_id + ratio,
                MalwMode::Ema => {
                    state.config.alpha * state.lambda_id + (1.0 - state.config.alpha) * ratio
                }
            };
        }
        update = Some(MalwUpdate {
            update_index: state.updates,
            lambda_id: state.lambda_id,
            lambda_metric: state.lambda_metric,
            id_std,
            metric_std,
        });
        state.updates += 1;
    }
    state.step += 1;
    Ok(StepWeights {
        lambda_id: applied_id,
        lambda_metric: applied_metric,
        update,
    })
}

/// Run a whole pair of loss streams through the schedule and collect the
/// update events.
pub fn malw_trajectory(
    config: MalwConfig,
    id_losses: &[f64],
    metric_losses: &[f64],
) -> Result<Vec<MalwUpdate>> {
    if id_losses.len() != metric_losses.len() {
        return Err(Error::InvalidParam {
            name: "losses",
            msg: format!(
                "stream lengths differ: {} vs {}",
                id_losses.len(),
                metric_losses.len()
            ),
        });
    }
    let mut state = malw_init(config)?;
    let mut updates = Vec::new();
    for (&id, &metric) in id_losses.iter().zip(metric_losses) {
        if let Some(u) = malw_step(&mut state, id, metric)?.update {
            updates.push(u);
        }
    }
    Ok(updates)
}

/// Render update events as CSV with a fixed header.
pub fn updates_to_csv(updates: &[MalwUpdate]) -> String {
    let mut out = String::from("update_index,lambda_id,lambda_metric,id_std,metric_std\n");
    for u in updates {
        out.push_str(&format!(
            "{},{:.9},{:.9},{:.9},{:.9}\n",
            u.update_index, u.lambda_id, u.lambda_metric, u.id_std, u.metric_std
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(interval: usize, alpha: f64, mode: MalwMode) -> MalwConfig {
        MalwConfig {
            interval,
            alpha,
            mode,
        }
    }

    #[test]
    fn starts_at_one_one() {
        let s = malw_init(MalwConfig::default()).unwrap();
        assert_eq!(s.lambda_id(), 1.0);
        assert_eq!(s.lambda_metric(), 1.0);
    }

    #[test]
    fn first_step_update_is_a_noop() {
        let mut s = malw_init(config(4, 0.5, MalwMode::Literal)).unwrap();
        let w = malw_step(&mut s, 3.0, 2.0).unwrap();
        assert_eq!(w.lambda_id, 1.0);
        let u = w.update.expect("step 0 triggers a window flush");
        assert_eq!(u.id_std, 0.0);
        assert_eq!(u.metric_std, 0.0);
        assert_eq!(u.lambda_id, 1.0);
    }

    #[test]
    fn literal_update_applies_std_ratio() {
        // interval 2: after the step-0 flush, entries at steps 1 and 2 form
        // the first real window
        let mut s = malw_init(config(2, 0.9, MalwMode::Literal)).unwrap();
        malw_step(&mut s, 0.0, 0.0).unwrap(); // flushed no-op window
        malw_step(&mut s, 4.0, 1.0).unwrap();
        // window: id {4, 8} std 2, metric {1, 3} std 1 -> ratio 0.5
        let w = malw_step(&mut s, 8.0, 3.0).unwrap();
        assert_eq!(w.lambda_id, 1.0, "update applies after this step");
        let u = w.update.unwrap();
        assert!((u.id_std - 2.0).abs() < 1e-12);
        assert!((u.metric_std - 1.0).abs() < 1e-12);
        assert!((u.lambda_id - (0.9 + 0.5)).abs() < 1e-12);
        assert_eq!(s.lambda_id(), u.lambda_id);
    }

    #[test]
    fn ema_update_blends_toward_ratio() {
        let mut s = malw_init(config(2, 0.9, MalwMode::Ema)).unwrap();
        malw_step(&mut s, 0.0, 0.0).unwrap();
        malw_step(&mut s, 4.0, 1.0).unwrap();
        let w = malw_step(&mut s, 8.0, 3.0).unwrap();
        let u = w.update.unwrap();
        assert!((u.lambda_id - (0.9 + 0.1 * 0.5)).abs() < 1e-12);
    }

    #[test]
    fn no_update_when_metric_fluctuates_more() {
        let mut s = malw_init(config(2, 0.9, MalwMode::Literal)).unwrap();
        malw_step(&mut s, 0.0, 0.0).unwrap();
        malw_step(&mut s, 1.0, 4.0).unwrap();
        let w = malw_step(&mut s, 3.0, 8.0).unwrap();
        let u = w.update.unwrap();
        assert!(u.id_std < u.metric_std);
        assert_eq!(u.lambda_id, 1.0);
        // equal stds also leave the weight alone
        malw_step(&mut s, 1.0, 1.0).unwrap();
        let w2 = malw_step(&mut s, 3.0, 3.0).unwrap();
        assert_eq!(w2.update.unwrap().lambda_id, 1.0);
    }

    #[test]
    fn metric_weight_never_moves() {
        let mut s = malw_init(config(3, 0.5, MalwMode::Literal)).unwrap();
        for i in 0..50 {
            let w = malw_step(&mut s, (i % 7) as f64 * 3.0, (i % 2) as f64 * 0.1).unwrap();
            assert_eq!(w.lambda_metric, 1.0);
        }
        assert_eq!(s.lambda_metric(), 1.0);
    }

    #[test]
    fn windows_are_disjoint() {
        // recorded weighted losses only influence their own window: a spike
        // before a flush must not affect the next update
        let id = vec![100.0, 4.0, 8.0, 4.0, 8.0];
        let metric = vec![0.0, 1.0, 3.0, 1.0, 3.0];
        let updates = malw_trajectory(config(2, 0.9, MalwMode::Literal), &id, &metric).unwrap();
        // updates at steps 0, 2, 4
        assert_eq!(updates.len(), 3);
        assert!((updates[1].id_std - 2.0).abs() < 1e-12);
        // second window records weighted ids with lambda from update 1
        let l1 = updates[1].lambda_id;
        assert!((updates[2].id_std - 2.0 * l1).abs() < 1e-9);
    }

    #[test]
    fn trajectory_matches_stepping_and_csv_is_stable() {
        let id: Vec<f64> = (0..20).map(|i| ((i * 13) % 7) as f64).collect();
        let metric: Vec<f64> = (0..20).map(|i| ((i * 5) % 3) as f64).collect();
        let cfg = config(4, 0.7, MalwMode::Literal);
        let updates = malw_trajectory(cfg, &id, &metric).unwrap();
        let mut s = malw_init(cfg).unwrap();
        let mut manual = Vec::new();
        for (a, b) in id.iter().zip(&metric) {
            if let Some(u) = malw_step(&mut s, *a, *b).unwrap().update {
                manual.push(u);
            }
        }
        assert_eq!(updates, manual);
        let csv = updates_to_csv(&updates);
        assert!(csv.starts_with("update_index,lambda_id,lambda_metric,id_std,metric_std\n"));
        assert_eq!(csv.lines().count(), updates.len() + 1);
        assert_eq!(csv, updates_to_csv(&manual));
    }

    #[test]
    fn rejects_bad_config_and_values() {
        assert!(malw_init(config(0, 0.5, MalwMode::Literal)).is_err());
        assert!(malw_init(config(5, 1.0, MalwMode::Literal)).is_err());
        assert!(malw_init(config(5, -0.1, MalwMode::Ema)).is_err());
        let mut s = malw_init(MalwConfig::default()).unwrap();
        assert!(malw_step(&mut s, f64::NAN, 1.0).is_err());
    }
}
