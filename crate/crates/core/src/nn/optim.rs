use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Optimization hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub early_stop_patience: usize,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub min_lr: f64,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            early_stop_patience: 10,
            plateau_patience: 5,
            plateau_factor: 0.5,
            min_lr: 1e-6,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.max_epochs == 0 {
            problems.push("max_epochs must be >= 1".to_string());
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be >= 1".to_string());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            problems.push("learning_rate must be positive".to_string());
        }
        if self.early_stop_patience == 0 {
            problems.push("early_stop_patience must be >= 1".to_string());
        }
        if self.plateau_patience == 0 {
            problems.push("plateau_patience must be >= 1".to_string());
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            problems.push("plateau_factor must lie in (0, 1)".to_string());
        }
        if !(self.min_lr >= 0.0) {
            problems.push("min_lr must be >= 0".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

/// Bias-corrected Adam.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &[Tensor]) -> Self {
        Self::with_hyper(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper(params: &[Tensor], beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Vec<f64>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::Shape(format!(
                "adam state for {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if p.len() != g.len() || m.len() != g.len() {
                return Err(Error::Shape(format!(
                    "parameter of {} values got {} gradients",
                    p.len(),
                    g.len()
                )));
            }
            for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *x -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Outcome of feeding one validation loss to [`LrSchedule`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleDecision {
    pub lr: f64,
    pub stop: bool,
    /// Current weights are the best seen so far.
    pub is_best: bool,
}

/// Reduce-on-plateau learning rate plus early stopping, tracking the best
/// validation loss. An epoch improves only if its loss is strictly lower.
#[derive(Debug, Clone)]
pub struct LrSchedule {
    lr: f64,
    best: f64,
    plateau_wait: usize,
    stop_wait: usize,
    plateau_patience: usize,
    stop_patience: usize,
    factor: f64,
    min_lr: f64,
}

impl LrSchedule {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.learning_rate,
            best: f64::INFINITY,
            plateau_wait: 0,
            stop_wait: 0,
            plateau_patience: cfg.plateau_patience,
            stop_patience: cfg.early_stop_patience,
            factor: cfg.plateau_factor,
            min_lr: cfg.min_lr,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn observe(&mut self, val_loss: f64) -> ScheduleDecision {
        let is_best = val_loss < self.best;
        if is_best {
            self.best = val_loss;
            self.plateau_wait = 0;
            self.stop_wait = 0;
        } else {
            self.plateau_wait += 1;
            self.stop_wait += 1;
            if self.plateau_wait >= self.plateau_patience {
                self.lr = (self.lr * self.factor).max(self.min_lr);
                self.plateau_wait = 0;
            }
        }
        ScheduleDecision {
            lr: self.lr,
            stop: self.stop_wait >= self.stop_patience,
            is_best,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_everything_unchanged() {
        let mut params = vec![Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap()];
        let before = params.clone();
        let mut adam = Adam::new(&params);
        adam.step(&mut params, &[vec![0.0; 3]], 1e-3).unwrap();
        assert_eq!(params, before);
        assert!(adam.first_moments()[0].iter().all(|&m| m == 0.0));
        assert!(adam.second_moments()[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut params = vec![Tensor::new(&[3], vec![0.0; 3]).unwrap()];
        let mut adam = Adam::with_hyper(&params, 0.9, 0.999, 0.0);
        adam.step(&mut params, &[vec![0.3, -7.0, 1e-4]], 0.01).unwrap();
        let want = [-0.01, 0.01, -0.01];
        for (p, w) in params[0].data().iter().zip(want) {
            assert!((p - w).abs() < 1e-12, "{p} vs {w}");
        }
    }

    #[test]
    fn plateau_halves_after_third_flat_epoch() {
        let cfg = TrainConfig {
            plateau_patience: 2,
            plateau_factor: 0.5,
            early_stop_patience: 100,
            learning_rate: 1.0,
            ..TrainConfig::default()
        };
        let mut s = LrSchedule::new(&cfg);
        let lrs: Vec<f64> = (0..5).map(|_| s.observe(1.0).lr).collect();
        assert_eq!(lrs, vec![1.0, 1.0, 0.5, 0.5, 0.25]);
    }

    #[test]
    fn lr_respects_floor() {
        let cfg = TrainConfig {
            plateau_patience: 1,
            plateau_factor: 0.1,
            learning_rate: 1e-3,
            min_lr: 5e-5,
            early_stop_patience: 100,
            ..TrainConfig::default()
        };
        let mut s = LrSchedule::new(&cfg);
        s.observe(1.0);
        for _ in 0..5 {
            s.observe(2.0);
        }
        assert_eq!(s.lr(), 5e-5);
    }

    #[test]
    fn rising_loss_stops_after_second_epoch() {
        let cfg = TrainConfig {
            early_stop_patience: 1,
            ..TrainConfig::default()
        };
        let mut s = LrSchedule::new(&cfg);
        let first = s.observe(1.0);
        assert!(first.is_best && !first.stop);
        let second = s.observe(1.5);
        assert!(!second.is_best && second.stop);
    }

    #[test]
    fn validation_lists_all_problems() {
        let cfg = TrainConfig {
            batch_size: 0,
            plateau_factor: 1.5,
            early_stop_patience: 0,
            ..TrainConfig::default()
        };
        match cfg.validate() {
            Err(Error::Config(v)) => assert_eq!(v.len(), 3),
            other => panic!("{other:?}"),
        }
    }
}
