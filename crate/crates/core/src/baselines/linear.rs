use log::warn;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Result, StageError};
use crate::util::rng_from_seed;

/// Minority share below which a stage is flagged as imbalanced.
pub const IMBALANCE_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearConfig {
    pub l2: f64,
    /// Initial step; step `t` uses `lr / (1 + 2 l2 lr t)`.
    pub learning_rate: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub seed: u64,
}

impl Default for LinearConfig {
    fn default() -> Self {
        Self {
            l2: 1e-3,
            learning_rate: 1.0,
            epochs: 200,
            minibatch_size: 32,
            seed: 0,
        }
    }
}

impl LinearConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(StageError::validation("l2 must be finite and non-negative"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(StageError::validation("learning rate outside (0, 1]"));
        }
        if self.minibatch_size == 0 {
            return Err(StageError::validation("minibatch size must be at least 1"));
        }
        Ok(())
    }

    /// Decaying step size; with `l2 > 0` the iterates approach the regularised optimum.
    fn step(&self, t: usize) -> f64 {
        self.learning_rate / (1.0 + 2.0 * self.l2 * self.learning_rate * t as f64)
    }
}

/// `sign(w . x + b)` with ties rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Array1<f64>,
    pub bias: f64,
    /// Set when the minority class is under [`IMBALANCE_THRESHOLD`].
    pub imbalance_warning: Option<String>,
}

impl LinearModel {
    pub fn width(&self) -> usize {
        self.weights.len()
    }

    pub fn decision(&self, x: ArrayView2<f64>) -> Array1<f64> {
        x.dot(&self.weights) + self.bias
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Vec<i8> {
        self.decision(x).iter().map(|v| if *v > 0.0 { 1 } else { -1 }).collect()
    }
}

/// Hinge-loss linear classifier for one stage: minimises
/// `mean max(0, 1 - y (w . x + b)) + l2 ||w||^2` by minibatch SGD.
pub fn train_stage_binary(x: ArrayView2<f64>, y: &[i8], stage: usize, cfg: &LinearConfig) -> Result<LinearModel> {
    cfg.validate()?;
    if x.nrows() != y.len() {
        return Err(StageError::shape(format!("{} rows for {} labels", x.nrows(), y.len())));
    }
    if y.iter().any(|v| *v != 1 && *v != -1) {
        return Err(StageError::validation("binary labels must be +1 or -1"));
    }
    let pos = y.iter().filter(|v| **v == 1).count();
    let neg = y.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(StageError::DegenerateClass { stage });
    }
    let minority = pos.min(neg) as f64 / y.len() as f64;
    let imbalance_warning = (minority < IMBALANCE_THRESHOLD).then(|| {
        let msg = format!(
            "stage {stage}: minority class is {:.1}% of {} samples",
            100.0 * minority,
            y.len()
        );
        warn!("{msg}");
        msg
    });

    let d = x.ncols();
    let mut w = Array1::<f64>::zeros(d);
    let mut b = 0.0;
    let mut rng = rng_from_seed(cfg.seed ^ stage as u64);
    let mut order: Vec<usize> = (0..y.len()).collect();
    let mut t = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.minibatch_size) {
            let eta = cfg.step(t);
            t += 1;
            let m = batch.len() as f64;
            let mut gw = &w * (2.0 * cfg.l2);
            let mut gb = 0.0;
            for &i in batch {
                let xi = x.row(i);
                let yi = f64::from(y[i]);
                if yi * (xi.dot(&w) + b) < 1.0 {
                    gw.scaled_add(-yi / m, &xi);
                    gb -= yi / m;
                }
            }
            w.scaled_add(-eta, &gw);
            b -= eta * gb;
        }
    }
    if w.iter().any(|v| !v.is_finite()) || !b.is_finite() {
        return Err(StageError::Training {
            epoch: cfg.epochs,
            stage,
            message: "linear weights are not finite".into(),
        });
    }
    Ok(LinearModel {
        weights: w,
        bias: b,
        imbalance_warning,
    })
}

/// Linear softmax over `num_classes` classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxModel {
    /// `d x num_classes`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl SoftmaxModel {
    pub fn num_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn probabilities(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weights) + &self.bias;
        for mut row in z.rows_mut() {
            softmax_in_place(&mut row);
        }
        z
    }

    /// Most probable class per row; ties go to the lower class.
    pub fn predict(&self, x: ArrayView2<f64>) -> Vec<usize> {
        self.probabilities(x)
            .rows()
            .into_iter()
            .map(|r| argmax(r))
            .collect()
    }
}

fn softmax_in_place(row: &mut ndarray::ArrayViewMut1<f64>) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    row.mapv_inplace(|v| (v - max).exp());
    let sum = row.sum();
    row.mapv_inplace(|v| v / sum);
}

fn argmax(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (k, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = k;
        }
    }
    best
}

/// Cross-entropy SGD with an L2 penalty on the weights.
pub fn train_softmax(x: ArrayView2<f64>, classes: &[usize], num_classes: usize, cfg: &LinearConfig) -> Result<SoftmaxModel> {
    cfg.validate()?;
    if x.nrows() != classes.len() {
        return Err(StageError::shape(format!("{} rows for {} labels", x.nrows(), classes.len())));
    }
    if classes.is_empty() {
        return Err(StageError::validation("no labelled rows"));
    }
    if let Some(c) = classes.iter().find(|c| **c >= num_classes) {
        return Err(StageError::validation(format!("class {c} outside 0..{num_classes}")));
    }
    let d = x.ncols();
    let mut w = Array2::<f64>::zeros((d, num_classes));
    let mut b = Array1::<f64>::zeros(num_classes);
    let mut rng = rng_from_seed(cfg.seed);
    let mut order: Vec<usize> = (0..classes.len()).collect();
    let mut t = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.minibatch_size) {
            let eta = cfg.step(t);
            t += 1;
            let xb = x.select(Axis(0), batch);
            let mut p = xb.dot(&w) + &b;
            for (mut row, &i) in p.rows_mut().into_iter().zip(batch) {
                softmax_in_place(&mut row);
                row[classes[i]] -= 1.0;
            }
            p /= batch.len() as f64;
            let gw = xb.t().dot(&p) + &w * (2.0 * cfg.l2);
            let gb = p.sum_axis(Axis(0));
            w.scaled_add(-eta, &gw);
            b.scaled_add(-eta, &gb);
        }
    }
    if w.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(StageError::Training {
            epoch: cfg.epochs,
            stage: 0,
            message: "softmax weights are not finite".into(),
        });
    }
    Ok(SoftmaxModel { weights: w, bias: b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn two_blobs(n: usize, seed: u64) -> (Array2<f64>, Vec<i8>) {
        let mut rng = rng_from_seed(seed);
        let y: Vec<i8> = (0..n).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect();
        let x = Array2::from_shape_fn((n, 2), |(i, j)| {
            let c = if j == 0 { 2.0 * f64::from(y[i]) } else { 0.0 };
            c + rng.random_range(-0.5..0.5)
        });
        (x, y)
    }

    #[test]
    fn separable_data_is_fit_exactly() {
        let (x, y) = two_blobs(100, 1);
        let m = train_stage_binary(x.view(), &y, 1, &LinearConfig::default()).unwrap();
        assert_eq!(m.predict(x.view()), y);
        assert!(m.imbalance_warning.is_none());
    }

    #[test]
    fn single_class_is_degenerate() {
        let x = Array2::<f64>::zeros((5, 2));
        let r = train_stage_binary(x.view(), &[1; 5], 3, &LinearConfig::default());
        assert!(matches!(r, Err(StageError::DegenerateClass { stage: 3 })));
    }

    #[test]
    fn rare_positives_raise_a_warning() {
        let mut rng = rng_from_seed(2);
        let x = Array2::from_shape_fn((200, 2), |_| rng.random_range(-1.0..1.0));
        let mut y = vec![-1i8; 200];
        y[0] = 1;
        let m = train_stage_binary(x.view(), &y, 2, &LinearConfig::default()).unwrap();
        assert!(m.imbalance_warning.is_some());
    }

    #[test]
    fn training_is_deterministic() {
        let (x, y) = two_blobs(50, 3);
        let cfg = LinearConfig { seed: 9, ..Default::default() };
        let a = train_stage_binary(x.view(), &y, 1, &cfg).unwrap();
        let b = train_stage_binary(x.view(), &y, 1, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn disjoint_clusters_are_separated() {
        let mut rng = rng_from_seed(4);
        let centers = [[-3.0, 0.0], [0.0, 3.0], [3.0, 0.0]];
        let make = |n: usize, rng: &mut crate::util::StageRng| {
            let classes: Vec<usize> = (0..n).map(|i| i % 3).collect();
            let x = Array2::from_shape_fn((n, 2), |(i, j)| centers[classes[i]][j] + rng.random_range(-0.7..0.7));
            (x, classes)
        };
        let (x, c) = make(150, &mut rng);
        let (xt, ct) = make(60, &mut rng);
        let m = train_softmax(x.view(), &c, 3, &LinearConfig::default()).unwrap();
        let acc = m.predict(xt.view()).iter().zip(&ct).filter(|(a, b)| a == b).count() as f64 / 60.0;
        assert!(acc > 0.9, "{acc}");
    }

    #[test]
    fn no_signal_tracks_the_prior() {
        let mut rng = rng_from_seed(5);
        let n = 400;
        let x = Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0..1.0));
        let c: Vec<usize> = (0..n).map(|_| usize::from(rng.random_bool(0.3))).collect();
        let m = train_softmax(x.view(), &c, 2, &LinearConfig::default()).unwrap();
        let xt = Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0..1.0));
        let ct: Vec<usize> = (0..n).map(|_| usize::from(rng.random_bool(0.3))).collect();
        let acc = m.predict(xt.view()).iter().zip(&ct).filter(|(a, b)| a == b).count() as f64 / n as f64;
        assert!((acc - 0.7).abs() < 0.1, "{acc}");
    }
}
