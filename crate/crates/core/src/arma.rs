//! ARMA(p, q) estimation by conditional sum of squares, residual extraction,
//! and the parametric CUSUM that monitors residuals instead of raw data.

use serde::{Deserialize, Serialize};

use crate::cusum::{self, CusumConfig, Preprocessor, WindowedCusum};
use crate::error::{Error, Result};
use crate::event::DetectionEvent;
use crate::series::{ar_from_reflection, is_invertible, is_stationary, mean};

/// Fitted model `(mu, phi, theta, sigma^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmaModel {
    pub mean: f64,
    pub ar: Vec<f64>,
    pub ma: Vec<f64>,
    pub innovation_var: f64,
    /// Set when a coefficient had to be pulled back from the unit circle.
    #[serde(default)]
    pub projected: bool,
}

impl ArmaModel {
    pub fn is_stationary(&self) -> bool {
        is_stationary(&self.ar)
    }

    pub fn is_invertible(&self) -> bool {
        is_invertible(&self.ma)
    }
}

/// Largest reflection coefficient modulus a fitted model may carry.
const MAX_REFLECTION: f64 = 0.995;
const MAX_ITER: usize = 5_000;
const TOL: f64 = 1e-8;

/// Lattice of starting reflection coefficients (AR, MA).
const STARTS: [(f64, f64); 5] = [(0.0, 0.0), (0.5, 0.5), (-0.5, -0.5), (0.5, -0.5), (-0.5, 0.5)];

/// Maps unconstrained parameters to coefficients: reflection coefficients
/// `tanh(u)` guarantee stationarity (AR) and invertibility (MA).
fn coefficients(u: &[f64], p: usize) -> (Vec<f64>, Vec<f64>) {
    let ar_k: Vec<f64> = u[..p].iter().map(|x| x.tanh()).collect();
    let ma_k: Vec<f64> = u[p..].iter().map(|x| x.tanh()).collect();
    let ar = ar_from_reflection(&ar_k);
    let ma = ar_from_reflection(&ma_k).into_iter().map(|c| -c).collect();
    (ar, ma)
}

/// Conditional sum of squares over t = p+1..n, pre-sample residuals zero.
pub fn css(values: &[f64], mu: f64, ar: &[f64], ma: &[f64]) -> f64 {
    let p = ar.len();
    let q = ma.len();
    let mut resid = vec![0.0; values.len()];
    let mut total = 0.0;
    for t in p..values.len() {
        let mut e = values[t] - mu;
        for j in 1..=p {
            e -= ar[j - 1] * (values[t - j] - mu);
        }
        for j in 1..=q.min(t) {
            e -= ma[j - 1] * resid[t - j];
        }
        resid[t] = e;
        total += e * e;
    }
    total
}

/// Conditional-sum-of-squares fit with a multi-start Nelder-Mead search.
pub fn fit_arma(training: &[f64], p: usize, q: usize) -> Result<ArmaModel> {
    let n = training.len();
    if n < 10 * (p + q + 1) {
        return Err(Error::Config(format!(
            "ARMA({p},{q}) needs at least {} training samples, got {n}",
            10 * (p + q + 1)
        )));
    }
    let dof = (n - p - q - 1) as f64;
    let mu0 = mean(training);
    if p == 0 && q == 0 {
        let ss: f64 = training.iter().map(|y| (y - mu0).powi(2)).sum();
        return Ok(ArmaModel { mean: mu0, ar: vec![], ma: vec![], innovation_var: ss / dof, projected: false });
    }
    let spread = training.iter().map(|y| (y - mu0).abs()).fold(0.0, f64::max).max(1e-3);
    let objective = |x: &[f64]| {
        let (ar, ma) = coefficients(&x[1..], p);
        css(training, x[0], &ar, &ma)
    };

    let mut best: Option<(Vec<f64>, f64)> = None;
    for &(ka, km) in &STARTS {
        let mut x0 = vec![mu0];
        x0.extend(std::iter::repeat(ka.atanh()).take(p));
        x0.extend(std::iter::repeat(km.atanh()).take(q));
        let mut steps = vec![0.1 * spread];
        steps.extend(std::iter::repeat(0.3).take(p + q));
        if let Some((x, f)) = nelder_mead(&objective, &x0, &steps) {
            if best.as_ref().map_or(true, |(_, bf)| f < *bf) {
                best = Some((x, f));
            }
        }
    }
    let (x, fmin) = best.ok_or_else(|| {
        Error::Estimation(format!("Nelder-Mead did not converge within {MAX_ITER} iterations"))
    })?;

    let mut u = x[1..].to_vec();
    let limit = MAX_REFLECTION.atanh();
    let mut projected = false;
    for v in &mut u {
        if v.abs() > limit {
            *v = v.signum() * limit;
            projected = true;
        }
    }
    let (ar, ma) = coefficients(&u, p);
    let ss = if projected { css(training, x[0], &ar, &ma) } else { fmin };
    if projected {
        log::warn!("ARMA({p},{q}) fit projected back inside the unit circle");
    }
    Ok(ArmaModel { mean: x[0], ar, ma, innovation_var: ss / dof, projected })
}

/// Minimal Nelder-Mead; `None` when the simplex spread in objective value does
/// not fall below the tolerance within `MAX_ITER` iterations.
fn nelder_mead(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], steps: &[f64]) -> Option<(Vec<f64>, f64)> {
    let dim = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..dim {
        let mut x = x0.to_vec();
        x[i] += steps[i];
        let fx = f(&x);
        simplex.push((x, fx));
    }
    let eval = |x: Vec<f64>| {
        let v = f(&x);
        (x, if v.is_finite() { v } else { f64::INFINITY })
    };
    for _ in 0..MAX_ITER {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (lo, hi) = (simplex[0].1, simplex[dim].1);
        if (hi - lo).abs() <= TOL * (lo.abs() + TOL) {
            let (x, v) = simplex.swap_remove(0);
            return Some((x, v));
        }
        let centroid: Vec<f64> = (0..dim)
            .map(|j| simplex[..dim].iter().map(|(x, _)| x[j]).sum::<f64>() / dim as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid.iter().zip(&simplex[dim].0).map(|(c, w)| c + t * (w - c)).collect()
        };
        let reflected = eval(along(-1.0));
        if reflected.1 < simplex[0].1 {
            let expanded = eval(along(-2.0));
            simplex[dim] = if expanded.1 < reflected.1 { expanded } else { reflected };
        } else if reflected.1 < simplex[dim - 1].1 {
            simplex[dim] = reflected;
        } else {
            let contracted = if reflected.1 < simplex[dim].1 {
                eval(along(-0.5))
            } else {
                eval(along(0.5))
            };
            if contracted.1 < simplex[dim].1.min(reflected.1) {
                simplex[dim] = contracted;
            } else {
                let best = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> =
                        best.iter().zip(&vertex.0).map(|(b, v)| b + 0.5 * (v - b)).collect();
                    *vertex = eval(x);
                }
            }
        }
    }
    None
}

/// Residual recursion state for a fixed model.
#[derive(Debug, Clone)]
pub struct ResidualState {
    pub model: ArmaModel,
    /// Last `p` centered observations, most recent first.
    lagged_values: Vec<f64>,
    /// Last `q` residuals, most recent first.
    lagged_residuals: Vec<f64>,
}

impl ResidualState {
    /// Lags start at zero.
    pub fn new(model: ArmaModel) -> Self {
        ResidualState {
            lagged_values: vec![0.0; model.ar.len()],
            lagged_residuals: vec![0.0; model.ma.len()],
            model,
        }
    }

    /// `e_t = (y_t - mu) - sum phi_j (y_{t-j} - mu) - sum theta_j e_{t-j}`.
    pub fn step(&mut self, y: f64) -> f64 {
        let centered = y - self.model.mean;
        let mut e = centered;
        for (c, v) in self.model.ar.iter().zip(&self.lagged_values) {
            e -= c * v;
        }
        for (c, r) in self.model.ma.iter().zip(&self.lagged_residuals) {
            e -= c * r;
        }
        push_front(&mut self.lagged_values, centered);
        push_front(&mut self.lagged_residuals, e);
        e
    }
}

fn push_front(ring: &mut [f64], v: f64) {
    if !ring.is_empty() {
        ring.rotate_right(1);
        ring[0] = v;
    }
}

/// Free-function form of [`ResidualState::step`].
pub fn residual_step(state: &mut ResidualState, y: f64) -> f64 {
    state.step(y)
}

/// Orders of the parametric CUSUM; the CUSUM settings are shared with npCUSUM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PcusumConfig {
    #[serde(flatten)]
    pub cusum: CusumConfig,
    pub ar_order: usize,
    pub ma_order: usize,
}

impl Default for PcusumConfig {
    fn default() -> Self {
        PcusumConfig { cusum: CusumConfig::default(), ar_order: 1, ma_order: 1 }
    }
}

/// Preprocessor that refits the ARMA model on every training window and
/// hands residuals to the CUSUM. A failed fit falls back to raw data for that
/// window.
#[derive(Debug, Clone)]
pub struct ArmaResiduals {
    p: usize,
    q: usize,
    state: Option<ResidualState>,
    fits: usize,
    fallbacks: usize,
}

impl ArmaResiduals {
    pub fn new(p: usize, q: usize) -> Self {
        ArmaResiduals { p, q, state: None, fits: 0, fallbacks: 0 }
    }

    pub fn model(&self) -> Option<&ArmaModel> {
        self.state.as_ref().map(|s| &s.model)
    }

    pub fn fits(&self) -> usize {
        self.fits
    }

    pub fn fallbacks(&self) -> usize {
        self.fallbacks
    }
}

impl Preprocessor for ArmaResiduals {
    fn train(&mut self, raw: &[f64]) -> Result<Vec<f64>> {
        self.fits += 1;
        match fit_arma(raw, self.p, self.q) {
            Ok(model) => {
                let mut st = ResidualState::new(model);
                let resid = raw.iter().map(|&y| st.step(y)).collect();
                self.state = Some(st);
                Ok(resid)
            }
            Err(Error::Estimation(msg)) => {
                log::warn!("pCUSUM falling back to raw data for this window: {msg}");
                self.fallbacks += 1;
                self.state = None;
                Ok(raw.to_vec())
            }
            Err(e) => Err(e),
        }
    }

    fn transform(&mut self, value: f64) -> f64 {
        match &mut self.state {
            Some(st) => st.step(value),
            None => value,
        }
    }

    fn fell_back(&self) -> bool {
        self.state.is_none()
    }
}

pub type Pcusum = WindowedCusum<ArmaResiduals>;

pub fn pcusum_detector(config: &PcusumConfig, cv: f64) -> Result<Pcusum> {
    WindowedCusum::new(config.cusum.clone(), cv, ArmaResiduals::new(config.ar_order, config.ma_order))
}

/// Runs the parametric CUSUM over a finite stream (seq = 1..=len).
pub fn pcusum_monitor(stream: &[f64], config: &PcusumConfig, cv: f64) -> Result<Vec<DetectionEvent>> {
    cusum::run_with(stream, pcusum_detector(config, cv)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cusum::run_windowed_procedure;
    use crate::series::{empirical_autocovariance, generate_arma, generate_with_changes, CpInjection, GeneratorSpec};
    use approx::assert_relative_eq;

    #[test]
    fn degenerate_orders_give_moments() {
        let ts = generate_arma(&GeneratorSpec::white_noise(300, 2)).unwrap();
        let m = fit_arma(&ts.values, 0, 0).unwrap();
        let mu = mean(&ts.values);
        let var = ts.values.iter().map(|y| (y - mu).powi(2)).sum::<f64>() / 299.0;
        assert_relative_eq!(m.mean, mu);
        assert_relative_eq!(m.innovation_var, var, epsilon = 1e-12);
    }

    #[test]
    fn short_training_rejected() {
        assert!(matches!(fit_arma(&[0.0; 29], 1, 1), Err(Error::Config(_))));
    }

    #[test]
    fn arma11_parameter_recovery() {
        let runs = 40;
        let ok = (0..runs)
            .filter(|&i| {
                let spec = GeneratorSpec { length: 5000, seed: 100 + i, ..Default::default() };
                let ts = generate_arma(&spec).unwrap();
                let m = fit_arma(&ts.values, 1, 1).unwrap();
                (m.ar[0] - 0.4).abs() <= 0.1
                    && (m.ma[0] - 0.2).abs() <= 0.12
                    && (m.innovation_var - 1.0).abs() <= 0.1
            })
            .count();
        assert!(ok as f64 / runs as f64 >= 0.95, "{ok}/{runs}");
    }

    #[test]
    fn ar1_agrees_with_yule_walker() {
        let n = 2000;
        let spec = GeneratorSpec { ar: vec![0.5], ma: vec![], length: n, seed: 31, ..Default::default() };
        let ts = generate_arma(&spec).unwrap();
        let g0 = empirical_autocovariance(&ts.values, 0).unwrap();
        let g1 = empirical_autocovariance(&ts.values, 1).unwrap();
        let yw = g1 / g0;
        let m = fit_arma(&ts.values, 1, 0).unwrap();
        let stderr = ((1.0 - 0.25) / n as f64).sqrt();
        assert!((m.ar[0] - yw).abs() < 2.0 * stderr, "{} vs {yw}", m.ar[0]);
    }

    #[test]
    fn fitted_models_are_stationary_and_invertible() {
        for seed in 0..10 {
            let spec = GeneratorSpec { length: 100, seed, ..Default::default() };
            let m = fit_arma(&generate_arma(&spec).unwrap().values, 1, 1).unwrap();
            assert!(m.is_stationary() && m.is_invertible());
        }
    }

    #[test]
    fn residuals_of_true_model_are_white() {
        let spec = GeneratorSpec { length: 100_000, seed: 17, ..Default::default() };
        let ts = generate_arma(&spec).unwrap();
        let model = ArmaModel { mean: 0.0, ar: vec![0.4], ma: vec![0.2], innovation_var: 1.0, projected: false };
        let mut st = ResidualState::new(model);
        let resid: Vec<f64> = ts.values.iter().map(|&y| st.step(y)).collect();
        let g0 = empirical_autocovariance(&resid, 0).unwrap();
        for lag in 1..=10 {
            let rho = empirical_autocovariance(&resid, lag).unwrap() / g0;
            assert!(rho.abs() < 0.02, "lag {lag}: {rho}");
        }
    }

    #[test]
    fn white_model_residuals_are_centered_data() {
        let model = ArmaModel { mean: 1.5, ar: vec![], ma: vec![], innovation_var: 1.0, projected: false };
        let mut st = ResidualState::new(model);
        assert_eq!(residual_step(&mut st, 4.0), 2.5);
        let zero = ArmaModel { mean: 0.0, ar: vec![0.3], ma: vec![0.6], innovation_var: 1.0, projected: false };
        let mut st = ResidualState::new(zero);
        assert!((0..100).all(|_| st.step(0.0) == 0.0));
    }

    #[test]
    fn residual_recursion_is_linear() {
        let model = ArmaModel { mean: 0.7, ar: vec![0.4, -0.1], ma: vec![0.2], innovation_var: 1.0, projected: false };
        let ts = generate_arma(&GeneratorSpec { length: 300, seed: 4, ..Default::default() }).unwrap();
        let mut a = ResidualState::new(model.clone());
        let mut b = ResidualState::new(model);
        for &y in &ts.values {
            let ea = a.step(y);
            let eb = b.step(0.7 + 2.0 * (y - 0.7));
            assert!((eb - 2.0 * ea).abs() <= 1e-9 * (1.0 + ea.abs()));
        }
    }

    #[test]
    fn p0_q0_matches_npcusum() {
        let cfg = PcusumConfig { ar_order: 0, ma_order: 0, ..Default::default() };
        for seed in 0..20 {
            let spec = GeneratorSpec { ar: vec![], ma: vec![], seed: 600 + seed, ..Default::default() };
            let ts = generate_with_changes(&spec, &[CpInjection { t_cp: 250, mean_shift: 1.0 }]).unwrap();
            let np = run_windowed_procedure(&ts.values, &cfg.cusum, 2.39).unwrap();
            let p = pcusum_monitor(&ts.values, &cfg, 2.39).unwrap();
            let key = |e: &Vec<DetectionEvent>| e.iter().map(|e| e.detection_seq).collect::<Vec<_>>();
            assert_eq!(key(&np), key(&p), "seed {seed}");
        }
    }
}
