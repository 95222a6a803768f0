//! Nonconvex reference: two-layer generator and discriminator trained by
//! gradient descent-ascent on the regularized WGAN objective.
//!
//! Discriminator (maximizes, `k = 1` output):
//! `F = Σ_j s_j v_j − penalty − λ_gp·mean_i (‖∇D(x̂_i)‖ − 1)²`,
//! `s_j = 1ᵀσ(Xu_j + b_j) − 1ᵀσ(Gu_j + b_j)`,
//! where the penalty is weight decay `β_d/2 Σ(‖u_j‖² + v_j²)` for linear and
//! ReLU activations and `β_d Σ|v_j|` with `‖u_j‖ ≤ 1` for the quadratic one.
//!
//! Generator (minimizes): `L = β_g‖G‖_F² − Σ_j 1ᵀσ(Gu_j + b_j) v_j`,
//! with `G = σ_g(ZW₁ + 1b₁ᵀ)W₂`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::duality::ActivationKind;
use crate::error::{Error, Result};
use crate::numerics::{check_finite, DataMatrix};
use crate::rng::{gaussian_matrix, stream};

#[derive(Debug, Clone, PartialEq)]
pub struct TwoLayerNet {
    /// `d × m`; column `j` is `u_j`.
    pub first_layer: DataMatrix,
    /// `m × k`; row `j` is `v_jᵀ`.
    pub second_layer: DataMatrix,
    pub bias: Option<DVector<f64>>,
    pub activation: ActivationKind,
}

impl TwoLayerNet {
    pub fn new(first_layer: DataMatrix, second_layer: DataMatrix, bias: Option<DVector<f64>>, activation: ActivationKind) -> Result<Self> {
        let m = first_layer.ncols();
        if m == 0 {
            return Err(Error::invalid("network needs at least one neuron"));
        }
        if second_layer.nrows() != m {
            return Err(Error::dims("second layer rows", m, second_layer.nrows()));
        }
        if let Some(b) = &bias {
            if b.len() != m {
                return Err(Error::dims("bias length", m, b.len()));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("bias has non-finite entries"));
            }
        }
        check_finite(&first_layer, "first layer")?;
        check_finite(&second_layer, "second layer")?;
        Ok(TwoLayerNet {
            first_layer,
            second_layer,
            bias,
            activation,
        })
    }

    /// Gaussian initialization scaled by `1/√fan_in`; biases start at zero.
    pub fn random(input: usize, hidden: usize, output: usize, activation: ActivationKind, with_bias: bool, seed: u64) -> Result<Self> {
        if input == 0 || output == 0 {
            return Err(Error::invalid("network dimensions must be positive"));
        }
        let u = gaussian_matrix(input, hidden, seed.wrapping_mul(2)) / (input as f64).sqrt();
        let v = gaussian_matrix(hidden, output, seed.wrapping_mul(2).wrapping_add(1)) / (hidden.max(1) as f64).sqrt();
        Self::new(u, v, with_bias.then(|| DVector::zeros(hidden)), activation)
    }

    pub fn input_dim(&self) -> usize {
        self.first_layer.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.first_layer.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.second_layer.ncols()
    }

    pub fn param_count(&self) -> usize {
        self.first_layer.len() + self.second_layer.len() + self.bias.as_ref().map_or(0, |b| b.len())
    }

    /// Flattened parameters: first layer, second layer, bias (column-major).
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        p.extend_from_slice(self.first_layer.as_slice());
        p.extend_from_slice(self.second_layer.as_slice());
        if let Some(b) = &self.bias {
            p.extend_from_slice(b.as_slice());
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let (a, rest) = p.split_at(self.first_layer.len());
        let (b, c) = rest.split_at(self.second_layer.len());
        self.first_layer.as_mut_slice().copy_from_slice(a);
        self.second_layer.as_mut_slice().copy_from_slice(b);
        if let Some(bias) = &mut self.bias {
            bias.as_mut_slice().copy_from_slice(c);
        }
    }

    fn pre_activation(&self, input: &DataMatrix) -> DataMatrix {
        let mut pre = input * &self.first_layer;
        if let Some(b) = &self.bias {
            for mut row in pre.row_iter_mut() {
                row += b.transpose();
            }
        }
        pre
    }
}

/// `σ(input·U + 1bᵀ)·V`.
pub fn forward(net: &TwoLayerNet, input: &DataMatrix) -> Result<DataMatrix> {
    if input.ncols() != net.input_dim() {
        return Err(Error::dims("forward input columns", net.input_dim(), input.ncols()));
    }
    let act = net.activation;
    Ok(net.pre_activation(input).map(|t| act.apply(t)) * &net.second_layer)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Optimizer {
    PlainGDA,
    AdamLike { beta1: f64, beta2: f64, eps: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr_gen: f64,
    pub lr_disc: f64,
    pub steps: usize,
    pub disc_steps: usize,
    /// Discriminator regularization strength.
    pub beta_d: f64,
    /// Weight of `‖G‖_F²` in the generator loss.
    pub beta_g: f64,
    pub gradient_penalty: Option<f64>,
    pub seed: u64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_gen: 1e-3,
            lr_disc: 1e-3,
            steps: 1000,
            disc_steps: 1,
            beta_d: 0.1,
            beta_g: 1.0,
            gradient_penalty: None,
            seed: 0,
            optimizer: Optimizer::PlainGDA,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.lr_gen >= 0.0 && self.lr_disc >= 0.0) {
            return Err(Error::invalid("learning rates must be nonnegative"));
        }
        if self.steps == 0 || self.disc_steps == 0 {
            return Err(Error::invalid("steps and disc_steps must be at least 1"));
        }
        if !(self.beta_d >= 0.0 && self.beta_g >= 0.0) {
            return Err(Error::invalid("regularization weights must be nonnegative"));
        }
        if let Some(l) = self.gradient_penalty {
            if !(l >= 0.0) {
                return Err(Error::invalid("gradient penalty must be nonnegative"));
            }
        }
        if let Optimizer::AdamLike { beta1, beta2, eps } = self.optimizer {
            if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) {
                return Err(Error::invalid("invalid Adam parameters"));
            }
        }
        Ok(())
    }
}

/// Regularization and penalty settings of the discriminator objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscObjective {
    pub beta_d: f64,
    pub gradient_penalty: Option<f64>,
}

fn check_disc(disc: &TwoLayerNet, x: &DataMatrix, g: &DataMatrix) -> Result<()> {
    if disc.output_dim() != 1 {
        return Err(Error::dims("discriminator outputs", 1, disc.output_dim()));
    }
    if x.ncols() != disc.input_dim() || g.ncols() != disc.input_dim() {
        return Err(Error::dims(
            "discriminator input columns",
            disc.input_dim(),
            x.ncols().min(g.ncols()),
        ));
    }
    Ok(())
}

/// Interpolates `x̂_i = ε_i x_i + (1 − ε_i) g_i`, rows cycled to the longer side.
fn interpolates(x: &DataMatrix, g: &DataMatrix, eps: &[f64]) -> DataMatrix {
    let n = eps.len();
    DMatrix::from_fn(n, x.ncols(), |i, c| {
        eps[i] * x[(i % x.nrows(), c)] + (1.0 - eps[i]) * g[(i % g.nrows(), c)]
    })
}

/// Discriminator objective value (to be maximized) and its gradient with
/// respect to the flattened discriminator parameters. `eps` holds the
/// interpolation weights used by the gradient penalty.
pub fn disc_value_and_grad(
    disc: &TwoLayerNet,
    x: &DataMatrix,
    g: &DataMatrix,
    obj: &DiscObjective,
    eps: &[f64],
) -> Result<(f64, Vec<f64>)> {
    check_disc(disc, x, g)?;
    let act = disc.activation;
    let m = disc.hidden();
    let d = disc.input_dim();
    let v = disc.second_layer.column(0);
    let px = disc.pre_activation(x);
    let pg = disc.pre_activation(g);

    let mut du = DMatrix::zeros(d, m);
    let mut dv = DMatrix::zeros(m, 1);
    let mut db = DVector::zeros(m);
    let mut value = 0.0;
    for j in 0..m {
        let s = px.column(j).iter().map(|&t| act.apply(t)).sum::<f64>() - pg.column(j).iter().map(|&t| act.apply(t)).sum::<f64>();
        value += s * v[j];
        dv[(j, 0)] = s;
        let sx = DVector::from_iterator(x.nrows(), px.column(j).iter().map(|&t| act.derivative(t)));
        let sg = DVector::from_iterator(g.nrows(), pg.column(j).iter().map(|&t| act.derivative(t)));
        du.set_column(j, &((x.transpose() * &sx - g.transpose() * &sg) * v[j]));
        db[j] = v[j] * (sx.sum() - sg.sum());
    }

    let u = &disc.first_layer;
    match act {
        ActivationKind::Quadratic => {
            value -= obj.beta_d * v.iter().map(|t| t.abs()).sum::<f64>();
            for j in 0..m {
                dv[(j, 0)] -= obj.beta_d * v[j].signum() * if v[j] == 0.0 { 0.0 } else { 1.0 };
            }
        }
        _ => {
            let b2 = disc.bias.as_ref().map_or(0.0, |b| b.norm_squared());
            value -= 0.5 * obj.beta_d * (u.norm_squared() + v.norm_squared() + b2);
            du -= u * obj.beta_d;
            dv -= &disc.second_layer * obj.beta_d;
            if let Some(b) = &disc.bias {
                db -= b * obj.beta_d;
            }
        }
    }

    if let Some(lambda) = obj.gradient_penalty {
        if lambda > 0.0 && !eps.is_empty() {
            let xh = interpolates(x, g, eps);
            let ph = disc.pre_activation(&xh);
            let n = eps.len() as f64;
            for i in 0..xh.nrows() {
                let a: Vec<f64> = ph.row(i).iter().copied().collect();
                let mut grad = DVector::zeros(d);
                for j in 0..m {
                    grad += u.column(j) * (act.derivative(a[j]) * v[j]);
                }
                let gn = grad.norm();
                value -= lambda * (gn - 1.0).powi(2) / n;
                if gn == 0.0 {
                    continue;
                }
                let q = &grad * (2.0 * (gn - 1.0) / gn * lambda / n);
                let xi = xh.row(i).transpose();
                for j in 0..m {
                    let s1 = act.derivative(a[j]);
                    let s2 = act.second_derivative(a[j]);
                    let qu = q.dot(&u.column(j));
                    dv[(j, 0)] -= qu * s1;
                    let step = &q * (s1 * v[j]) + &xi * (s2 * v[j] * qu);
                    let mut col = du.column_mut(j);
                    col -= step;
                    db[j] -= s2 * v[j] * qu;
                }
            }
        }
    }

    let mut grad = Vec::with_capacity(disc.param_count());
    grad.extend_from_slice(du.as_slice());
    grad.extend_from_slice(dv.as_slice());
    if disc.bias.is_some() {
        grad.extend_from_slice(db.as_slice());
    }
    Ok((value, grad))
}

/// Generator loss (to be minimized) and its gradient with respect to the
/// flattened generator parameters.
pub fn gen_value_and_grad(gen: &TwoLayerNet, disc: &TwoLayerNet, z: &DataMatrix, beta_g: f64) -> Result<(f64, Vec<f64>)> {
    let g = forward(gen, z)?;
    check_disc(disc, &g, &g)?;
    let dact = disc.activation;
    let v = disc.second_layer.column(0);
    let pg = disc.pre_activation(&g);

    let mut value = beta_g * g.norm_squared();
    let mut d_out = &g * (2.0 * beta_g);
    // dL/dG = 2β_g G − (σ'(GU + b) diag(v)) Uᵀ
    let mut coef = DMatrix::zeros(g.nrows(), disc.hidden());
    for j in 0..disc.hidden() {
        for i in 0..g.nrows() {
            value -= dact.apply(pg[(i, j)]) * v[j];
            coef[(i, j)] = dact.derivative(pg[(i, j)]) * v[j];
        }
    }
    d_out -= coef * disc.first_layer.transpose();

    let gact = gen.activation;
    let pre = gen.pre_activation(z);
    let hidden = pre.map(|t| gact.apply(t));
    let d_w2 = hidden.transpose() * &d_out;
    let d_hidden = &d_out * gen.second_layer.transpose();
    let d_pre = d_hidden.zip_map(&pre, |dh, p| dh * gact.derivative(p));
    let d_w1 = z.transpose() * &d_pre;

    let mut grad = Vec::with_capacity(gen.param_count());
    grad.extend_from_slice(d_w1.as_slice());
    grad.extend_from_slice(d_w2.as_slice());
    if gen.bias.is_some() {
        grad.extend(d_pre.column_iter().map(|c| c.sum()));
    }
    Ok((value, grad))
}

struct OptState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl OptState {
    fn new(n: usize) -> Self {
        OptState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Moves `params` along `direction` (already signed for ascent or descent).
    fn step(&mut self, params: &mut [f64], direction: &[f64], lr: f64, opt: Optimizer) {
        match opt {
            Optimizer::PlainGDA => {
                for (p, g) in params.iter_mut().zip(direction) {
                    *p += lr * g;
                }
            }
            Optimizer::AdamLike { beta1, beta2, eps } => {
                self.t += 1;
                let c1 = 1.0 - beta1.powi(self.t);
                let c2 = 1.0 - beta2.powi(self.t);
                for i in 0..params.len() {
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * direction[i];
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * direction[i] * direction[i];
                    params[i] += lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + eps);
                }
            }
        }
    }
}

/// Projects every first-layer column onto the unit ball (quadratic discriminator).
fn project_unit_columns(net: &mut TwoLayerNet) {
    for mut c in net.first_layer.column_iter_mut() {
        let n = c.norm();
        if n > 1.0 {
            c /= n;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub disc_loss: f64,
    pub gen_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub gen: TwoLayerNet,
    pub disc: TwoLayerNet,
    pub losses: Vec<LossRecord>,
    /// Generator output on `Z` after training.
    pub generated: DataMatrix,
}

/// Alternating full-batch training: `disc_steps` ascent steps on the
/// discriminator, then one descent step on the generator. The recorded
/// discriminator loss is the negated discriminator objective.
pub fn gda_train(x: &DataMatrix, z: &DataMatrix, gen: &TwoLayerNet, disc: &TwoLayerNet, cfg: &TrainConfig) -> Result<TrainResult> {
    cfg.validate()?;
    check_finite(x, "real data")?;
    check_finite(z, "latent matrix")?;
    if z.ncols() != gen.input_dim() {
        return Err(Error::dims("latent columns", gen.input_dim(), z.ncols()));
    }
    if gen.output_dim() != x.ncols() {
        return Err(Error::dims("generator outputs", x.ncols(), gen.output_dim()));
    }
    check_disc(disc, x, x)?;
    let quadratic = disc.activation == ActivationKind::Quadratic;
    let mut gen = gen.clone();
    let mut disc = disc.clone();
    if quadratic {
        project_unit_columns(&mut disc);
    }
    let obj = DiscObjective {
        beta_d: cfg.beta_d,
        gradient_penalty: cfg.gradient_penalty,
    };
    let n_interp = x.nrows().max(z.nrows());
    let mut rng = stream(cfg.seed, 7);
    let mut gen_opt = OptState::new(gen.param_count());
    let mut disc_opt = OptState::new(disc.param_count());
    let mut losses = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let g = forward(&gen, z)?;
        let mut disc_value = 0.0;
        for _ in 0..cfg.disc_steps {
            let eps: Vec<f64> = match cfg.gradient_penalty {
                Some(l) if l > 0.0 => (0..n_interp).map(|_| rng.random::<f64>()).collect(),
                _ => Vec::new(),
            };
            let (val, grad) = disc_value_and_grad(&disc, x, &g, &obj, &eps)?;
            disc_value = val;
            let mut p = disc.params();
            disc_opt.step(&mut p, &grad, cfg.lr_disc, cfg.optimizer);
            disc.set_params(&p);
            if quadratic {
                project_unit_columns(&mut disc);
            }
        }
        let (gen_value, grad) = gen_value_and_grad(&gen, &disc, z, cfg.beta_g)?;
        let neg: Vec<f64> = grad.iter().map(|v| -v).collect();
        let mut p = gen.params();
        gen_opt.step(&mut p, &neg, cfg.lr_gen, cfg.optimizer);
        gen.set_params(&p);

        if !disc_value.is_finite() || !gen_value.is_finite() || p.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                iteration: step,
                step: cfg.lr_gen,
            });
        }
        losses.push(LossRecord {
            step,
            disc_loss: -disc_value,
            gen_loss: gen_value,
        });
    }
    let generated = forward(&gen, z)?;
    Ok(TrainResult {
        gen,
        disc,
        losses,
        generated,
    })
}

/// Per-neuron rescaling `u_j ← αu_j`, `b_j ← αb_j`, `v_j ← v_j/α` with
/// `α = (‖v_j‖/‖(u_j, b_j)‖)^{1/2}`. Neurons with zero input weights but a
/// nonzero output weight are zeroed; their indices are returned.
pub fn balance_weights(net: &TwoLayerNet) -> Result<(TwoLayerNet, Vec<usize>)> {
    if !net.activation.is_positively_homogeneous() {
        return Err(Error::invalid("weight balancing needs a positively homogeneous activation"));
    }
    let mut out = net.clone();
    let mut zeroed = Vec::new();
    for j in 0..net.hidden() {
        let b = net.bias.as_ref().map_or(0.0, |b| b[j]);
        let un = (net.first_layer.column(j).norm_squared() + b * b).sqrt();
        let vn = net.second_layer.row(j).norm();
        if un == 0.0 || vn == 0.0 {
            if un == 0.0 && vn != 0.0 {
                zeroed.push(j);
            }
            out.first_layer.column_mut(j).fill(0.0);
            out.second_layer.row_mut(j).fill(0.0);
            if let Some(bias) = &mut out.bias {
                bias[j] = 0.0;
            }
            continue;
        }
        let alpha = (vn / un).sqrt();
        out.first_layer.column_mut(j).scale_mut(alpha);
        out.second_layer.row_mut(j).scale_mut(1.0 / alpha);
        if let Some(bias) = &mut out.bias {
            bias[j] *= alpha;
        }
    }
    Ok((out, zeroed))
}

/// `Σ_j ‖(u_j, b_j)‖² + ‖v_j‖²`.
pub fn weight_decay_sum(net: &TwoLayerNet) -> f64 {
    net.first_layer.norm_squared() + net.second_layer.norm_squared() + net.bias.as_ref().map_or(0.0, |b| b.norm_squared())
}

/// `2Σ_j ‖(u_j, b_j)‖·‖v_j‖`.
pub fn path_norm_sum(net: &TwoLayerNet) -> f64 {
    (0..net.hidden())
        .map(|j| {
            let b = net.bias.as_ref().map_or(0.0, |b| b[j]);
            2.0 * (net.first_layer.column(j).norm_squared() + b * b).sqrt() * net.second_layer.row(j).norm()
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunClass {
    Converged,
    Oscillatory,
}

/// Standard deviation of the discriminator loss over the final quarter.
pub fn tail_loss_std(losses: &[LossRecord]) -> f64 {
    let n = losses.len();
    if n == 0 {
        return 0.0;
    }
    let tail = &losses[n - (n / 4).max(1)..];
    let mean = tail.iter().map(|r| r.disc_loss).sum::<f64>() / tail.len() as f64;
    (tail.iter().map(|r| (r.disc_loss - mean).powi(2)).sum::<f64>() / tail.len() as f64).sqrt()
}

/// A run is oscillatory when its final-quarter loss standard deviation
/// exceeds ten times that of the calmest run in the sweep.
pub fn classify_runs(runs: &[&[LossRecord]]) -> Vec<RunClass> {
    let stds: Vec<f64> = runs.iter().map(|r| tail_loss_std(r)).collect();
    let reference = stds.iter().copied().fold(f64::INFINITY, f64::min).max(1e-12);
    stds.iter()
        .map(|&s| {
            if s > 10.0 * reference {
                RunClass::Oscillatory
            } else {
                RunClass::Converged
            }
        })
        .collect()
}

/// Architecture and training settings shared by every run of a seed sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSetup {
    pub latent_dim: usize,
    pub gen_hidden: usize,
    pub disc_hidden: usize,
    pub train: TrainConfig,
}

impl Default for SweepSetup {
    /// Two-sample toy defaults: ReLU generator and discriminator with 150
    /// neurons each, Adam with `β₁ = 0`, `β₂ = 0.99`.
    fn default() -> Self {
        SweepSetup {
            latent_dim: 2,
            gen_hidden: 150,
            disc_hidden: 150,
            train: TrainConfig {
                lr_gen: 1e-3,
                lr_disc: 1e-3,
                steps: 10_000,
                disc_steps: 1,
                beta_d: 0.1,
                beta_g: 1.0,
                gradient_penalty: None,
                seed: 0,
                optimizer: Optimizer::AdamLike {
                    beta1: 0.0,
                    beta2: 0.99,
                    eps: 1e-8,
                },
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepRun {
    pub seed: u64,
    pub result: Result<TrainResult>,
}

/// One independent run per seed, executed in parallel. Each seed draws its
/// own latent matrix (one row per real sample) and initial weights.
pub fn seed_sweep(x: &DataMatrix, setup: &SweepSetup, seeds: &[u64]) -> Vec<SweepRun> {
    use rayon::prelude::*;
    seeds
        .par_iter()
        .map(|&seed| {
            let run = || -> Result<TrainResult> {
                let z = gaussian_matrix(x.nrows(), setup.latent_dim, 1000 + seed);
                let gen = TwoLayerNet::random(
                    setup.latent_dim,
                    setup.gen_hidden,
                    x.ncols(),
                    ActivationKind::ReLU,
                    true,
                    3 * seed + 1,
                )?;
                let disc = TwoLayerNet::random(x.ncols(), setup.disc_hidden, 1, ActivationKind::ReLU, false, 3 * seed + 2)?;
                let cfg = TrainConfig {
                    seed,
                    ..setup.train.clone()
                };
                gda_train(x, &z, &gen, &disc, &cfg)
            };
            SweepRun { seed, result: run() }
        })
        .collect()
}
