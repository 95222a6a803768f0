//! ReLU discriminator against a linear generator `G = ZW` as a
//! convex-concave game.
//!
//! For every jointly realizable pair of sign patterns `(H_x, H_g)` the
//! discriminator contributes directions `r, r′` constrained to the cone of
//! `H_x` over `X`. The G-side cone constraints couple `W` and `r`; they are
//! moved into the objective with fixed multipliers `λ, λ′`, so that each
//! block contributes `a(W)ᵀr − β‖r‖` with `a` affine in `W`:
//!
//! `a_j(W)  =  Xᵀh_x − WᵀZᵀ(h_g − (2H_g − I)λ)`
//! `a′_j(W) = −Xᵀh_x + WᵀZᵀ(h_g + (2H_g − I)λ′)`
//!
//! The resulting saddle problem is solved by Chambolle–Pock.

use nalgebra::{DMatrix, DVector};

use crate::arrangements::{enumerate_arrangements, Cone};
use crate::duality::{dual_gap_relu, dual_gap_relu_exact_1d};
use crate::error::{Error, Result};
use crate::numerics::{check_finite, pinv, spectral_norm, DataMatrix};
use crate::solvers::{Regularizer, RegularizerKind};

/// Divergence threshold on the iterate norm.
pub const DIVERGENCE_NORM: f64 = 1e6;

#[derive(Debug, Clone)]
pub struct ArrangementPair {
    pub hx: Vec<bool>,
    pub hg: Vec<bool>,
    cone: Cone,
}

impl ArrangementPair {
    pub fn new(x: &DataMatrix, hx: Vec<bool>, hg: Vec<bool>) -> Result<Self> {
        let cone = Cone::new(&hx, x)?;
        Ok(ArrangementPair { hx, hg, cone })
    }
}

#[derive(Debug, Clone)]
pub struct GameInstance {
    pub x: DataMatrix,
    pub z: DataMatrix,
    pub beta_d: f64,
    pub reg: Regularizer,
    pub pairs: Vec<ArrangementPair>,
    /// Whether the pair list came from an exhaustive enumeration.
    pub complete: bool,
}

impl GameInstance {
    /// Pairs are the sign patterns of the stacked matrix `[X; ZW_ref]`, so
    /// only combinations a single direction can realize are kept. Pairs with
    /// no active row on either side are dropped.
    pub fn new(x: &DataMatrix, z: &DataMatrix, beta_d: f64, reg: Regularizer, w_ref: &DataMatrix) -> Result<Self> {
        check_finite(x, "real data")?;
        check_finite(z, "latent matrix")?;
        if !(beta_d > 0.0) {
            return Err(Error::invalid(format!("beta_d must be positive, got {beta_d}")));
        }
        if w_ref.nrows() != z.ncols() || w_ref.ncols() != x.ncols() {
            return Err(Error::dims("generator weight shape", z.ncols() * x.ncols(), w_ref.len()));
        }
        let g = z * w_ref;
        let nr = x.nrows();
        let stacked = DMatrix::from_fn(nr + g.nrows(), x.ncols(), |i, j| if i < nr { x[(i, j)] } else { g[(i - nr, j)] });
        let arr = enumerate_arrangements(&stacked, false, 4096)?;
        let mut pairs = Vec::new();
        for p in &arr.patterns {
            if !p.pattern.iter().any(|&b| b) {
                continue;
            }
            let (hx, hg) = p.pattern.split_at(nr);
            pairs.push(ArrangementPair::new(x, hx.to_vec(), hg.to_vec())?);
        }
        Self::with_pairs(x, z, beta_d, reg, pairs, arr.complete)
    }

    pub fn with_pairs(
        x: &DataMatrix,
        z: &DataMatrix,
        beta_d: f64,
        reg: Regularizer,
        pairs: Vec<ArrangementPair>,
        complete: bool,
    ) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::invalid("game needs at least one arrangement pair"));
        }
        for p in &pairs {
            if p.hx.len() != x.nrows() {
                return Err(Error::dims("X-side pattern length", x.nrows(), p.hx.len()));
            }
            if p.hg.len() != z.nrows() {
                return Err(Error::dims("G-side pattern length", z.nrows(), p.hg.len()));
            }
        }
        Ok(GameInstance {
            x: x.clone(),
            z: z.clone(),
            beta_d,
            reg,
            pairs,
            complete,
        })
    }

    fn blocks(&self) -> usize {
        2 * self.pairs.len()
    }
}

/// Multipliers for the G-side cone constraints.
#[derive(Debug, Clone)]
pub enum Multipliers {
    /// Same value on every row of every block.
    Uniform(f64),
    /// `(λ_j, λ′_j)` per pair, each of length `n_f`.
    PerPair(Vec<(DVector<f64>, DVector<f64>)>),
}

/// Per-pair `λ` and `λ′` vectors.
type MultiplierBlocks = (Vec<DVector<f64>>, Vec<DVector<f64>>);

impl Multipliers {
    fn expand(&self, g: &GameInstance) -> Result<MultiplierBlocks> {
        let nf = g.z.nrows();
        match self {
            Multipliers::Uniform(v) => {
                if !(*v >= 0.0) {
                    return Err(Error::invalid("multipliers must be nonnegative"));
                }
                let l = DVector::from_element(nf, *v);
                Ok((vec![l.clone(); g.pairs.len()], vec![l; g.pairs.len()]))
            }
            Multipliers::PerPair(list) => {
                if list.len() != g.pairs.len() {
                    return Err(Error::dims("multiplier pairs", g.pairs.len(), list.len()));
                }
                for (a, b) in list {
                    if a.len() != nf || b.len() != nf {
                        return Err(Error::dims("multiplier length", nf, a.len().max(b.len())));
                    }
                    if a.iter().chain(b.iter()).any(|&v| !(v >= 0.0)) {
                        return Err(Error::invalid("multipliers must be nonnegative"));
                    }
                }
                Ok(list.iter().cloned().unzip())
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct GameState {
    /// Generator weights, `d_f × d`.
    pub w: DataMatrix,
    pub r: Vec<DVector<f64>>,
    pub r_prime: Vec<DVector<f64>>,
    pub lambda: Vec<DVector<f64>>,
    pub lambda_prime: Vec<DVector<f64>>,
}

impl GameState {
    pub fn zeros(g: &GameInstance, multipliers: &Multipliers) -> Result<Self> {
        let (lambda, lambda_prime) = multipliers.expand(g)?;
        let d = g.x.ncols();
        Ok(GameState {
            w: DMatrix::zeros(g.z.ncols(), d),
            r: vec![DVector::zeros(d); g.pairs.len()],
            r_prime: vec![DVector::zeros(d); g.pairs.len()],
            lambda,
            lambda_prime,
        })
    }

    fn block(&self, b: usize) -> &DVector<f64> {
        let p = self.r.len();
        if b < p {
            &self.r[b]
        } else {
            &self.r_prime[b - p]
        }
    }

    fn norm(&self) -> f64 {
        let dual: f64 = self.r.iter().chain(&self.r_prime).map(|v| v.norm_squared()).sum();
        (self.w.norm_squared() + dual).sqrt()
    }
}

/// Affine data of every block: `a_b(W) = e_b + Wᵀ z_b`.
struct Coupling {
    e: Vec<DVector<f64>>,
    zb: Vec<DVector<f64>>,
}

fn coupling(g: &GameInstance, s: &GameState) -> Result<Coupling> {
    let p = g.pairs.len();
    let nf = g.z.nrows();
    if s.r.len() != p || s.r_prime.len() != p || s.lambda.len() != p || s.lambda_prime.len() != p {
        return Err(Error::dims("state blocks vs pairs", p, s.r.len()));
    }
    if s.w.nrows() != g.z.ncols() || s.w.ncols() != g.x.ncols() {
        return Err(Error::dims("generator weight rows", g.z.ncols(), s.w.nrows()));
    }
    let mut e = Vec::with_capacity(2 * p);
    let mut zb = Vec::with_capacity(2 * p);
    let mut e_prime = Vec::with_capacity(p);
    let mut zb_prime = Vec::with_capacity(p);
    for (j, pair) in g.pairs.iter().enumerate() {
        let hx = DVector::from_iterator(pair.hx.len(), pair.hx.iter().map(|&b| if b { 1.0 } else { 0.0 }));
        let hg = DVector::from_iterator(nf, pair.hg.iter().map(|&b| if b { 1.0 } else { 0.0 }));
        let signs = DVector::from_iterator(nf, pair.hg.iter().map(|&b| if b { 1.0 } else { -1.0 }));
        let c = g.x.transpose() * &hx;
        let m = signs.component_mul(&s.lambda[j]) - &hg;
        let m_prime = signs.component_mul(&s.lambda_prime[j]) + &hg;
        e.push(c.clone());
        zb.push(g.z.transpose() * m);
        e_prime.push(-c);
        zb_prime.push(g.z.transpose() * m_prime);
    }
    e.extend(e_prime);
    zb.extend(zb_prime);
    Ok(Coupling { e, zb })
}

impl Coupling {
    fn a(&self, b: usize, w: &DataMatrix) -> DVector<f64> {
        &self.e[b] + w.transpose() * &self.zb[b]
    }

    /// `Σ_b z_b r_bᵀ`, the W-gradient of the bilinear part.
    fn adjoint(&self, s: &GameState) -> DataMatrix {
        let mut out = DMatrix::zeros(self.zb[0].len(), s.r[0].len());
        for b in 0..self.zb.len() {
            out += &self.zb[b] * s.block(b).transpose();
        }
        out
    }

    fn operator_norm(&self) -> Result<f64> {
        let rows = DMatrix::from_fn(self.zb.len(), self.zb[0].len(), |b, i| self.zb[b][i]);
        spectral_norm(&rows, 1e-8)
    }
}

fn reg_value(reg: &Regularizer, w: &DataMatrix) -> f64 {
    reg.value(&DVector::from_column_slice(w.as_slice()))
}

fn reg_prox(reg: &Regularizer, w: &DataMatrix, t: f64) -> DataMatrix {
    let v = reg.prox(&DVector::from_column_slice(w.as_slice()), t);
    DMatrix::from_column_slice(w.nrows(), w.ncols(), v.as_slice())
}

fn reg_subgradient(reg: &Regularizer, w: &DataMatrix) -> DataMatrix {
    let v = reg.subgradient(&DVector::from_column_slice(w.as_slice()));
    DMatrix::from_column_slice(w.nrows(), w.ncols(), v.as_slice())
}

/// `R(W) + Σ_b a_b(W)ᵀr_b − β‖r_b‖`.
pub fn game_objective(s: &GameState, g: &GameInstance) -> Result<f64> {
    let k = coupling(g, s)?;
    Ok(objective_with(&k, s, g, &s.w))
}

fn objective_with(k: &Coupling, s: &GameState, g: &GameInstance, w: &DataMatrix) -> f64 {
    let blocks: f64 = (0..g.blocks())
        .map(|b| {
            let r = s.block(b);
            k.a(b, w).dot(r) - g.beta_d * r.norm()
        })
        .sum();
    reg_value(&g.reg, w) + blocks
}

/// W-side line-search decrease plus the largest single-block gain
/// available within radius `‖r_b‖ + 1`.
pub fn saddle_residual(s: &GameState, g: &GameInstance, probe_count: usize) -> Result<f64> {
    let k = coupling(g, s)?;
    Ok(residual_with(&k, s, g, probe_count.max(1)))
}

fn residual_with(k: &Coupling, s: &GameState, g: &GameInstance, probes: usize) -> f64 {
    let base = objective_with(k, s, g, &s.w);
    let grad = reg_subgradient(&g.reg, &s.w) + k.adjoint(s);
    let gn = grad.norm();
    let mut w_gain: f64 = 0.0;
    if gn > 0.0 {
        let mut steps: Vec<f64> = (0..probes)
            .map(|i| {
                let frac = if probes == 1 { 0.5 } else { i as f64 / (probes - 1) as f64 };
                10f64.powf(-8.0 + 11.0 * frac)
            })
            .collect();
        if let RegularizerKind::SquaredFrobenius = g.reg.kind {
            if g.reg.weight > 0.0 {
                steps.push(1.0 / (2.0 * g.reg.weight));
            }
        }
        for t in steps {
            let trial = &s.w - &grad * t;
            w_gain = w_gain.max(base - objective_with(k, s, g, &trial));
        }
    }
    let mut r_gain: f64 = 0.0;
    for b in 0..g.blocks() {
        let a = k.a(b, &s.w);
        let r = s.block(b);
        let current = a.dot(r) - g.beta_d * r.norm();
        let radius = r.norm() + 1.0;
        let pair = &g.pairs[b % g.pairs.len()];
        let best = radius * (pair.cone.project(&a).norm() - g.beta_d).max(0.0);
        r_gain = r_gain.max(best - current);
    }
    w_gain + r_gain
}

#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub state: GameState,
    pub objective: f64,
    pub saddle_residual: f64,
    pub iterations: usize,
    /// `(iteration, objective, residual)` sampled along the run.
    pub trajectory: Vec<(usize, f64, f64)>,
}

/// Warm start `W = Z⁺X`.
pub fn warm_start(x: &DataMatrix, z: &DataMatrix) -> Result<DataMatrix> {
    Ok(pinv(z)? * x)
}

/// Chambolle–Pock from the warm start `W = Z⁺X`, `r = r′ = 0`, with
/// `τ = σ = step / ‖K‖`.
pub fn primal_dual_solve(g: &GameInstance, multipliers: &Multipliers, iters: usize, step: f64) -> Result<SolveOutput> {
    let mut s = GameState::zeros(g, multipliers)?;
    s.w = warm_start(&g.x, &g.z)?;
    primal_dual_from(g, s, iters, step)
}

pub fn primal_dual_from(g: &GameInstance, mut s: GameState, iters: usize, step: f64) -> Result<SolveOutput> {
    if iters == 0 {
        return Err(Error::invalid("iteration count must be at least 1"));
    }
    if !(step > 0.0) {
        return Err(Error::invalid(format!("step must be positive, got {step}")));
    }
    let k = coupling(g, &s)?;
    let norm = k.operator_norm()?.max(1e-12);
    let (tau, sigma) = (step / norm, step / norm);
    let record_every = (iters / 200).max(1);
    let mut trajectory = Vec::new();
    let mut w_bar = s.w.clone();
    for it in 0..iters {
        for b in 0..g.blocks() {
            let pair = &g.pairs[b % g.pairs.len()];
            let v = s.block(b) + k.a(b, &w_bar) * sigma;
            let proj = pair.cone.project(&v);
            let n = proj.norm();
            let shrink = if n > 0.0 { (1.0 - sigma * g.beta_d / n).max(0.0) } else { 0.0 };
            let p = g.pairs.len();
            if b < p {
                s.r[b] = proj * shrink;
            } else {
                s.r_prime[b - p] = proj * shrink;
            }
        }
        let w_prev = s.w.clone();
        s.w = reg_prox(&g.reg, &(&s.w - k.adjoint(&s) * tau), tau);
        w_bar = &s.w * 2.0 - &w_prev;

        let size = s.norm();
        if !size.is_finite() || size > DIVERGENCE_NORM {
            return Err(Error::Diverged { iteration: it, step });
        }
        if it % record_every == 0 || it + 1 == iters {
            trajectory.push((it, objective_with(&k, &s, g, &s.w), residual_with(&k, &s, g, 24)));
        }
    }
    let objective = objective_with(&k, &s, g, &s.w);
    let saddle_residual = residual_with(&k, &s, g, 24);
    Ok(SolveOutput {
        state: s,
        objective,
        saddle_residual,
        iterations: iters,
        trajectory,
    })
}

#[derive(Debug, Clone)]
pub struct GameRun {
    pub lambda: f64,
    pub output: SolveOutput,
    /// Objective change after refreezing `H_g` at the final `ZW` and re-solving.
    pub refreeze_shift: f64,
    pub stationary: bool,
    /// True ReLU dual gap of the final `ZW` (exact for one column).
    pub relu_gap: f64,
}

#[derive(Debug, Clone)]
pub struct GameOutcome {
    pub runs: Vec<GameRun>,
    /// Index into `runs` of the selected run.
    pub best: usize,
}

/// Sweeps uniform multipliers, refreezes `H_g` once per run, and selects
/// the lowest-objective run whose generator satisfies the ReLU constraint
/// (falling back to the smallest residual).
#[allow(clippy::too_many_arguments)]
pub fn solve_game(
    x: &DataMatrix,
    z: &DataMatrix,
    beta_d: f64,
    reg: &Regularizer,
    lambda_grid: &[f64],
    iters: usize,
    step: f64,
    tol: f64,
) -> Result<GameOutcome> {
    if lambda_grid.is_empty() {
        return Err(Error::invalid("lambda grid is empty"));
    }
    let w0 = warm_start(x, z)?;
    let mut runs = Vec::with_capacity(lambda_grid.len());
    for &lambda in lambda_grid {
        let mult = Multipliers::Uniform(lambda);
        let inst = GameInstance::new(x, z, beta_d, reg.clone(), &w0)?;
        let first = primal_dual_solve(&inst, &mult, iters, step)?;

        let refrozen = GameInstance::new(x, z, beta_d, reg.clone(), &first.state.w)?;
        let mut restart = GameState::zeros(&refrozen, &mult)?;
        restart.w = first.state.w.clone();
        let second = primal_dual_from(&refrozen, restart, iters, step)?;
        let shift = (second.objective - first.objective).abs();

        let g = z * &second.state.w;
        let relu_gap = if x.ncols() == 1 {
            dual_gap_relu_exact_1d(x, &g, false)?.gap_value
        } else {
            dual_gap_relu(x, &g, 20_000, 0)?.gap_value
        };
        runs.push(GameRun {
            lambda,
            output: second,
            refreeze_shift: shift,
            stationary: shift <= tol,
            relu_gap,
        });
    }
    let feasible: Vec<usize> = (0..runs.len()).filter(|&i| runs[i].relu_gap <= beta_d + tol).collect();
    let best = if feasible.is_empty() {
        (0..runs.len())
            .min_by(|&a, &b| runs[a].output.saddle_residual.total_cmp(&runs[b].output.saddle_residual))
            .expect("nonempty grid")
    } else {
        *feasible
            .iter()
            .min_by(|&&a, &&b| runs[a].output.objective.total_cmp(&runs[b].output.objective))
            .expect("nonempty")
    };
    Ok(GameOutcome { runs, best })
}

impl GameOutcome {
    pub fn best_run(&self) -> &GameRun {
        &self.runs[self.best]
    }

    /// Errors with `NonStationary` when the selected run moved under refreezing.
    pub fn require_stationary(&self) -> Result<&GameRun> {
        let run = self.best_run();
        if run.stationary {
            Ok(run)
        } else {
            Err(Error::NonStationary { shift: run.refreeze_shift })
        }
    }
}
