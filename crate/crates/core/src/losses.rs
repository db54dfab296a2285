//! Training objectives: IPF, temporal-difference and flow matching.
//!
//! Every loss is a pure function of a [`TrajectoryBatch`] and the current
//! [`NetBundle`] and returns its value together with parameter gradients for
//! the networks it trains.
//!
//! A batch always trains the side opposite to the one that generated it:
//! forward batches (simulated with `Z_θ`) train the φ networks `Ẑ_φ, Ŷ_φ`,
//! backward batches train `Z_θ, Y_θ`. Within that convention the φ and θ
//! versions of each loss are the same code with mirrored signs, so the
//! `_phi` / `_theta` entry points only check the batch direction.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{MlpParams, NetBundle, NetId};
use crate::scenario::{DistributionSpec, Point, ProblemSpec, DIM};
use crate::sde::{Direction, TrajectoryBatch};

/// Relative weights of the three objectives in a policy update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_ipf: f64,
    pub w_td: f64,
    pub w_fm: f64,
}

/// Default strength of the flow-matching regularizer.
pub const DEFAULT_LAMBDA_FM: f64 = 0.1;

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_ipf: 1.0,
            w_td: 1.0,
            w_fm: DEFAULT_LAMBDA_FM,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        LossWeights {
            w_ipf: 0.0,
            w_td: 0.0,
            w_fm: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("w_ipf", self.w_ipf), ("w_td", self.w_td), ("w_fm", self.w_fm)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("{name} must be >= 0, got {w}")));
            }
        }
        Ok(())
    }
}

/// Gradients for any subset of the five networks.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Grads {
    nets: [Option<MlpParams>; 5],
}

impl Grads {
    pub fn new() -> Self {
        Grads::default()
    }

    pub fn get(&self, id: NetId) -> Option<&MlpParams> {
        self.nets[id.index()].as_ref()
    }

    pub fn take(&mut self, id: NetId) -> Option<MlpParams> {
        self.nets[id.index()].take()
    }

    /// `self[id] += scale * g`.
    pub fn add(&mut self, id: NetId, g: &MlpParams, scale: f64) {
        match &mut self.nets[id.index()] {
            Some(acc) => acc.axpy(scale, g),
            slot @ None => {
                let mut g = g.clone();
                g.scale(scale);
                *slot = Some(g);
            }
        }
    }

    /// Adds every gradient of `other`, scaled.
    pub fn merge(&mut self, other: &Grads, scale: f64) {
        for id in NetId::ALL {
            if let Some(g) = other.get(id) {
                self.add(id, g, scale);
            }
        }
    }

    pub fn norm(&self, id: NetId) -> f64 {
        self.get(id).map_or(0.0, MlpParams::norm)
    }

    pub fn ids(&self) -> impl Iterator<Item = NetId> + '_ {
        NetId::ALL.into_iter().filter(|id| self.get(*id).is_some())
    }
}

/// A loss value with its gradients.
#[derive(Clone, Debug, Default)]
pub struct LossValue {
    pub value: f64,
    pub grads: Grads,
}

impl LossValue {
    fn zero() -> Self {
        LossValue::default()
    }
}

/// Policy network trained by batches of `direction`.
pub fn trainee_policy(direction: Direction) -> NetId {
    direction.opposite().policy()
}

/// Value network trained by batches of `direction`.
pub fn trainee_value(direction: Direction) -> NetId {
    match direction {
        Direction::Forward => NetId::YPhi,
        Direction::Backward => NetId::YTheta,
    }
}

/// The other side's value network, needed for the boundary target.
fn partner_value(direction: Direction) -> NetId {
    match direction {
        Direction::Forward => NetId::YTheta,
        Direction::Backward => NetId::YPhi,
    }
}

/// Marginal the batch starts from.
fn boundary_marginal(spec: &ProblemSpec, direction: Direction) -> &DistributionSpec {
    match direction {
        Direction::Forward => &spec.source,
        Direction::Backward => &spec.target,
    }
}

/// Sign of `∇·f` inside the trainee's divergence term: `∇·(σẐ − f)` on
/// forward batches, `∇·(σZ + f)` on backward ones.
fn drift_div_sign(direction: Direction) -> f64 {
    -direction.drift_sign()
}

fn expect(batch: &TrajectoryBatch, expected: Direction) -> Result<()> {
    if batch.direction == expected {
        Ok(())
    } else {
        Err(Error::DirectionMismatch {
            expected,
            actual: batch.direction,
        })
    }
}

/// Every `(sample, step)` pair with `step < N`, sample-major.
pub fn all_points(batch: &TrajectoryBatch) -> Vec<(usize, usize)> {
    let n = batch.steps();
    (0..batch.len()).flat_map(|i| (0..n).map(move |k| (i, k))).collect()
}

/// Weight that turns a sum over [`all_points`] into `mean_i Σ_k (·)δt`.
fn full_weight(batch: &TrajectoryBatch) -> f64 {
    batch.dt / batch.len().max(1) as f64
}

/// Network inputs `[t, x]` (physical time) for the listed points.
pub fn point_inputs(batch: &TrajectoryBatch, points: &[(usize, usize)]) -> Array2<f64> {
    let mut input = Array2::zeros((points.len(), DIM + 1));
    for (r, &(i, k)) in points.iter().enumerate() {
        input[[r, 0]] = batch.physical_time(k);
        for c in 0..DIM {
            input[[r, c + 1]] = batch.x[[i, k, c]];
        }
    }
    input
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ---------------------------------------------------------------- IPF

/// IPF objective over selected points, each contributing
/// `weight · (½‖P‖² + PᵀQ + σ∇·P ∓ ∇·f)` where `P` is the trainee policy
/// and `Q` the stored generating policy. The generating side is a constant.
pub fn ipf_loss_points(
    batch: &TrajectoryBatch,
    nets: &NetBundle,
    spec: &ProblemSpec,
    points: &[(usize, usize)],
    weight: f64,
) -> LossValue {
    if points.is_empty() {
        return LossValue::zero();
    }
    let id = trainee_policy(batch.direction);
    let net = nets.net(id);
    let input = point_inputs(batch, points);
    let tape = net.div_tape(input.view());
    let p = tape.out();
    let sigma = spec.sigma;
    let sf = drift_div_sign(batch.direction);
    let mut value = 0.0;
    let mut g_out = Array2::zeros(p.raw_dim());
    let g_div = Array1::from_elem(points.len(), weight * sigma);
    for (r, &(i, k)) in points.iter().enumerate() {
        let x = batch.state(i, k);
        let q = batch.policy_at(i, k);
        let pr = [p[[r, 0]], p[[r, 1]]];
        let div_f = spec.drift_divergence(&x, batch.physical_time(k));
        let integrand = 0.5 * dot(&pr, &pr) + dot(&pr, &q) + sigma * tape.div[r] + sf * div_f;
        value += weight * integrand;
        for c in 0..DIM {
            g_out[[r, c]] = weight * (pr[c] + q[c]);
        }
    }
    let mut grad = MlpParams::zeros(net.shape());
    net.backward_div(&tape, g_out.view(), g_div.view(), &mut grad);
    let mut grads = Grads::new();
    grads.add(id, &grad, 1.0);
    LossValue { value, grads }
}

/// Full-batch IPF loss, `mean_i Σ_{k<N} (·)·δt`, for whichever side the
/// batch trains.
pub fn ipf_loss(batch: &TrajectoryBatch, nets: &NetBundle, spec: &ProblemSpec) -> LossValue {
    ipf_loss_points(batch, nets, spec, &all_points(batch), full_weight(batch))
}

/// IPF loss for `Ẑ_φ` on forward samples.
pub fn ipf_loss_phi(batch: &TrajectoryBatch, nets: &NetBundle, spec: &ProblemSpec) -> Result<LossValue> {
    expect(batch, Direction::Forward)?;
    Ok(ipf_loss(batch, nets, spec))
}

/// IPF loss for `Z_θ` on backward samples.
pub fn ipf_loss_theta(batch: &TrajectoryBatch, nets: &NetBundle, spec: &ProblemSpec) -> Result<LossValue> {
    expect(batch, Direction::Backward)?;
    Ok(ipf_loss(batch, nets, spec))
}

// ----------------------------------------------------------------- TD

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TdMode {
    /// Bootstrap from the value head one step back.
    Single,
    /// Accumulate increments from the boundary target.
    Multi,
}

impl fmt::Display for TdMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TdMode::Single => "single",
            TdMode::Multi => "multi",
        })
    }
}

impl FromStr for TdMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "single" => Ok(TdMode::Single),
            "multi" => Ok(TdMode::Multi),
            other => Err(Error::Config(format!("unknown td mode `{other}` (single or multi)"))),
        }
    }
}

/// Coefficient of the policy cross term inside a TD increment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossTerm {
    /// `PᵀQ`, trainee policy against the generating policy.
    Mixed,
    /// `2PᵀQ`.
    Doubled,
    /// `‖P‖²` on forward batches and `PᵀQ` on backward ones.
    AsPrinted,
}

impl fmt::Display for CrossTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CrossTerm::Mixed => "mixed",
            CrossTerm::Doubled => "doubled",
            CrossTerm::AsPrinted => "as_printed",
        })
    }
}

impl FromStr for CrossTerm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "mixed" => Ok(CrossTerm::Mixed),
            "doubled" => Ok(CrossTerm::Doubled),
            "as_printed" => Ok(CrossTerm::AsPrinted),
            other => Err(Error::Config(format!(
                "unknown cross term `{other}` (mixed, doubled or as_printed)"
            ))),
        }
    }
}

impl CrossTerm {
    /// Value of the cross term and its gradient in `p`.
    fn eval(self, direction: Direction, p: &Point, q: &Point) -> (f64, Point) {
        match (self, direction) {
            (CrossTerm::Mixed, _) | (CrossTerm::AsPrinted, Direction::Backward) => (dot(p, q), *q),
            (CrossTerm::Doubled, _) => (2.0 * dot(p, q), [2.0 * q[0], 2.0 * q[1]]),
            (CrossTerm::AsPrinted, Direction::Forward) => (dot(p, p), [2.0 * p[0], 2.0 * p[1]]),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TdOptions {
    pub mode: TdMode,
    pub cross: CrossTerm,
    /// Let the TD loss push on the trainee policy through the targets.
    pub policy_grad: bool,
}

impl Default for TdOptions {
    fn default() -> Self {
        TdOptions {
            mode: TdMode::Multi,
            cross: CrossTerm::Mixed,
            policy_grad: true,
        }
    }
}

/// TD targets along one batch, for the value head that batch trains.
#[derive(Clone, Debug, PartialEq)]
pub struct TDTargets {
    pub direction: Direction,
    pub mode: TdMode,
    /// Boundary target `log ρ(X₀) − V_partner(X₀)`, one per sample.
    pub boundary: Array1<f64>,
    /// Trainee value head along the path, `n × (N+1)`.
    pub heads: Array2<f64>,
    /// Increments `TD^single_{k+1} − head_k`, `n × N`.
    pub deltas: Array2<f64>,
    /// Targets `TD_k`, `n × (N+1)`.
    pub values: Array2<f64>,
}

impl TDTargets {
    /// Largest violation of `TD_k = TD_0 + Σ_{j<k} δ_j` (multi) or
    /// `TD_k = head_{k−1} + δ_{k−1}` (single).
    pub fn identity_residual(&self) -> f64 {
        let (n, m) = self.values.dim();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let mut acc = self.boundary[i];
            worst = worst.max((self.values[[i, 0]] - acc).abs());
            for k in 1..m {
                let expected = match self.mode {
                    TdMode::Multi => {
                        acc += self.deltas[[i, k - 1]];
                        acc
                    }
                    TdMode::Single => self.heads[[i, k - 1]] + self.deltas[[i, k - 1]],
                };
                worst = worst.max((self.values[[i, k]] - expected).abs());
            }
        }
        worst
    }
}

/// Everything a TD evaluation needs, plus the policy tape for gradients.
struct TdPieces {
    targets: TDTargets,
    /// `∂δ_k/∂P_k` minus the noise term, per path point `i·N + k`.
    dpolicy: Array2<f64>,
    tape: crate::net::DivTape,
}

fn td_pieces(batch: &TrajectoryBatch, nets: &NetBundle, spec: &ProblemSpec, opts: &TdOptions) -> TdPieces {
    let dir = batch.direction;
    let (n, steps) = (batch.len(), batch.steps());
    let dt = batch.dt;
    let sigma = spec.sigma;
    let sf = drift_div_sign(dir);

    let path: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..=steps).map(move |k| (i, k))).collect();
    let input = point_inputs(batch, &path);
    let heads_flat = nets.net(trainee_value(dir)).forward(input.view());
    let heads = Array2::from_shape_fn((n, steps + 1), |(i, k)| heads_flat[[i * (steps + 1) + k, 0]]);
    let log_rho = if spec.needs_density() {
        let y = nets.net(NetId::YTheta).forward(input.view());
        let yh = nets.net(NetId::YPhi).forward(input.view());
        Some(Array2::from_shape_fn((n, steps + 1), |(i, k)| {
            let r = i * (steps + 1) + k;
            y[[r, 0]] + yh[[r, 0]]
        }))
    } else {
        None
    };

    let start: Vec<(usize, usize)> = (0..n).map(|i| (i, 0)).collect();
    let start_in = point_inputs(batch, &start);
    let partner = nets.net(partner_value(dir)).forward(start_in.view());
    let marginal = boundary_marginal(spec, dir);
    let boundary = Array1::from_shape_fn(n, |i| marginal.log_density(&batch.state(i, 0)) - partner[[i, 0]]);

    let inner = all_points(batch);
    let tape = nets.net(trainee_policy(dir)).div_tape(point_inputs(batch, &inner).view());
    let p = tape.out();
    let mut deltas = Array2::zeros((n, steps));
    let mut dpolicy = Array2::zeros((inner.len(), DIM));
    for (r, &(i, k)) in inner.iter().enumerate() {
        let x = batch.state(i, k);
        let t = batch.physical_time(k);
        let pr = [p[[r, 0]], p[[r, 1]]];
        let q = batch.policy_at(i, k);
        let dw = batch.noise(i, k);
        let (cross, dcross) = opts.cross.eval(dir, &pr, &q);
        let cost = spec.mf_cost(&x, log_rho.as_ref().map_or(0.0, |l| l[[i, k]]));
        let div_f = spec.drift_divergence(&x, t);
        let rate = 0.5 * dot(&pr, &pr) + sigma * tape.div[r] + sf * div_f + cross - cost;
        deltas[[i, k]] = rate * dt + dot(&pr, &dw);
        for c in 0..DIM {
            dpolicy[[r, c]] = (pr[c] + dcross[c]) * dt;
        }
    }

    let mut values = Array2::zeros((n, steps + 1));
    for i in 0..n {
        values[[i, 0]] = boundary[i];
        let mut acc = boundary[i];
        for k in 1..=steps {
            values[[i, k]] = match opts.mode {
                TdMode::Multi => {
                    acc += deltas[[i, k - 1]];
                    acc
                }
                TdMode::Single => heads[[i, k - 1]] + deltas[[i, k - 1]],
            };
        }
    }
    TdPieces {
        targets: TDTargets {
            direction: dir,
            mode: opts.mode,
            boundary,
            heads,
            deltas,
            values,
        },
        dpolicy,
        tape,
    }
}

/// TD targets for the value head trained by `batch`, built from the stored
/// states, generating policy and Brownian increments.
pub fn td_targets(batch: &TrajectoryBatch, nets: &NetBundle, spec: &ProblemSpec, opts: &TdOptions) -> TDTargets {
    td_pieces(batch, nets, spec, opts).targets
}

/// `mean_i Σ_{k<N} |V(X_k) − TD_k|·δt` with the targets held fixed; the
/// gradient reaches the trainee value head only.
fn td_value_loss(batch: &TrajectoryBatch, targets: &TDTargets, nets: &NetBundle) -> (LossValue, Array2<f64>) {
    let (n, steps) = (batch.len(), batch.steps());
    let id = trainee_value(batch.direction);
    let net = nets.net(id);
    let inner = all_points(batch);
    let input = point_inputs(batch, &inner);
    let tape = net.tape(input.view());
    let w = full_weight(batch);
    let mut signs = Array2::zeros((n, steps));
    let mut g_out = Array2::zeros((inner.len(), 1));
    let mut value = 0.0;
    for (r, &(i, k)) in inner.iter().enumerate() {
        let resid = tape.out[[r, 0]] - targets.values[[i, k]];
        value += w * resid.abs();
        let s = if resid > 0.0 {
            1.0
        } else if resid < 0.0 {
            -1.0
        } else {
            0.0
        };
        signs[[i, k]] = s;
        g_out[[r, 0]] = w * s;
    }
    let mut grad = MlpParams::zeros(net.shape());
    if !inner.is_empty() {
        net.backward(&tape, g_out.view(), &mut grad);
    }
    let mut grads = Grads::new();
    grads.add(id, &grad, 1.0);
    (LossValue { value, grads }, signs)
}

/// TD loss for `Y_θ` on backward samples against fixed targets.
pub fn td_loss_theta(batch: &TrajectoryBatch, targets: &TDTargets, nets: &NetBundle) -> Result<LossValue> {
    expect(batch, Direction::Backward)?;
    Ok(td_value_loss(batch, targets, nets).0)
}

/// TD loss for `Ŷ_φ` on forward samples against fixed targets.
pub fn td_loss_phi(batch: &TrajectoryBatch, targets: &TDTargets, nets: &NetBundle) -> Result<LossValue> {
    expect(batch, Direction::Forward)?;
    Ok(td_value_loss(batch, targets, nets).0)
}

/// Complete TD objective for the side `batch` trains: builds the targets,
/// evaluates the L1 loss and, when `opts.policy_grad` is set, adds the
/// gradient that flows through the targets into the trainee policy. The
/// partner side, the value heads inside the targets and the cost `F` stay
/// constant.
pub fn td_objective(
    batch: &TrajectoryBatch,
    nets: &NetBundle,
    spec: &ProblemSpec,
    opts: &TdOptions,
) -> (LossValue, TDTargets) {
    let pieces = td_pieces(batch, nets, spec, opts);
    let (mut loss, signs) = td_value_loss(batch, &pieces.targets, nets);
    if opts.policy_grad && !batch.is_empty() {
        let (n, steps) = (batch.len(), batch.steps());
        let w = full_weight(batch);
        // a[i, j] = ∂L/∂δ_j summed over every target that contains δ_j.
        let mut a = Array2::zeros((n, steps));
        for i in 0..n {
            match opts.mode {
                TdMode::Multi => {
                    let mut suffix = 0.0;
                    for j in (0..steps).rev() {
                        a[[i, j]] = -w * suffix;
                        suffix += signs[[i, j]];
                    }
                }
                TdMode::Single => {
                    for j in 0..steps.saturating_sub(1) {
                        a[[i, j]] = -w * signs[[i, j + 1]];
                    }
                }
            }
        }
        let sigma = spec.sigma;
        let mut g_out = Array2::zeros(pieces.dpolicy.raw_dim());
        let mut g_div = Array1::zeros(pieces.dpolicy.nrows());
        for r in 0..g_out.nrows() {
            let (i, k) = (r / steps, r % steps);
            let dw = batch.noise(i, k);
            for c in 0..DIM {
                g_out[[r, c]] = a[[i, k]] * (pieces.dpolicy[[r, c]] + dw[c]);
            }
            g_div[r] = a[[i, k]] * sigma * batch.dt;
        }
        let id = trainee_policy(batch.direction);
        let net = nets.net(id);
        let mut grad = MlpParams::zeros(net.shape());
        net.backward_div(&pieces.tape, g_out.view(), g_div.view(), &mut grad);
        loss.grads.add(id, &grad, 1.0);
    }
    (loss, pieces.targets)
}

// ------------------------------------------------------------------ FM

/// One conditional flow-matching evaluation on endpoint couples: draws
/// `t ~ U[0,1]` per couple and regresses `u_ψ(t, (1−t)X₀ + tX₁)` onto
/// `X₁ − X₀`. Returns the mean squared error and its gradient.
pub fn fm_train_step<R: Rng + ?Sized>(pairs: &[(Point, Point)], u: &MlpParams, rng: &mut R) -> (f64, MlpParams) {
    let times: Vec<f64> = pairs.iter().map(|_| rng.random::<f64>()).collect();
    fm_regression(pairs, &times, u)
}

/// [`fm_train_step`] with the interpolation times given.
pub fn fm_regression(pairs: &[(Point, Point)], times: &[f64], u: &MlpParams) -> (f64, MlpParams) {
    assert_eq!(pairs.len(), times.len(), "one time per couple");
    let m = pairs.len();
    let mut input = Array2::zeros((m, DIM + 1));
    let mut target = Array2::zeros((m, DIM));
    for (r, ((x0, x1), &t)) in pairs.iter().zip(times).enumerate() {
        input[[r, 0]] = t;
        for c in 0..DIM {
            input[[r, c + 1]] = (1.0 - t) * x0[c] + t * x1[c];
            target[[r, c]] = x1[c] - x0[c];
        }
    }
    let tape = u.tape(input.view());
    let resid = &tape.out - &target;
    let inv = 1.0 / m.max(1) as f64;
    let loss = resid.mapv(|v| v * v).sum() * inv;
    let g_out = resid * (2.0 * inv);
    let mut grad = MlpParams::zeros(u.shape());
    if m > 0 {
        u.backward(&tape, g_out.view(), &mut grad);
    }
    (loss, grad)
}

/// Drift-consistency penalty over selected points: each contributes
/// `weight · λ‖b(X_k) − s·u_ψ(X_k)‖²`, where `b` is the drift the trainee
/// policy generates (`−f + σẐ_φ` on forward batches, `f + σZ_θ` on backward
/// ones) and `s` is `−1` resp. `+1`, because `u_ψ` carries `ρ₀` to
/// `ρ_target` in physical time. Contributes nothing while `u_ψ` has never
/// been trained.
pub fn fm_policy_loss_points(
    batch: &TrajectoryBatch,
    nets: &NetBundle,
    spec: &ProblemSpec,
    lambda: f64,
    points: &[(usize, usize)],
    weight: f64,
) -> LossValue {
    let input = point_inputs(batch, points);
    fm_policy_loss_inputs(batch.direction, nets, spec, lambda, input.view(), weight)
}

/// The penalty of [`fm_policy_loss_points`] at arbitrary `(t, x)` rows in
/// physical time, for the side trained on batches of `direction`. `u_ψ` runs
/// on the unit clock of the interpolant, so it is queried at `t/T` and its
/// velocity divided by `T`.
pub fn fm_policy_loss_inputs(
    direction: Direction,
    nets: &NetBundle,
    spec: &ProblemSpec,
    lambda: f64,
    input: ArrayView2<f64>,
    weight: f64,
) -> LossValue {
    if lambda == 0.0 || input.nrows() == 0 || nets.optimizer(NetId::UPsi).step == 0 {
        return LossValue::zero();
    }
    let trainee = direction.opposite();
    let id = trainee_policy(direction);
    let net = nets.net(id);
    let tape = net.tape(input);
    let mut u_input = input.to_owned();
    u_input.column_mut(0).mapv_inplace(|t| t / spec.horizon);
    let u = nets.net(NetId::UPsi).forward(u_input.view()) / spec.horizon;
    let sigma = spec.sigma;
    let s = trainee.drift_sign();
    let w = weight * lambda;
    let mut value = 0.0;
    let mut g_out = Array2::zeros(tape.out.raw_dim());
    for r in 0..input.nrows() {
        let x = [input[[r, 1]], input[[r, 2]]];
        let f = spec.base_drift(&x, input[[r, 0]]);
        for c in 0..DIM {
            let resid = s * f[c] + sigma * tape.out[[r, c]] - s * u[[r, c]];
            value += w * resid * resid;
            g_out[[r, c]] = 2.0 * w * resid * sigma;
        }
    }
    let mut grad = MlpParams::zeros(net.shape());
    net.backward(&tape, g_out.view(), &mut grad);
    let mut grads = Grads::new();
    grads.add(id, &grad, 1.0);
    LossValue { value, grads }
}

/// `(t·T, (1−t)X₀ + tX₁)` rows for the given couples and unit-clock times.
pub fn fm_interpolants(pairs: &[(Point, Point)], times: &[f64], horizon: f64) -> Array2<f64> {
    assert_eq!(pairs.len(), times.len(), "one time per couple");
    let mut input = Array2::zeros((pairs.len(), DIM + 1));
    for (r, ((x0, x1), &t)) in pairs.iter().zip(times).enumerate() {
        input[[r, 0]] = t * horizon;
        for c in 0..DIM {
            input[[r, c + 1]] = (1.0 - t) * x0[c] + t * x1[c];
        }
    }
    input
}

/// Full-batch drift-consistency penalty, `λ·mean_i Σ_{k<N} ‖·‖²·δt`.
pub fn fm_policy_loss(batch: &TrajectoryBatch, nets: &NetBundle, spec: &ProblemSpec, lambda: f64) -> LossValue {
    fm_policy_loss_points(batch, nets, spec, lambda, &all_points(batch), full_weight(batch))
}

/// Which `(X₀, X₁)` couples the velocity field is regressed on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FmCoupling {
    /// The batch's exact boundary samples, each paired with an independent
    /// draw from the other marginal, so `u_ψ` carries `ρ₀` to `ρ_target`.
    Marginals,
    /// The batch's own endpoints, i.e. the coupling of the current policy.
    Endpoints,
}

impl fmt::Display for FmCoupling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FmCoupling::Marginals => "marginals",
            FmCoupling::Endpoints => "endpoints",
        })
    }
}

impl FromStr for FmCoupling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "marginals" => Ok(FmCoupling::Marginals),
            "endpoints" => Ok(FmCoupling::Endpoints),
            other => Err(Error::Config(format!("unknown fm coupling `{other}` (marginals or endpoints)"))),
        }
    }
}

/// Where the drift-consistency penalty is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FmPoints {
    /// The on-policy batch states.
    Batch,
    /// Fresh points of the straight-line interpolation between couples,
    /// which also cover the region between the marginals that neither
    /// direction has visited yet.
    Interpolant,
}

impl fmt::Display for FmPoints {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FmPoints::Batch => "batch",
            FmPoints::Interpolant => "interpolant",
        })
    }
}

impl FromStr for FmPoints {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "batch" => Ok(FmPoints::Batch),
            "interpolant" => Ok(FmPoints::Interpolant),
            other => Err(Error::Config(format!("unknown fm points `{other}` (batch or interpolant)"))),
        }
    }
}

/// Couples for the velocity regression, ordered in physical time.
pub fn fm_pairs<R: Rng + ?Sized>(
    batch: &TrajectoryBatch,
    spec: &ProblemSpec,
    coupling: FmCoupling,
    rng: &mut R,
) -> Vec<(Point, Point)> {
    let ends = batch.physical_endpoints();
    match coupling {
        FmCoupling::Endpoints => ends,
        FmCoupling::Marginals => match batch.direction {
            Direction::Forward => ends.into_iter().map(|(x0, _)| (x0, spec.target.sample(rng))).collect(),
            Direction::Backward => ends.into_iter().map(|(_, x1)| (spec.source.sample(rng), x1)).collect(),
        },
    }
}
