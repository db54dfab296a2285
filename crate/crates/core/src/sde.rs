//! Euler–Maruyama rollouts of the forward and backward controlled SDEs.
//!
//! Forward:  `X_{k+1} = X_k + ( f + σ·Z_θ)·δt + σ·δW_k`, `X_0 ~ ρ₀`.
//! Backward: `X_{k+1} = X_k + (−f + σ·Ẑ_φ)·δt + σ·δW_k`, `X_0 ~ ρ_target`.
//!
//! Both run on their own clock `kδt`, but every network is queried in
//! physical time: `t = kδt` going forward and `t = T − kδt` going backward.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{MlpParams, NetBundle, NetId};
use crate::rng::{stream, substream};
use crate::scenario::{Point, ProblemSpec, DIM};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        }
    }

    pub fn opposite(self) -> Direction {
        match self {
            Direction::Forward => Direction::Backward,
            Direction::Backward => Direction::Forward,
        }
    }

    /// Sign in front of the base drift `f`.
    pub fn drift_sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Backward => -1.0,
        }
    }

    /// The policy that generates paths in this direction.
    pub fn policy(self) -> NetId {
        match self {
            Direction::Forward => NetId::ZTheta,
            Direction::Backward => NetId::ZPhi,
        }
    }

    fn noise_stream(self) -> u64 {
        match self {
            Direction::Forward => stream::FORWARD_NOISE,
            Direction::Backward => stream::BACKWARD_NOISE,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(Direction::Forward),
            "backward" => Ok(Direction::Backward),
            other => Err(Error::Config(format!("unknown direction `{other}`"))),
        }
    }
}

/// A drift field queried on a batch of points at one physical time.
pub trait Policy {
    /// `xs` is `n × DIM`; returns `n × DIM`.
    fn eval_batch(&self, t: f64, xs: ArrayView2<f64>) -> Array2<f64>;
}

impl Policy for MlpParams {
    fn eval_batch(&self, t: f64, xs: ArrayView2<f64>) -> Array2<f64> {
        let mut input = Array2::zeros((xs.nrows(), DIM + 1));
        input.column_mut(0).fill(t);
        input.slice_mut(s![.., 1..]).assign(&xs);
        self.forward(input.view())
    }
}

/// Policy given by a closure of `(t, x)`.
pub struct FnPolicy<F>(pub F);

impl<F: Fn(f64, &Point) -> Point> FnPolicy<F> {
    /// Wraps a closure; pins its signature so argument types can be elided.
    pub fn new(f: F) -> Self {
        FnPolicy(f)
    }
}

impl<F: Fn(f64, &Point) -> Point> Policy for FnPolicy<F> {
    fn eval_batch(&self, t: f64, xs: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((xs.nrows(), DIM));
        for (i, row) in xs.rows().into_iter().enumerate() {
            let z = (self.0)(t, &[row[0], row[1]]);
            out[[i, 0]] = z[0];
            out[[i, 1]] = z[1];
        }
        out
    }
}

/// The zero policy (uncontrolled diffusion).
pub struct ZeroPolicy;

impl Policy for ZeroPolicy {
    fn eval_batch(&self, _t: f64, xs: ArrayView2<f64>) -> Array2<f64> {
        Array2::zeros((xs.nrows(), DIM))
    }
}

/// Sampled paths together with the generating policy and noise.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryBatch {
    pub direction: Direction,
    pub dt: f64,
    pub horizon: f64,
    /// Stage index of the policy that produced the batch.
    pub stage: usize,
    /// States, `n × (N+1) × DIM`.
    pub x: Array3<f64>,
    /// Generating policy along the path, `n × (N+1) × DIM`.
    pub z: Array3<f64>,
    /// Brownian increments, `n × N × DIM`, each `~ N(0, δt)`.
    pub dw: Array3<f64>,
}

impl TrajectoryBatch {
    pub fn empty(direction: Direction, spec: &ProblemSpec) -> Self {
        let n = spec.steps();
        TrajectoryBatch {
            direction,
            dt: spec.dt,
            horizon: spec.horizon,
            stage: 0,
            x: Array3::zeros((0, n + 1, DIM)),
            z: Array3::zeros((0, n + 1, DIM)),
            dw: Array3::zeros((0, n, DIM)),
        }
    }

    pub fn len(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of steps `N`.
    pub fn steps(&self) -> usize {
        self.dw.shape()[1]
    }

    pub fn state(&self, sample: usize, step: usize) -> Point {
        [self.x[[sample, step, 0]], self.x[[sample, step, 1]]]
    }

    pub fn policy_at(&self, sample: usize, step: usize) -> Point {
        [self.z[[sample, step, 0]], self.z[[sample, step, 1]]]
    }

    pub fn noise(&self, sample: usize, step: usize) -> Point {
        [self.dw[[sample, step, 0]], self.dw[[sample, step, 1]]]
    }

    /// The batch's own clock `kδt`.
    pub fn clock(&self, step: usize) -> f64 {
        step as f64 * self.dt
    }

    /// Physical time at grid point `step`.
    pub fn physical_time(&self, step: usize) -> f64 {
        match self.direction {
            Direction::Forward => step as f64 * self.dt,
            Direction::Backward => self.horizon - step as f64 * self.dt,
        }
    }

    pub fn initial(&self) -> Vec<Point> {
        (0..self.len()).map(|i| self.state(i, 0)).collect()
    }

    pub fn terminal(&self) -> Vec<Point> {
        let n = self.steps();
        (0..self.len()).map(|i| self.state(i, n)).collect()
    }

    /// Endpoint couples ordered in physical time: `(state at t=0, state at t=T)`.
    pub fn physical_endpoints(&self) -> Vec<(Point, Point)> {
        let n = self.steps();
        (0..self.len())
            .map(|i| match self.direction {
                Direction::Forward => (self.state(i, 0), self.state(i, n)),
                Direction::Backward => (self.state(i, n), self.state(i, 0)),
            })
            .collect()
    }

    /// Sub-batch made of the listed samples (repeats allowed).
    pub fn select(&self, samples: &[usize]) -> TrajectoryBatch {
        TrajectoryBatch {
            direction: self.direction,
            dt: self.dt,
            horizon: self.horizon,
            stage: self.stage,
            x: self.x.select(Axis(0), samples),
            z: self.z.select(Axis(0), samples),
            dw: self.dw.select(Axis(0), samples),
        }
    }

    /// Largest deviation between a stored state and the Euler–Maruyama
    /// update rebuilt from the stored `(X_k, Z_k, δW_k)`.
    pub fn replay_residual(&self, spec: &ProblemSpec) -> f64 {
        let sign = self.direction.drift_sign();
        let mut worst: f64 = 0.0;
        for i in 0..self.len() {
            for k in 0..self.steps() {
                let x = self.state(i, k);
                let f = spec.base_drift(&x, self.physical_time(k));
                for c in 0..DIM {
                    let drift = sign * f[c] + spec.sigma * self.z[[i, k, c]];
                    let next = x[c] + drift * self.dt + spec.sigma * self.dw[[i, k, c]];
                    worst = worst.max((next - self.x[[i, k + 1, c]]).abs());
                }
            }
        }
        worst
    }

    /// Every `(sample, step)` state as a network input row `[t, x]`, in
    /// sample-major order.
    pub fn grid_inputs(&self) -> Array2<f64> {
        let (n, m) = (self.len(), self.steps() + 1);
        let mut input = Array2::zeros((n * m, DIM + 1));
        for i in 0..n {
            for k in 0..m {
                let r = i * m + k;
                input[[r, 0]] = self.physical_time(k);
                input[[r, 1]] = self.x[[i, k, 0]];
                input[[r, 2]] = self.x[[i, k, 1]];
            }
        }
        input
    }

    /// CSV with columns `direction,sample_id,step,t,x1,x2`, where `t` is the
    /// batch clock `kδt`. Values carry 17 significant digits, enough to
    /// reproduce every stored state exactly.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "direction,sample_id,step,t,x1,x2")?;
        for i in 0..self.len() {
            for k in 0..=self.steps() {
                writeln!(
                    w,
                    "{},{},{},{:.16e},{:.16e},{:.16e}",
                    self.direction,
                    i,
                    k,
                    self.clock(k),
                    self.x[[i, k, 0]],
                    self.x[[i, k, 1]]
                )?;
            }
        }
        Ok(())
    }
}

/// States recovered from a trajectory CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvTrajectories {
    pub direction: Direction,
    pub x: Array3<f64>,
}

pub fn read_trajectory_csv(text: &str) -> Result<CsvTrajectories> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "direction,sample_id,step,t,x1,x2" => {}
        _ => {
            return Err(Error::Csv {
                line: 1,
                reason: "missing header".into(),
            })
        }
    }
    let mut rows: Vec<(usize, usize, f64, f64)> = Vec::new();
    let mut direction = None;
    for (ln, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: &str| Error::Csv {
            line: ln + 1,
            reason: reason.to_string(),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad("expected 6 fields"));
        }
        let d: Direction = f[0].parse().map_err(|_| bad("bad direction"))?;
        if *direction.get_or_insert(d) != d {
            return Err(bad("mixed directions"));
        }
        let i: usize = f[1].parse().map_err(|_| bad("bad sample id"))?;
        let k: usize = f[2].parse().map_err(|_| bad("bad step"))?;
        let x1: f64 = f[4].parse().map_err(|_| bad("bad x1"))?;
        let x2: f64 = f[5].parse().map_err(|_| bad("bad x2"))?;
        rows.push((i, k, x1, x2));
    }
    let n = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
    let m = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
    if rows.len() != n * m {
        return Err(Error::Csv {
            line: 0,
            reason: format!("{} rows do not form a {n}×{m} grid", rows.len()),
        });
    }
    let mut x = Array3::zeros((n, m, DIM));
    for (i, k, x1, x2) in rows {
        x[[i, k, 0]] = x1;
        x[[i, k, 1]] = x2;
    }
    Ok(CsvTrajectories {
        direction: direction.unwrap_or(Direction::Forward),
        x,
    })
}

/// Rolls out `n` paths in `direction` under `policy`.
///
/// Sample `i` draws its initial state and all its increments from the
/// stream `(seed, direction base + i)`, so a batch is reproducible from its
/// seed and forward/backward batches never share noise.
pub fn simulate<P: Policy + ?Sized>(
    spec: &ProblemSpec,
    direction: Direction,
    policy: &P,
    n: usize,
    seed: u64,
) -> Result<TrajectoryBatch> {
    let mut rngs: Vec<_> = (0..n as u64).map(|i| substream(seed, direction.noise_stream() + i)).collect();
    let marginal = match direction {
        Direction::Forward => &spec.source,
        Direction::Backward => &spec.target,
    };
    let x0: Vec<Point> = rngs.iter_mut().map(|r| marginal.sample(r)).collect();
    rollout(spec, direction, policy, &x0, &mut rngs)
}

/// Same as [`simulate`] but from given initial states.
pub fn simulate_from<P: Policy + ?Sized>(
    spec: &ProblemSpec,
    direction: Direction,
    policy: &P,
    x0: &[Point],
    seed: u64,
) -> Result<TrajectoryBatch> {
    let mut rngs: Vec<_> = (0..x0.len() as u64)
        .map(|i| substream(seed, direction.noise_stream() + i))
        .collect();
    rollout(spec, direction, policy, x0, &mut rngs)
}

fn rollout<P: Policy + ?Sized, R: Rng>(
    spec: &ProblemSpec,
    direction: Direction,
    policy: &P,
    x0: &[Point],
    rngs: &mut [R],
) -> Result<TrajectoryBatch> {
    let mut batch = TrajectoryBatch::empty(direction, spec);
    let n = x0.len();
    let steps = spec.steps();
    let (dt, sigma) = (spec.dt, spec.sigma);
    let sqrt_dt = dt.sqrt();
    let sign = direction.drift_sign();
    batch.x = Array3::zeros((n, steps + 1, DIM));
    batch.z = Array3::zeros((n, steps + 1, DIM));
    batch.dw = Array3::zeros((n, steps, DIM));
    for (i, p) in x0.iter().enumerate() {
        batch.x[[i, 0, 0]] = p[0];
        batch.x[[i, 0, 1]] = p[1];
    }
    for k in 0..=steps {
        let t = batch.physical_time(k);
        let xs = batch.x.slice(s![.., k, ..]).to_owned();
        let z = policy.eval_batch(t, xs.view());
        batch.z.slice_mut(s![.., k, ..]).assign(&z);
        if k == steps {
            break;
        }
        for i in 0..n {
            let x = [xs[[i, 0]], xs[[i, 1]]];
            let f = spec.base_drift(&x, t);
            for c in 0..DIM {
                let g: f64 = rngs[i].sample(StandardNormal);
                let dw = sqrt_dt * g;
                let drift = sign * f[c] + sigma * z[[i, c]];
                let next = x[c] + drift * dt + sigma * dw;
                if !next.is_finite() {
                    return Err(Error::NonFiniteState {
                        direction,
                        step: k,
                        sample: i,
                    });
                }
                batch.dw[[i, k, c]] = dw;
                batch.x[[i, k + 1, c]] = next;
            }
        }
    }
    Ok(batch)
}

pub fn simulate_forward<P: Policy + ?Sized, R: Rng + ?Sized>(
    spec: &ProblemSpec,
    policy: &P,
    n: usize,
    rng: &mut R,
) -> Result<TrajectoryBatch> {
    simulate(spec, Direction::Forward, policy, n, rng.random())
}

pub fn simulate_backward<P: Policy + ?Sized, R: Rng + ?Sized>(
    spec: &ProblemSpec,
    policy: &P,
    n: usize,
    rng: &mut R,
) -> Result<TrajectoryBatch> {
    simulate(spec, Direction::Backward, policy, n, rng.random())
}

/// Every network field evaluated along a batch, each `n × (N+1)`
/// (vectors `n × (N+1) × DIM`).
#[derive(Clone, Debug)]
pub struct PathFields {
    pub y: Array2<f64>,
    pub y_hat: Array2<f64>,
    pub z: Array3<f64>,
    pub z_hat: Array3<f64>,
    /// `∇·(σẐ − f)`.
    pub div_hat: Array2<f64>,
    /// `∇·(σZ + f)`.
    pub div: Array2<f64>,
    /// `log ρ̂ = Y + Ŷ`.
    pub log_rho: Array2<f64>,
    /// Mean-field cost `F(x, exp(Y + Ŷ))`.
    pub cost: Array2<f64>,
}

pub fn eval_fields_along(batch: &TrajectoryBatch, nets: &NetBundle, spec: &ProblemSpec) -> PathFields {
    let (n, m) = (batch.len(), batch.steps() + 1);
    let input = batch.grid_inputs();
    let grid = |a: Array2<f64>| a.into_shape_with_order((n, m)).expect("grid");
    let vec_grid = |a: Array2<f64>| a.into_shape_with_order((n, m, DIM)).expect("grid");
    let y = nets.net(NetId::YTheta).forward(input.view()).column(0).to_owned();
    let y_hat = nets.net(NetId::YPhi).forward(input.view()).column(0).to_owned();
    let zt = nets.net(NetId::ZTheta).div_tape(input.view());
    let zp = nets.net(NetId::ZPhi).div_tape(input.view());
    let sigma = spec.sigma;
    let mut div = Array2::zeros((n, m));
    let mut div_hat = Array2::zeros((n, m));
    let mut log_rho = Array2::zeros((n, m));
    let mut cost = Array2::zeros((n, m));
    for i in 0..n {
        for k in 0..m {
            let r = i * m + k;
            let x = batch.state(i, k);
            let t = batch.physical_time(k);
            let df = spec.drift_divergence(&x, t);
            div[[i, k]] = sigma * zt.div[r] + df;
            div_hat[[i, k]] = sigma * zp.div[r] - df;
            log_rho[[i, k]] = y[r] + y_hat[r];
            cost[[i, k]] = spec.mf_cost(&x, log_rho[[i, k]]);
        }
    }
    PathFields {
        y: grid(y.insert_axis(Axis(1))),
        y_hat: grid(y_hat.insert_axis(Axis(1))),
        z: vec_grid(zt.tape.out),
        z_hat: vec_grid(zp.tape.out),
        div_hat,
        div,
        log_rho,
        cost,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{spatial_divergence, AdamConfig};
    use crate::scenario::{make_gmm_spec, make_vneck_spec, ObstacleSet};

    fn coord_var(pts: &[Point], c: usize) -> f64 {
        let n = pts.len() as f64;
        let m = pts.iter().map(|p| p[c]).sum::<f64>() / n;
        pts.iter().map(|p| (p[c] - m).powi(2)).sum::<f64>() / (n - 1.0)
    }

    #[test]
    fn brownian_terminal_variance() {
        let spec = make_gmm_spec();
        let x0 = vec![[0.0, 0.0]; 100_000];
        let b = simulate_from(&spec, Direction::Forward, &ZeroPolicy, &x0, 3).unwrap();
        let term = b.terminal();
        for c in 0..DIM {
            let v = coord_var(&term, c);
            assert!((v - 1.0).abs() < 0.02, "coordinate {c}: {v}");
        }
    }

    #[test]
    fn zero_sigma_freezes_paths() {
        let mut spec = make_gmm_spec();
        spec.sigma = 0.0;
        let b = simulate(&spec, Direction::Forward, &FnPolicy::new(|_, _| [5.0, -3.0]), 10, 1).unwrap();
        for i in 0..10 {
            for k in 0..=b.steps() {
                assert_eq!(b.state(i, k), b.state(i, 0));
            }
        }
        let b = simulate(&spec, Direction::Backward, &ZeroPolicy, 10, 1).unwrap();
        for i in 0..10 {
            assert_eq!(b.state(i, b.steps()), b.state(i, 0));
        }
    }

    #[test]
    fn grid_has_101_states() {
        let b = simulate(&make_gmm_spec(), Direction::Forward, &ZeroPolicy, 3, 0).unwrap();
        assert_eq!(b.x.shape(), &[3, 101, 2]);
        assert_eq!(b.dw.shape(), &[3, 100, 2]);
    }

    #[test]
    fn backward_diffusion_keeps_target_mean() {
        let spec = make_vneck_spec();
        let b = simulate(&spec, Direction::Backward, &ZeroPolicy, 100_000, 11).unwrap();
        let term = b.terminal();
        let n = term.len() as f64;
        let mx = term.iter().map(|p| p[0]).sum::<f64>() / n;
        let my = term.iter().map(|p| p[1]).sum::<f64>() / n;
        assert!((mx - 7.0).abs() < 0.05 && my.abs() < 0.05, "{mx} {my}");
    }

    #[test]
    fn forward_and_backward_noise_are_independent() {
        let spec = make_vneck_spec();
        let n = 2000;
        let f = simulate(&spec, Direction::Forward, &ZeroPolicy, n, 42).unwrap();
        let b = simulate(&spec, Direction::Backward, &ZeroPolicy, n, 42).unwrap();
        let a: Vec<f64> = f.dw.iter().copied().collect();
        let c: Vec<f64> = b.dw.iter().copied().collect();
        let corr = correlation(&a, &c);
        let bound = 3.0 / ((n * spec.steps()) as f64).sqrt();
        assert!(corr.abs() < bound, "{corr} vs {bound}");
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn replay_is_exact_and_runs_are_deterministic() {
        let mut rng = substream(2, 0);
        let nets = NetBundle::new(2, 16, AdamConfig::default(), AdamConfig::default(), &mut rng).unwrap();
        let mut spec = make_gmm_spec();
        spec.drift = crate::scenario::BaseDrift::Linear { rate: -0.5 };
        for dir in [Direction::Forward, Direction::Backward] {
            let policy = nets.net(dir.policy());
            let a = simulate(&spec, dir, policy, 16, 9).unwrap();
            let b = simulate(&spec, dir, policy, 16, 9).unwrap();
            assert!(a.replay_residual(&spec) < 1e-12);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn diffusion_convolves_source() {
        // ρ₀ = N(−7, 0.2) convolved with N(0, σ²T) = N(−7, 1.2).
        let spec = make_vneck_spec();
        let b = simulate(&spec, Direction::Forward, &ZeroPolicy, 100_000, 5).unwrap();
        let term = b.terminal();
        for c in 0..DIM {
            let v = coord_var(&term, c);
            assert!((v - 1.2).abs() < 0.03 * 1.2, "{c}: {v}");
        }
    }

    #[test]
    fn non_finite_rollout_reports_position() {
        let spec = make_gmm_spec();
        let err = simulate(&spec, Direction::Forward, &FnPolicy::new(|t, _| if t > 0.05 { [f64::NAN, 0.0] } else { [0.0, 0.0] }), 4, 0)
            .unwrap_err();
        match err {
            Error::NonFiniteState { step, sample, .. } => {
                assert_eq!(step, 6);
                assert_eq!(sample, 0);
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn fields_of_zero_networks() {
        let nets = NetBundle::zeros(2, 8).unwrap();
        let spec = make_gmm_spec();
        let b = simulate(&spec, Direction::Forward, &ZeroPolicy, 8, 0).unwrap();
        let f = eval_fields_along(&b, &nets, &spec);
        assert!(f.y.iter().chain(f.y_hat.iter()).all(|&v| v == 0.0));
        assert!(f.div.iter().chain(f.div_hat.iter()).all(|&v| v == 0.0));
        for i in 0..b.len() {
            for k in 0..=b.steps() {
                let x = b.state(i, k);
                assert_eq!(f.cost[[i, k]], 1500.0 * crate::scenario::obstacle_penalty(&spec.obstacles, &x));
            }
        }
        let mut ent = spec.clone();
        ent.obstacle_weight = 0.0;
        ent.entropy_weight = 1.0;
        let f = eval_fields_along(&b, &nets, &ent);
        assert!(f.cost.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fields_match_pointwise_recomputation() {
        let mut rng = substream(6, 0);
        let nets = NetBundle::new(2, 16, AdamConfig::default(), AdamConfig::default(), &mut rng).unwrap();
        let mut spec = make_vneck_spec();
        spec.entropy_weight = 0.3;
        spec.obstacles = ObstacleSet::VNeck { c_sq: 0.36, alpha: 5.0 };
        let b = simulate(&spec, Direction::Backward, nets.net(NetId::ZPhi), 3, 4).unwrap();
        let f = eval_fields_along(&b, &nets, &spec);
        for i in 0..3 {
            for k in 0..=b.steps() {
                let x = b.state(i, k);
                let t = spec.horizon - k as f64 * spec.dt;
                let dz = spatial_divergence(nets.net(NetId::ZTheta), t, &x);
                let dzh = spatial_divergence(nets.net(NetId::ZPhi), t, &x);
                assert!((f.div[[i, k]] - dz).abs() < 1e-12);
                assert!((f.div_hat[[i, k]] - dzh).abs() < 1e-12);
                let y = nets.net(NetId::YTheta).eval(t, &x)[0];
                let yh = nets.net(NetId::YPhi).eval(t, &x)[0];
                let cost = spec.mf_cost(&x, y + yh);
                assert!((f.cost[[i, k]] - cost).abs() < 1e-12);
                // the stored generating policy is Ẑ_φ itself
                assert!((f.z_hat[[i, k, 0]] - b.z[[i, k, 0]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn csv_round_trip() {
        let spec = make_gmm_spec();
        let b = simulate(&spec, Direction::Backward, &FnPolicy::new(|t, x| [x[1] * t, -x[0]]), 3, 8).unwrap();
        let mut buf = Vec::new();
        b.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("direction,sample_id,step,t,x1,x2\nbackward,0,0,"));
        let back = read_trajectory_csv(&text).unwrap();
        assert_eq!(back.direction, Direction::Backward);
        assert_eq!(back.x, b.x);
    }
}
