//! The alternating training loop.
//!
//! A stage is a forward half followed by a backward half. The forward half
//! simulates fresh paths with `Z_θ`, stores them in the forward replay
//! buffer and then takes `steps_per_stage` optimizer steps on the φ side
//! (`Ẑ_φ`, `Ŷ_φ`); the backward half mirrors this for the θ side. The
//! flow-matching velocity `u_ψ` is refreshed in both halves.
//!
//! Per inner step the trainee sees:
//!
//! * IPF and flow-matching policy terms on `batch_on` random `(path, step)`
//!   points of the fresh batch (an unbiased estimate of the full-batch
//!   time integral),
//! * the TD objective on `batch_off` whole paths replayed from the buffer,
//!   since multi-step targets need every step from the boundary on.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use ndarray::{s, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::losses::{
    fm_interpolants, fm_pairs, fm_policy_loss_inputs, fm_policy_loss_points, FmCoupling, FmPoints, fm_train_step, ipf_loss_points, td_objective, trainee_policy, trainee_value,
    Grads, LossWeights, TdOptions,
};
use crate::metrics::{collision_rate, energy_distance, mode_coverage};
use crate::net::{AdamConfig, MlpParams, NetBundle, NetId};
use crate::rng::{child_seed, stream, substream, StreamRng};
use crate::scenario::{sample_dist, Point, ProblemSpec, ScenarioName, DIM};
use crate::sde::{simulate, Direction, TrajectoryBatch};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Number of forward/backward stage pairs.
    pub stages: usize,
    /// Optimizer steps per half-stage.
    pub steps_per_stage: usize,
    /// Fresh paths simulated at the start of every half-stage.
    pub k: usize,
    /// On-policy `(path, step)` points per inner step.
    pub batch_on: usize,
    /// Replayed whole paths per inner step.
    pub batch_off: usize,
    pub buffer_capacity: usize,
    pub hidden: usize,
    pub lr_policy: f64,
    pub lr_value: f64,
    pub lr_fm: f64,
    /// Per-network gradient norm cap; `0` disables clipping.
    pub grad_clip: f64,
    pub weights: LossWeights,
    pub td: TdOptions,
    pub fm_coupling: FmCoupling,
    pub fm_points: FmPoints,
    /// Paths simulated for the per-stage evaluation.
    pub eval_n: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stages: 20,
            steps_per_stage: 1000,
            k: 250,
            batch_on: 250,
            batch_off: 8,
            buffer_capacity: 10,
            hidden: crate::net::HIDDEN,
            lr_policy: 3e-3,
            lr_value: 1e-3,
            lr_fm: 1e-3,
            grad_clip: 10.0,
            weights: LossWeights::default(),
            td: TdOptions::default(),
            fm_coupling: FmCoupling::Marginals,
            fm_points: FmPoints::Interpolant,
            eval_n: 512,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("stages", self.stages),
            ("k", self.k),
            ("batch_on", self.batch_on),
            ("batch_off", self.batch_off),
            ("buffer_capacity", self.buffer_capacity),
            ("hidden", self.hidden),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.eval_n < 2 {
            return Err(Error::Config("eval_n must be >= 2".into()));
        }
        for (name, v) in [("lr_policy", self.lr_policy), ("lr_value", self.lr_value), ("lr_fm", self.lr_fm)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.grad_clip >= 0.0) {
            return Err(Error::Config("grad_clip must be >= 0".into()));
        }
        self.weights.validate()
    }
}

/// Hex SHA-256 of the problem and training configuration.
pub fn config_hash(spec: &ProblemSpec, cfg: &TrainConfig) -> String {
    let json = serde_json::to_string(&(spec, cfg)).expect("configs serialize");
    let digest = Sha256::digest(json.as_bytes());
    let mut s = String::with_capacity(64);
    for b in digest {
        write!(s, "{b:02x}").unwrap();
    }
    s
}

/// Bounded FIFO of past batches of one direction.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    direction: Direction,
    capacity: usize,
    entries: VecDeque<(u64, TrajectoryBatch)>,
    pushes: u64,
    draws: u64,
}

impl ReplayBuffer {
    pub fn new(direction: Direction, capacity: usize) -> Self {
        ReplayBuffer {
            direction,
            capacity: capacity.max(1),
            entries: VecDeque::new(),
            pushes: 0,
            draws: 0,
        }
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn pushes(&self) -> u64 {
        self.pushes
    }

    pub fn draws(&self) -> u64 {
        self.draws
    }

    /// Version stamps of the stored batches, oldest first.
    pub fn stamps(&self) -> Vec<u64> {
        self.entries.iter().map(|(s, _)| *s).collect()
    }

    /// Stores `batch`, evicting the oldest one when full; returns its stamp.
    pub fn push(&mut self, batch: TrajectoryBatch) -> Result<u64> {
        if batch.direction != self.direction {
            return Err(Error::DirectionMismatch {
                expected: self.direction,
                actual: batch.direction,
            });
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        let stamp = self.pushes;
        self.entries.push_back((stamp, batch));
        self.pushes += 1;
        Ok(stamp)
    }

    /// `count` whole paths drawn uniformly (with replacement) from every
    /// stored path.
    pub fn sample<R: Rng + ?Sized>(&mut self, count: usize, rng: &mut R) -> Result<TrajectoryBatch> {
        let total: usize = self.entries.iter().map(|(_, b)| b.len()).sum();
        if total == 0 {
            return Err(Error::EmptyBuffer(self.direction));
        }
        let newest = &self.entries.back().expect("non-empty").1;
        let (m, n) = (newest.steps() + 1, newest.steps());
        let mut out = TrajectoryBatch {
            direction: self.direction,
            dt: newest.dt,
            horizon: newest.horizon,
            stage: newest.stage,
            x: Array3::zeros((count, m, DIM)),
            z: Array3::zeros((count, m, DIM)),
            dw: Array3::zeros((count, n, DIM)),
        };
        for r in 0..count {
            let mut idx = rng.random_range(0..total);
            let batch = self
                .entries
                .iter()
                .map(|(_, b)| b)
                .find(|b| {
                    if idx < b.len() {
                        true
                    } else {
                        idx -= b.len();
                        false
                    }
                })
                .expect("index within total");
            out.x.slice_mut(s![r, .., ..]).assign(&batch.x.slice(s![idx, .., ..]));
            out.z.slice_mut(s![r, .., ..]).assign(&batch.z.slice(s![idx, .., ..]));
            out.dw.slice_mut(s![r, .., ..]).assign(&batch.dw.slice(s![idx, .., ..]));
        }
        self.draws += 1;
        Ok(out)
    }
}

/// Forward and backward replay buffers.
#[derive(Clone, Debug)]
pub struct Buffers {
    pub forward: ReplayBuffer,
    pub backward: ReplayBuffer,
}

impl Buffers {
    pub fn new(capacity: usize) -> Self {
        Buffers {
            forward: ReplayBuffer::new(Direction::Forward, capacity),
            backward: ReplayBuffer::new(Direction::Backward, capacity),
        }
    }

    pub fn get_mut(&mut self, direction: Direction) -> &mut ReplayBuffer {
        match direction {
            Direction::Forward => &mut self.forward,
            Direction::Backward => &mut self.backward,
        }
    }
}

/// One inner optimizer step, as written to the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub stage: usize,
    pub half: Direction,
    pub step: usize,
    pub ipf: f64,
    pub td: f64,
    pub fm_policy: f64,
    pub fm_velocity: f64,
    pub grad_policy: f64,
    pub grad_value: f64,
    pub grad_fm: f64,
}

/// Mean losses of one half-stage.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HalfSummary {
    pub steps: usize,
    pub ipf: f64,
    pub td: f64,
    pub fm_policy: f64,
    pub fm_velocity: f64,
}

/// Metrics of the current networks on a fixed evaluation draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Per-mode fractions of forward terminal samples (gmm only).
    pub mode_coverage: Option<Vec<f64>>,
    /// Fraction of forward states inside an obstacle.
    pub collision_rate: f64,
    /// Fraction of backward states inside an obstacle.
    pub backward_collision_rate: f64,
    /// Forward terminal samples against `ρ_target`.
    pub energy_distance: f64,
    /// Backward terminal samples against `ρ₀`.
    pub backward_energy_distance: f64,
    pub terminal_mean: Point,
    pub terminal_var: Point,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    pub forward_half: Option<HalfSummary>,
    pub backward_half: Option<HalfSummary>,
    pub eval: Evaluation,
    /// Excluded from the metrics log so that logs stay reproducible.
    pub wall_clock_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub config_hash: String,
    pub scenario: ScenarioName,
    /// Optimizer steps taken by the φ side and the θ side.
    pub steps_per_side: [usize; 2],
    pub stages: Vec<StageRecord>,
}

/// Simulates both directions with the current policies and scores them.
/// Uses noise derived from `seed` only, so successive stages are compared on
/// the same draw.
pub fn evaluate(spec: &ProblemSpec, nets: &NetBundle, n: usize, seed: u64) -> Result<(Evaluation, TrajectoryBatch, TrajectoryBatch)> {
    let fwd = simulate(spec, Direction::Forward, nets.net(NetId::ZTheta), n, seed)?;
    let bwd = simulate(spec, Direction::Backward, nets.net(NetId::ZPhi), n, seed)?;
    let mut rng = substream(seed, stream::EVAL);
    let target_ref = sample_dist(&spec.target, n, &mut rng);
    let source_ref = sample_dist(&spec.source, n, &mut rng);
    let term = fwd.terminal();
    let (mean, var) = moments(&term);
    let eval = Evaluation {
        mode_coverage: match spec.name {
            ScenarioName::Gmm => Some(mode_coverage(&term, spec)?),
            _ => None,
        },
        collision_rate: collision_rate(&fwd, spec),
        backward_collision_rate: collision_rate(&bwd, spec),
        energy_distance: energy_distance(&term, &target_ref),
        backward_energy_distance: energy_distance(&bwd.terminal(), &source_ref),
        terminal_mean: mean,
        terminal_var: var,
    };
    Ok((eval, fwd, bwd))
}

/// Per-coordinate sample mean and unbiased variance.
pub fn moments(xs: &[Point]) -> (Point, Point) {
    let n = xs.len() as f64;
    let mut mean = [0.0; DIM];
    for x in xs {
        for c in 0..DIM {
            mean[c] += x[c] / n;
        }
    }
    let mut var = [0.0; DIM];
    for x in xs {
        for c in 0..DIM {
            var[c] += (x[c] - mean[c]).powi(2) / (n - 1.0).max(1.0);
        }
    }
    (mean, var)
}

/// Where a run writes its artifacts. Everything is optional.
#[derive(Default)]
pub struct TrainIo<'a> {
    /// Directory for `stage_<k>.ckpt` files.
    pub checkpoint_dir: Option<&'a Path>,
    /// Newline-delimited JSON, one record per inner step and per evaluation.
    pub log: Option<&'a mut dyn Write>,
    /// Called after every stage's evaluation.
    pub on_stage: Option<&'a mut dyn FnMut(&StageRecord)>,
}

/// Initial networks for `cfg`. Read-out layers start at zero, so the first
/// forward half simulates the uncontrolled reference diffusion. Input
/// weights on the spatial coordinates are divided by the scenario's
/// [`ProblemSpec::length_scale`], which keeps the hidden units' kinks spread
/// over the whole domain instead of piled up at the origin.
pub fn init_nets(spec: &ProblemSpec, cfg: &TrainConfig) -> Result<NetBundle> {
    let policy = AdamConfig { lr: cfg.lr_policy, ..AdamConfig::default() };
    let fm = AdamConfig { lr: cfg.lr_fm, ..AdamConfig::default() };
    let mut rng = substream(cfg.seed, stream::INIT);
    let mut nets = NetBundle::new(DIM, cfg.hidden, policy, fm, &mut rng)?;
    let scale = spec.length_scale();
    for id in NetId::ALL {
        let l = nets.net_mut(id).layers_mut();
        let (mut w1, mut w3, mut b3) = (l.w1, l.w3, l.b3);
        w1.slice_mut(s![.., 1..]).mapv_inplace(|v| v / scale);
        w3.fill(0.0);
        b3.fill(0.0);
    }
    nets.set_learning_rate(NetId::YTheta, cfg.lr_value);
    nets.set_learning_rate(NetId::YPhi, cfg.lr_value);
    Ok(nets)
}

fn clip(g: &mut MlpParams, max_norm: f64) -> f64 {
    let norm = g.norm();
    if max_norm > 0.0 && norm > max_norm {
        g.scale(max_norm / norm);
    }
    norm
}

fn log_line<T: Serialize>(log: &mut Option<&mut dyn Write>, record: &T) -> Result<()> {
    if let Some(w) = log.as_deref_mut() {
        let line = serde_json::to_string(record).expect("records serialize");
        writeln!(w, "{line}").map_err(|e| Error::io("metrics log", e))?;
    }
    Ok(())
}

/// One half-stage: simulate with the generating policy of `direction`,
/// store the batch, then train the opposite side for `steps_per_stage`
/// steps.
#[allow(clippy::too_many_arguments)]
pub fn run_stage(
    direction: Direction,
    stage: usize,
    nets: &mut NetBundle,
    buffers: &mut Buffers,
    spec: &ProblemSpec,
    cfg: &TrainConfig,
    rng: &mut StreamRng,
    log: &mut Option<&mut dyn Write>,
) -> Result<HalfSummary> {
    let mut fresh = simulate(spec, direction, nets.net(direction.policy()), cfg.k, child_seed(rng))?;
    fresh.stage = stage;
    let endpoints = fm_pairs(&fresh, spec, cfg.fm_coupling, rng);
    let steps = fresh.steps();
    let buffer = buffers.get_mut(direction);
    buffer.push(fresh.clone())?;

    let w = cfg.weights;
    let pol = trainee_policy(direction);
    let val = trainee_value(direction);
    let point_weight = spec.horizon / cfg.batch_on as f64;
    let mut summary = HalfSummary::default();
    for step in 0..cfg.steps_per_stage {
        let mut fm_velocity = 0.0;
        let mut grad_fm = 0.0;
        if w.w_fm > 0.0 {
            let pairs: Vec<(Point, Point)> =
                (0..cfg.batch_on).map(|_| endpoints[rng.random_range(0..endpoints.len())]).collect();
            let (loss, mut g) = fm_train_step(&pairs, nets.net(NetId::UPsi), rng);
            fm_velocity = loss;
            grad_fm = clip(&mut g, cfg.grad_clip);
            if !loss.is_finite() {
                return Err(non_finite(stage, direction, step, "fm_velocity", loss));
            }
            nets.apply(NetId::UPsi, &g);
        }

        let points: Vec<(usize, usize)> = (0..cfg.batch_on)
            .map(|_| (rng.random_range(0..fresh.len()), rng.random_range(0..steps)))
            .collect();
        let mut grads = Grads::new();
        let mut ipf = 0.0;
        if w.w_ipf > 0.0 {
            let l = ipf_loss_points(&fresh, nets, spec, &points, point_weight);
            ipf = l.value;
            grads.merge(&l.grads, w.w_ipf);
        }
        let mut fm_policy = 0.0;
        if w.w_fm > 0.0 {
            let l = match cfg.fm_points {
                FmPoints::Batch => fm_policy_loss_points(&fresh, nets, spec, w.w_fm, &points, point_weight),
                FmPoints::Interpolant => {
                    let pairs: Vec<(Point, Point)> =
                        (0..cfg.batch_on).map(|_| endpoints[rng.random_range(0..endpoints.len())]).collect();
                    let times: Vec<f64> = pairs.iter().map(|_| rng.random::<f64>()).collect();
                    let input = fm_interpolants(&pairs, &times, spec.horizon);
                    fm_policy_loss_inputs(direction, nets, spec, w.w_fm, input.view(), point_weight)
                }
            };
            fm_policy = l.value;
            grads.merge(&l.grads, 1.0);
        }
        let mut td = 0.0;
        if w.w_td > 0.0 {
            let off = buffers.get_mut(direction).sample(cfg.batch_off, rng)?;
            let (l, _) = td_objective(&off, nets, spec, &cfg.td);
            td = l.value;
            grads.merge(&l.grads, w.w_td);
        }
        for (name, v) in [("ipf", ipf), ("td", td), ("fm_policy", fm_policy)] {
            if !v.is_finite() {
                return Err(non_finite(stage, direction, step, name, v));
            }
        }

        let mut norms = [0.0; 2];
        for (slot, id) in [pol, val].into_iter().enumerate() {
            if let Some(mut g) = grads.take(id) {
                norms[slot] = clip(&mut g, cfg.grad_clip);
                if !g.is_finite() {
                    return Err(non_finite(stage, direction, step, id.name(), f64::NAN));
                }
                nets.apply(id, &g);
            }
        }
        summary.steps += 1;
        summary.ipf += ipf;
        summary.td += td;
        summary.fm_policy += fm_policy;
        summary.fm_velocity += fm_velocity;
        log_line(
            log,
            &StepRecord {
                stage,
                half: direction,
                step,
                ipf,
                td,
                fm_policy,
                fm_velocity,
                grad_policy: norms[0],
                grad_value: norms[1],
                grad_fm,
            },
        )?;
    }
    if summary.steps > 0 {
        let n = summary.steps as f64;
        summary.ipf /= n;
        summary.td /= n;
        summary.fm_policy /= n;
        summary.fm_velocity /= n;
    }
    Ok(summary)
}

fn non_finite(stage: usize, half: Direction, step: usize, name: &str, value: f64) -> Error {
    Error::NonFiniteLoss {
        stage,
        half,
        step,
        components: format!("{name} = {value}"),
    }
}

#[derive(Serialize)]
struct EvalLine<'a> {
    stage: usize,
    eval: &'a Evaluation,
}

/// Result of [`train`].
pub struct TrainOutcome {
    pub nets: NetBundle,
    pub report: RunReport,
}

/// Runs `cfg.stages` forward/backward stage pairs from fresh networks.
/// Stage 0 is the evaluation of the untrained networks.
pub fn train(spec: &ProblemSpec, cfg: &TrainConfig, io: TrainIo<'_>) -> Result<TrainOutcome> {
    let nets = init_nets(spec, cfg)?;
    train_from(spec, cfg, nets, io)
}

/// [`train`] starting from given networks.
pub fn train_from(spec: &ProblemSpec, cfg: &TrainConfig, mut nets: NetBundle, io: TrainIo<'_>) -> Result<TrainOutcome> {
    spec.validate()?;
    cfg.validate()?;
    let TrainIo {
        checkpoint_dir,
        mut log,
        mut on_stage,
    } = io;
    let hash = config_hash(spec, cfg);
    let mut meta = BTreeMap::new();
    meta.insert("scenario".to_string(), spec.name.to_string());
    meta.insert("seed".to_string(), cfg.seed.to_string());
    meta.insert("config_hash".to_string(), hash.clone());
    nets.meta.extend(meta);

    let eval_seed = substream(cfg.seed, stream::EVAL).random::<u64>();
    let mut report = RunReport {
        seed: cfg.seed,
        config_hash: hash,
        scenario: spec.name,
        steps_per_side: [0, 0],
        stages: Vec::with_capacity(cfg.stages + 1),
    };
    let mut buffers = Buffers::new(cfg.buffer_capacity);
    let mut finish_stage = |stage: usize,
                            nets: &mut NetBundle,
                            halves: (Option<HalfSummary>, Option<HalfSummary>),
                            started: Instant,
                            log: &mut Option<&mut dyn Write>,
                            report: &mut RunReport|
     -> Result<()> {
        let (eval, _, _) = evaluate(spec, nets, cfg.eval_n, eval_seed)?;
        log_line(log, &EvalLine { stage, eval: &eval })?;
        nets.meta.insert("stage".into(), stage.to_string());
        if let Some(dir) = checkpoint_dir {
            nets.save(&dir.join(format!("stage_{stage}.ckpt")))?;
        }
        let record = StageRecord {
            stage,
            forward_half: halves.0,
            backward_half: halves.1,
            eval,
            wall_clock_s: started.elapsed().as_secs_f64(),
        };
        if let Some(cb) = on_stage.as_deref_mut() {
            cb(&record);
        }
        report.stages.push(record);
        Ok(())
    };

    finish_stage(0, &mut nets, (None, None), Instant::now(), &mut log, &mut report)?;
    for stage in 1..=cfg.stages {
        let started = Instant::now();
        let mut halves = (None, None);
        for (h, direction) in [Direction::Forward, Direction::Backward].into_iter().enumerate() {
            let mut rng = substream(cfg.seed, stream::TRAINER + 2 * stage as u64 + h as u64);
            let summary = run_stage(direction, stage, &mut nets, &mut buffers, spec, cfg, &mut rng, &mut log)?;
            report.steps_per_side[h] += summary.steps;
            if h == 0 {
                halves.0 = Some(summary);
            } else {
                halves.1 = Some(summary);
            }
        }
        finish_stage(stage, &mut nets, halves, started, &mut log, &mut report)?;
    }
    Ok(TrainOutcome { nets, report })
}
