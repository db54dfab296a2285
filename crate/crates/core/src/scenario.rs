//! Problem definitions: marginals, obstacle geometry, base drift and the
//! mean-field state cost.
//!
//! Two built-in crowd-navigation problems are provided ([`make_gmm_spec`] and
//! [`make_vneck_spec`]); anything else is assembled from the same parts,
//! usually through the `key = value` config file understood by the CLI.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// State-space dimension. Both scenarios, the plots and the V-neck geometry
/// are planar, so this is fixed at compile time.
pub const DIM: usize = 2;

pub type Point = [f64; DIM];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioName {
    Gmm,
    Vneck,
    Custom,
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScenarioName::Gmm => "gmm",
            ScenarioName::Vneck => "vneck",
            ScenarioName::Custom => "custom",
        })
    }
}

impl FromStr for ScenarioName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gmm" => Ok(ScenarioName::Gmm),
            "vneck" | "v-neck" => Ok(ScenarioName::Vneck),
            "custom" => Ok(ScenarioName::Custom),
            other => Err(Error::Config(format!(
                "unknown scenario `{other}` (expected gmm, vneck or custom)"
            ))),
        }
    }
}

/// One isotropic Gaussian component of a mixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Point,
    pub cov_scale: f64,
}

/// A marginal distribution: an isotropic Gaussian `N(mean, cov_scale * I)`
/// or a finite mixture of them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DistributionSpec {
    Gaussian { mean: Point, cov_scale: f64 },
    Mixture { components: Vec<MixtureComponent> },
}

impl DistributionSpec {
    pub fn gaussian(mean: Point, cov_scale: f64) -> Self {
        DistributionSpec::Gaussian { mean, cov_scale }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DistributionSpec::Gaussian { mean, cov_scale } => {
                check_point(mean)?;
                if !(*cov_scale > 0.0 && cov_scale.is_finite()) {
                    return Err(Error::Config(format!("cov_scale must be > 0, got {cov_scale}")));
                }
            }
            DistributionSpec::Mixture { components } => {
                if components.is_empty() {
                    return Err(Error::Config("mixture without components".into()));
                }
                let mut total = 0.0;
                for c in components {
                    if !(c.weight > 0.0 && c.weight.is_finite()) {
                        return Err(Error::Config(format!(
                            "mixture weight must be > 0, got {}",
                            c.weight
                        )));
                    }
                    DistributionSpec::gaussian(c.mean, c.cov_scale).validate()?;
                    total += c.weight;
                }
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::Config(format!(
                        "mixture weights sum to {total}, expected 1"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        match self {
            DistributionSpec::Gaussian { mean, cov_scale } => gaussian_draw(mean, *cov_scale, rng),
            DistributionSpec::Mixture { components } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                // Falls through to the last component when rounding leaves
                // the cumulative weight a hair under one.
                let mut chosen = components.last().expect("validated mixture");
                for c in components {
                    acc += c.weight;
                    if u < acc {
                        chosen = c;
                        break;
                    }
                }
                gaussian_draw(&chosen.mean, chosen.cov_scale, rng)
            }
        }
    }

    pub fn log_density(&self, x: &Point) -> f64 {
        match self {
            DistributionSpec::Gaussian { mean, cov_scale } => gaussian_log_density(mean, *cov_scale, x),
            DistributionSpec::Mixture { components } => {
                let terms: Vec<f64> = components
                    .iter()
                    .map(|c| c.weight.ln() + gaussian_log_density(&c.mean, c.cov_scale, x))
                    .collect();
                log_sum_exp(&terms)
            }
        }
    }

    pub fn mean(&self) -> Point {
        match self {
            DistributionSpec::Gaussian { mean, .. } => *mean,
            DistributionSpec::Mixture { components } => {
                let mut m = [0.0; DIM];
                for c in components {
                    for (acc, v) in m.iter_mut().zip(c.mean) {
                        *acc += c.weight * v;
                    }
                }
                m
            }
        }
    }

    /// `E‖X‖²`.
    pub fn second_moment(&self) -> f64 {
        match self {
            DistributionSpec::Gaussian { mean, cov_scale } => norm_sq(mean) + DIM as f64 * cov_scale,
            DistributionSpec::Mixture { components } => components
                .iter()
                .map(|c| c.weight * (norm_sq(&c.mean) + DIM as f64 * c.cov_scale))
                .sum(),
        }
    }

    /// Per-coordinate variance, averaged over coordinates.
    pub fn mean_variance(&self) -> f64 {
        (self.second_moment() - norm_sq(&self.mean())) / DIM as f64
    }

    /// Axis-aligned box holding the bulk of the mass (`±k` standard
    /// deviations around every component).
    pub fn bounds(&self, k: f64) -> (Point, Point) {
        let comps: Vec<(Point, f64)> = match self {
            DistributionSpec::Gaussian { mean, cov_scale } => vec![(*mean, *cov_scale)],
            DistributionSpec::Mixture { components } => {
                components.iter().map(|c| (c.mean, c.cov_scale)).collect()
            }
        };
        let mut lo = [f64::INFINITY; DIM];
        let mut hi = [f64::NEG_INFINITY; DIM];
        for (m, c) in comps {
            let r = k * c.sqrt();
            for i in 0..DIM {
                lo[i] = lo[i].min(m[i] - r);
                hi[i] = hi[i].max(m[i] + r);
            }
        }
        (lo, hi)
    }
}

fn check_point(p: &Point) -> Result<()> {
    if p.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Config(format!("non-finite coordinate in {p:?}")))
    }
}

fn gaussian_draw<R: Rng + ?Sized>(mean: &Point, cov_scale: f64, rng: &mut R) -> Point {
    let s = cov_scale.sqrt();
    let mut x = *mean;
    for v in x.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v += s * z;
    }
    x
}

fn gaussian_log_density(mean: &Point, cov_scale: f64, x: &Point) -> f64 {
    let d2: f64 = x.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
    -0.5 * DIM as f64 * (2.0 * PI * cov_scale).ln() - 0.5 * d2 / cov_scale
}

pub(crate) fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

pub(crate) fn norm_sq(p: &Point) -> f64 {
    p.iter().map(|v| v * v).sum()
}

/// `n` i.i.d. draws from `dist`.
pub fn sample_dist<R: Rng + ?Sized>(dist: &DistributionSpec, n: usize, rng: &mut R) -> Vec<Point> {
    (0..n).map(|_| dist.sample(rng)).collect()
}

pub fn log_density(dist: &DistributionSpec, x: &Point) -> f64 {
    dist.log_density(x)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub center: Point,
    pub radius: f64,
}

/// Blocked regions of the plane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ObstacleSet {
    /// Open discs; an empty list means free space everywhere.
    Circles(Vec<Circle>),
    /// The funnel `x₂² ≤ α·x₁² + c²` is free; everything outside is blocked.
    VNeck { c_sq: f64, alpha: f64 },
}

impl ObstacleSet {
    pub fn none() -> Self {
        ObstacleSet::Circles(Vec::new())
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ObstacleSet::Circles(circles) => {
                for c in circles {
                    check_point(&c.center)?;
                    if !(c.radius > 0.0) {
                        return Err(Error::Config(format!("circle radius must be > 0, got {}", c.radius)));
                    }
                }
            }
            ObstacleSet::VNeck { c_sq, alpha } => {
                if !(*c_sq > 0.0 && *alpha > 0.0) {
                    return Err(Error::Config(format!(
                        "vneck needs c_sq > 0 and alpha > 0, got {c_sq}, {alpha}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// How far `x` reaches into the blocked region; positive exactly when
    /// `x` is blocked. For circles this is the depth below the nearest rim,
    /// for the V-neck the vertical distance past the funnel wall.
    pub fn penetration(&self, x: &Point) -> f64 {
        match self {
            ObstacleSet::Circles(circles) => circles
                .iter()
                .map(|c| {
                    let d = ((x[0] - c.center[0]).powi(2) + (x[1] - c.center[1]).powi(2)).sqrt();
                    c.radius - d
                })
                .fold(f64::NEG_INFINITY, f64::max),
            ObstacleSet::VNeck { c_sq, alpha } => x[1].abs() - (alpha * x[0] * x[0] + c_sq).sqrt(),
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, ObstacleSet::Circles(c) if c.is_empty())
    }
}

/// Indicator of the blocked region.
pub fn obstacle_penalty(obs: &ObstacleSet, x: &Point) -> f64 {
    let blocked = match obs {
        ObstacleSet::Circles(circles) => circles.iter().any(|c| {
            (x[0] - c.center[0]).powi(2) + (x[1] - c.center[1]).powi(2) < c.radius * c.radius
        }),
        ObstacleSet::VNeck { c_sq, alpha } => x[1] * x[1] > alpha * x[0] * x[0] + c_sq,
    };
    if blocked {
        1.0
    } else {
        0.0
    }
}

pub fn in_blocked_region(obs: &ObstacleSet, x: &Point) -> bool {
    obstacle_penalty(obs, x) > 0.0
}

/// Shape of the obstacle term inside the state cost.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyShape {
    /// 1 inside the blocked region, 0 outside.
    Indicator,
    /// Squared penetration depth, zero outside.
    Hinge,
}

impl FromStr for PenaltyShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "indicator" => Ok(PenaltyShape::Indicator),
            "hinge" => Ok(PenaltyShape::Hinge),
            other => Err(Error::Config(format!("unknown penalty shape `{other}`"))),
        }
    }
}

/// Uncontrolled drift `f`. Only the zero drift is used by the built-in
/// problems; the linear form `f(x) = rate·x` exists for custom problems.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum BaseDrift {
    Zero,
    Linear { rate: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub name: ScenarioName,
    pub sigma: f64,
    pub horizon: f64,
    pub dt: f64,
    pub source: DistributionSpec,
    pub target: DistributionSpec,
    pub obstacles: ObstacleSet,
    pub entropy_weight: f64,
    pub obstacle_weight: f64,
    pub penalty: PenaltyShape,
    pub drift: BaseDrift,
}

pub const DEFAULT_OBSTACLE_WEIGHT: f64 = 1500.0;

impl ProblemSpec {
    pub fn by_name(name: ScenarioName) -> Result<Self> {
        match name {
            ScenarioName::Gmm => Ok(make_gmm_spec()),
            ScenarioName::Vneck => Ok(make_vneck_spec()),
            ScenarioName::Custom => Err(Error::Config(
                "custom scenarios must be described in a config file".into(),
            )),
        }
    }

    pub fn dim(&self) -> usize {
        DIM
    }

    /// Number of Euler–Maruyama steps `T/δt`.
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if !(self.horizon > 0.0 && self.dt > 0.0) {
            return Err(Error::Config("horizon and dt must be positive".into()));
        }
        let n = (self.horizon / self.dt).round();
        if n < 1.0 || (n * self.dt - self.horizon).abs() > 1e-9 * self.horizon {
            return Err(Error::Config(format!(
                "horizon {} is not a whole number of steps of {}",
                self.horizon, self.dt
            )));
        }
        if !(self.entropy_weight >= 0.0 && self.obstacle_weight >= 0.0) {
            return Err(Error::Config("cost weights must be >= 0".into()));
        }
        self.source.validate()?;
        self.target.validate()?;
        self.obstacles.validate()
    }

    /// Time of grid point `k`.
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn base_drift(&self, x: &Point, _t: f64) -> Point {
        match self.drift {
            BaseDrift::Zero => [0.0; DIM],
            BaseDrift::Linear { rate } => [rate * x[0], rate * x[1]],
        }
    }

    /// `∇·f` at `(x, t)`.
    pub fn drift_divergence(&self, _x: &Point, _t: f64) -> f64 {
        match self.drift {
            BaseDrift::Zero => 0.0,
            BaseDrift::Linear { rate } => rate * DIM as f64,
        }
    }

    pub fn obstacle_cost(&self, x: &Point) -> f64 {
        match self.penalty {
            PenaltyShape::Indicator => obstacle_penalty(&self.obstacles, x),
            PenaltyShape::Hinge => self.obstacles.penetration(x).max(0.0).powi(2),
        }
    }

    /// Mean-field state cost `F(x, ρ) = λ_obs·penalty(x) + λ_ent·log ρ`.
    pub fn mf_cost(&self, x: &Point, log_rho: f64) -> f64 {
        let mut cost = 0.0;
        if self.obstacle_weight != 0.0 {
            cost += self.obstacle_weight * self.obstacle_cost(x);
        }
        if self.entropy_weight != 0.0 {
            cost += self.entropy_weight * log_rho;
        }
        cost
    }

    /// Whether `F` depends on the density estimate at all.
    pub fn needs_density(&self) -> bool {
        self.entropy_weight != 0.0
    }

    /// Bounding box for plots: both marginals at ±3 std plus obstacles.
    pub fn plot_bounds(&self) -> (Point, Point) {
        let (mut lo, mut hi) = self.source.bounds(3.0);
        let (tlo, thi) = self.target.bounds(3.0);
        for i in 0..DIM {
            lo[i] = lo[i].min(tlo[i]);
            hi[i] = hi[i].max(thi[i]);
        }
        if let ObstacleSet::Circles(circles) = &self.obstacles {
            for c in circles {
                for i in 0..DIM {
                    lo[i] = lo[i].min(c.center[i] - c.radius);
                    hi[i] = hi[i].max(c.center[i] + c.radius);
                }
            }
        }
        (lo, hi)
    }

    /// Largest coordinate magnitude of [`plot_bounds`](Self::plot_bounds), at
    /// least 1.
    pub fn length_scale(&self) -> f64 {
        let (lo, hi) = self.plot_bounds();
        lo.iter().chain(&hi).fold(1.0f64, |m, v| m.max(v.abs()))
    }
}

/// Number of components in the ring target of the gmm problem.
pub const GMM_MODES: usize = 8;
pub const GMM_RADIUS: f64 = 16.0;

/// Ring means `r·[cos(2πi/8), sin(2πi/8)]` for `i = 1..=8`.
pub fn gmm_means() -> Vec<Point> {
    (1..=GMM_MODES)
        .map(|i| {
            let theta = 2.0 * PI * i as f64 / GMM_MODES as f64;
            [GMM_RADIUS * theta.cos(), GMM_RADIUS * theta.sin()]
        })
        .collect()
}

/// Standard Gaussian to an eight-mode ring of radius 16, around three discs.
pub fn make_gmm_spec() -> ProblemSpec {
    let components = gmm_means()
        .into_iter()
        .map(|mean| MixtureComponent {
            weight: 1.0 / GMM_MODES as f64,
            mean,
            cov_scale: 1.0,
        })
        .collect();
    let circles = [[6.0, 6.0], [6.0, -6.0], [-6.0, -6.0]]
        .into_iter()
        .map(|center| Circle { center, radius: 1.5 })
        .collect();
    ProblemSpec {
        name: ScenarioName::Gmm,
        sigma: 1.0,
        horizon: 1.0,
        dt: 0.01,
        source: DistributionSpec::gaussian([0.0, 0.0], 1.0),
        target: DistributionSpec::Mixture { components },
        obstacles: ObstacleSet::Circles(circles),
        entropy_weight: 0.0,
        obstacle_weight: DEFAULT_OBSTACLE_WEIGHT,
        penalty: PenaltyShape::Indicator,
        drift: BaseDrift::Zero,
    }
}

/// Concentrated Gaussian at (−7, 0) to one at (7, 0) through a funnel.
pub fn make_vneck_spec() -> ProblemSpec {
    ProblemSpec {
        name: ScenarioName::Vneck,
        sigma: 1.0,
        horizon: 1.0,
        dt: 0.01,
        source: DistributionSpec::gaussian([-7.0, 0.0], 0.2),
        target: DistributionSpec::gaussian([7.0, 0.0], 0.2),
        obstacles: ObstacleSet::VNeck { c_sq: 0.36, alpha: 5.0 },
        entropy_weight: 0.0,
        obstacle_weight: DEFAULT_OBSTACLE_WEIGHT,
        penalty: PenaltyShape::Indicator,
        drift: BaseDrift::Zero,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gmm_layout() {
        let spec = make_gmm_spec();
        spec.validate().unwrap();
        let DistributionSpec::Mixture { components } = &spec.target else {
            panic!("gmm target must be a mixture")
        };
        assert_eq!(components.len(), 8);
        assert_abs_diff_eq!(components[7].mean[0], 16.0, epsilon = 1e-12);
        assert_abs_diff_eq!(components[7].mean[1], 0.0, epsilon = 1e-12);
        let ObstacleSet::Circles(circles) = &spec.obstacles else {
            panic!("gmm obstacles must be circles")
        };
        assert_eq!(circles.len(), 3);
        assert!(circles.iter().all(|c| c.radius == 1.5));
        assert_eq!(spec.steps(), 100);
    }

    #[test]
    fn vneck_layout() {
        let spec = make_vneck_spec();
        spec.validate().unwrap();
        assert_eq!(spec.source.mean(), [-7.0, 0.0]);
        assert_eq!(spec.obstacles, ObstacleSet::VNeck { c_sq: 0.36, alpha: 5.0 });
        assert!(matches!(spec.target, DistributionSpec::Gaussian { cov_scale, .. } if cov_scale == 0.2));
    }

    #[test]
    fn sample_moments() {
        let mut rng = substream(1, 0);
        let pts = sample_dist(&DistributionSpec::gaussian([0.0, 0.0], 1.0), 100_000, &mut rng);
        let m = mean_of(&pts);
        assert!(m[0].abs() < 0.02 && m[1].abs() < 0.02, "{m:?}");

        let gmm = make_gmm_spec().target;
        let pts = sample_dist(&gmm, 100_000, &mut rng);
        let m = mean_of(&pts);
        assert!(m[0].abs() < 0.2 && m[1].abs() < 0.2, "{m:?}");
        let sq = pts.iter().map(norm_sq).sum::<f64>() / pts.len() as f64;
        assert!((sq - 258.0).abs() < 0.01 * 258.0, "{sq}");
        assert_abs_diff_eq!(gmm.second_moment(), 258.0, epsilon = 1e-9);
    }

    fn mean_of(pts: &[Point]) -> Point {
        let n = pts.len() as f64;
        let mut m = [0.0; DIM];
        for p in pts {
            m[0] += p[0] / n;
            m[1] += p[1] / n;
        }
        m
    }

    #[test]
    fn log_density_values() {
        let std = DistributionSpec::gaussian([0.0, 0.0], 1.0);
        assert_abs_diff_eq!(std.log_density(&[0.0, 0.0]), -(2.0 * PI).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(std.log_density(&[0.0, 0.0]), -1.837877, epsilon = 1e-6);
        let narrow = DistributionSpec::gaussian([-7.0, 0.0], 0.2);
        // -log(2π·0.2) = -0.2284392
        assert_abs_diff_eq!(narrow.log_density(&[-7.0, 0.0]), -(2.0 * PI * 0.2).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(narrow.log_density(&[-7.0, 0.0]), -0.228439, epsilon = 1e-6);

        // Direct summation over the eight components.
        let gmm = make_gmm_spec().target;
        let x = [16.0, 0.0];
        let direct: f64 = gmm_means()
            .iter()
            .map(|m| {
                let d2 = (x[0] - m[0]).powi(2) + (x[1] - m[1]).powi(2);
                0.125 * (-0.5 * d2).exp() / (2.0 * PI)
            })
            .sum();
        assert_abs_diff_eq!(gmm.log_density(&x), direct.ln(), epsilon = 1e-6);
    }

    #[test]
    fn mixture_log_density_far_from_all_modes_is_finite() {
        let gmm = make_gmm_spec().target;
        let v = gmm.log_density(&[400.0, -300.0]);
        assert!(v.is_finite() && v < -1e4);
    }

    #[test]
    fn densities_integrate_to_one() {
        let dists = [
            DistributionSpec::gaussian([0.0, 0.0], 1.0),
            DistributionSpec::gaussian([-7.0, 0.0], 0.2),
            make_gmm_spec().target,
        ];
        for d in &dists {
            let (lo, hi) = d.bounds(6.0);
            let mass = trapezoid_2d(|x| d.log_density(&x).exp(), lo, hi, 600);
            assert!((mass - 1.0).abs() < 0.01, "{d:?}: {mass}");
        }
    }

    fn trapezoid_2d(f: impl Fn(Point) -> f64, lo: Point, hi: Point, n: usize) -> f64 {
        let hx = (hi[0] - lo[0]) / n as f64;
        let hy = (hi[1] - lo[1]) / n as f64;
        let mut total = 0.0;
        for i in 0..=n {
            let wx = if i == 0 || i == n { 0.5 } else { 1.0 };
            for j in 0..=n {
                let wy = if j == 0 || j == n { 0.5 } else { 1.0 };
                total += wx * wy * f([lo[0] + i as f64 * hx, lo[1] + j as f64 * hy]);
            }
        }
        total * hx * hy
    }

    #[test]
    fn base_drift_is_zero_for_builtins() {
        assert_eq!(make_gmm_spec().base_drift(&[4.0, -2.0], 0.3), [0.0, 0.0]);
        assert_eq!(make_vneck_spec().base_drift(&[3.0, 1.0], 0.5), [0.0, 0.0]);
        let mut custom = make_vneck_spec();
        custom.drift = BaseDrift::Linear { rate: -1.0 };
        assert_eq!(custom.base_drift(&[2.0, -1.0], 0.0), [-2.0, 1.0]);
        assert_eq!(custom.drift_divergence(&[2.0, -1.0], 0.0), -2.0);
    }

    #[test]
    fn obstacle_indicators() {
        let gmm = make_gmm_spec().obstacles;
        assert_eq!(obstacle_penalty(&gmm, &[6.0, 6.0]), 1.0);
        assert_eq!(obstacle_penalty(&gmm, &[0.0, 0.0]), 0.0);
        assert!(in_blocked_region(&gmm, &[6.0, -6.0]));
        assert!(!in_blocked_region(&gmm, &[6.0, 7.6]));

        let vneck = make_vneck_spec().obstacles;
        assert_eq!(obstacle_penalty(&vneck, &[0.0, 0.5]), 0.0);
        assert_eq!(obstacle_penalty(&vneck, &[0.0, 0.7]), 1.0);
        assert!(!in_blocked_region(&vneck, &[2.0, 1.0]));
    }

    #[test]
    fn hinge_penalty_vanishes_outside_and_grows_inside() {
        let mut spec = make_gmm_spec();
        spec.penalty = PenaltyShape::Hinge;
        assert_eq!(spec.obstacle_cost(&[0.0, 0.0]), 0.0);
        assert_abs_diff_eq!(spec.obstacle_cost(&[6.0, 6.0]), 2.25, epsilon = 1e-12);
        assert!(spec.obstacle_cost(&[6.0, 5.0]) < spec.obstacle_cost(&[6.0, 5.5]));
    }

    #[test]
    fn mf_cost_defaults() {
        let spec = make_gmm_spec();
        assert_eq!(spec.mf_cost(&[6.2, 5.9], 0.0), 1500.0);
        assert_eq!(spec.mf_cost(&[1.0, 1.0], 0.0), 0.0);
        let mut ent = make_gmm_spec();
        ent.obstacle_weight = 0.0;
        ent.entropy_weight = 0.1;
        assert_abs_diff_eq!(ent.mf_cost(&[0.0, 0.0], -2.0), -0.2, epsilon = 1e-15);
    }

    #[test]
    fn rejects_bad_specs() {
        let mut spec = make_gmm_spec();
        spec.dt = 0.03;
        assert!(spec.validate().is_err());
        let bad = DistributionSpec::Mixture {
            components: vec![MixtureComponent { weight: 0.7, mean: [0.0, 0.0], cov_scale: 1.0 }],
        };
        assert!(bad.validate().is_err());
        assert!("circle".parse::<ScenarioName>().is_err());
    }
}
