//! Evaluation metrics: mode coverage, obstacle collisions and energy
//! distance between sample sets.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::scenario::{gmm_means, in_blocked_region, Point, ProblemSpec, ScenarioName, GMM_MODES};
use crate::sde::TrajectoryBatch;

/// Samples farther than this from every ring mean count as unassigned.
pub const MODE_RADIUS: f64 = 3.0;

/// Fraction of `samples` assigned to each of the eight gmm modes (nearest
/// mean, within [`MODE_RADIUS`]).
pub fn mode_coverage(samples: &[Point], spec: &ProblemSpec) -> Result<Vec<f64>> {
    if spec.name != ScenarioName::Gmm {
        return Err(Error::WrongScenario(spec.name.to_string()));
    }
    let means = gmm_means();
    let mut counts = vec![0usize; GMM_MODES];
    for x in samples {
        let (best, d2) = means
            .iter()
            .map(|m| (x[0] - m[0]).powi(2) + (x[1] - m[1]).powi(2))
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("eight means");
        if d2 <= MODE_RADIUS * MODE_RADIUS {
            counts[best] += 1;
        }
    }
    let n = samples.len().max(1) as f64;
    Ok(counts.into_iter().map(|c| c as f64 / n).collect())
}

/// Fraction of all stored states, endpoints included, that lie inside an
/// obstacle.
pub fn collision_rate(batch: &TrajectoryBatch, spec: &ProblemSpec) -> f64 {
    let total = batch.len() * (batch.steps() + 1);
    if total == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    for i in 0..batch.len() {
        for k in 0..=batch.steps() {
            if in_blocked_region(&spec.obstacles, &batch.state(i, k)) {
                hits += 1;
            }
        }
    }
    hits as f64 / total as f64
}

fn mean_pairwise(a: &[Point], b: &[Point]) -> f64 {
    let mut total = 0.0;
    for x in a {
        let mut row = 0.0;
        for y in b {
            row += ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt();
        }
        total += row;
    }
    total / (a.len() * b.len()) as f64
}

fn lex(a: &[Point], b: &[Point]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        for c in 0..x.len() {
            match x[c].total_cmp(&y[c]) {
                Ordering::Equal => {}
                other => return other,
            }
        }
    }
    a.len().cmp(&b.len())
}

/// `2E‖A−B‖ − E‖A−A′‖ − E‖B−B′‖` with exact pairwise means (diagonal
/// included, so identical sets give exactly zero). The arguments are put in
/// a canonical order first, which makes the result exactly symmetric.
pub fn energy_distance(a: &[Point], b: &[Point]) -> f64 {
    assert!(a.len() >= 2 && b.len() >= 2, "energy distance needs at least two samples per set");
    let (a, b) = if lex(a, b) == Ordering::Greater { (b, a) } else { (a, b) };
    2.0 * mean_pairwise(a, b) - mean_pairwise(a, a) - mean_pairwise(b, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use crate::scenario::{make_gmm_spec, make_vneck_spec, sample_dist, Circle, DistributionSpec, ObstacleSet};
    use crate::sde::{simulate, Direction, FnPolicy, TrajectoryBatch, ZeroPolicy};
    use ndarray::Array3;

    #[test]
    fn coverage_trivial_cases() {
        let spec = make_gmm_spec();
        let mu1 = gmm_means()[0];
        assert_eq!(mode_coverage(&[mu1; 10], &spec).unwrap(), vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(mode_coverage(&[[0.0, 0.0]; 5], &spec).unwrap(), vec![0.0; 8]);
        assert!(matches!(mode_coverage(&[mu1], &make_vneck_spec()), Err(Error::WrongScenario(_))));
    }

    #[test]
    fn coverage_of_target_samples_is_uniform() {
        let spec = make_gmm_spec();
        let xs = sample_dist(&spec.target, 10_000, &mut substream(1, 0));
        for (i, f) in mode_coverage(&xs, &spec).unwrap().into_iter().enumerate() {
            assert!((f - 0.125).abs() < 0.02, "mode {i}: {f}");
        }
    }

    #[test]
    fn coverage_is_permutation_invariant() {
        let spec = make_gmm_spec();
        let mut xs = sample_dist(&spec.target, 300, &mut substream(2, 0));
        let a = mode_coverage(&xs, &spec).unwrap();
        xs.reverse();
        xs.rotate_left(17);
        assert_eq!(a, mode_coverage(&xs, &spec).unwrap());
    }

    #[test]
    fn collision_trivial_cases() {
        let mut spec = make_gmm_spec();
        spec.obstacles = ObstacleSet::none();
        let b = simulate(&spec, Direction::Forward, &ZeroPolicy, 20, 1).unwrap();
        assert_eq!(collision_rate(&b, &spec), 0.0);
        spec.obstacles = ObstacleSet::Circles(vec![Circle { center: [0.0, 0.0], radius: 1e9 }]);
        assert_eq!(collision_rate(&b, &spec), 1.0);
    }

    #[test]
    fn straight_chord_to_sixteen_misses_the_discs() {
        let spec = make_gmm_spec();
        let n = spec.steps();
        let mut b = TrajectoryBatch::empty(Direction::Forward, &spec);
        b.x = Array3::from_shape_fn((1, n + 1, 2), |(_, k, c)| if c == 0 { 16.0 * k as f64 / n as f64 } else { 0.0 });
        b.z = Array3::zeros((1, n + 1, 2));
        b.dw = Array3::zeros((1, n, 2));
        assert_eq!(collision_rate(&b, &spec), 0.0);
        // and the chord towards (16/√2, 16/√2) runs through the (6, 6) disc
        let d = 16.0 / 2f64.sqrt();
        b.x = Array3::from_shape_fn((1, n + 1, 2), |(_, k, _)| d * k as f64 / n as f64);
        assert!(collision_rate(&b, &spec) > 0.0);
    }

    #[test]
    fn energy_distance_closed_forms() {
        let a = vec![[0.0, 0.0]; 3];
        let b = vec![[3.0, 4.0]; 4];
        assert!((energy_distance(&a, &b) - 10.0).abs() < 1e-12);
        let mut rng = substream(3, 0);
        let xs = sample_dist(&DistributionSpec::gaussian([1.0, -2.0], 2.0), 50, &mut rng);
        assert_eq!(energy_distance(&xs, &xs), 0.0);
    }

    #[test]
    fn energy_distance_is_symmetric_and_small_for_same_law() {
        let d = DistributionSpec::gaussian([0.0, 0.0], 1.0);
        let a = sample_dist(&d, 10_000, &mut substream(4, 0));
        let b = sample_dist(&d, 10_000, &mut substream(4, 1));
        let ab = energy_distance(&a, &b);
        assert_eq!(ab, energy_distance(&b, &a));
        assert!(ab.abs() < 0.02, "{ab}");
        let c = sample_dist(&DistributionSpec::gaussian([1.0, 0.0], 1.0), 200, &mut substream(4, 2));
        assert!(energy_distance(&a[..200], &c) > 0.1);
    }

    #[test]
    fn policy_pushing_into_a_disc_collides() {
        let spec = make_gmm_spec();
        let towards = FnPolicy::new(|_, x: &Point| [20.0 * (6.0 - x[0]), 20.0 * (6.0 - x[1])]);
        let b = simulate(&spec, Direction::Forward, &towards, 50, 2).unwrap();
        assert!(collision_rate(&b, &spec) > 0.0);
    }
}
