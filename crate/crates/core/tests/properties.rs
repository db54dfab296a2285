use mfbridge::metrics::{collision_rate, energy_distance, mode_coverage};
use mfbridge::net::{AdamConfig, NetBundle, NetId};
use mfbridge::rng::substream;
use mfbridge::scenario::{make_gmm_spec, make_vneck_spec, Point};
use mfbridge::sde::{read_trajectory_csv, simulate, Direction};
use proptest::prelude::*;

fn points(max: usize) -> impl Strategy<Value = Vec<Point>> {
    prop::collection::vec((-20.0..20.0f64, -20.0..20.0f64).prop_map(|(a, b)| [a, b]), 2..max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn energy_distance_is_exactly_symmetric(a in points(40), b in points(40)) {
        prop_assert_eq!(energy_distance(&a, &b).to_bits(), energy_distance(&b, &a).to_bits());
    }

    #[test]
    fn energy_distance_is_nonnegative(a in points(40), b in points(40)) {
        prop_assert!(energy_distance(&a, &b) > -1e-9);
    }

    #[test]
    fn coverage_is_a_sub_probability_and_order_free(xs in points(60), rot in 0usize..60) {
        let spec = make_gmm_spec();
        let c = mode_coverage(&xs, &spec).unwrap();
        prop_assert!(c.iter().sum::<f64>() <= 1.0 + 1e-12);
        let mut ys = xs.clone();
        ys.reverse();
        let r = rot % ys.len();
        ys.rotate_left(r);
        prop_assert_eq!(c, mode_coverage(&ys, &spec).unwrap());
    }

    #[test]
    fn exported_trajectories_parse_back_exactly(seed in 0u64..1000, backward in any::<bool>()) {
        let spec = make_vneck_spec();
        let nets = NetBundle::new(2, 8, AdamConfig::default(), AdamConfig::default(), &mut substream(seed, 1)).unwrap();
        let dir = if backward { Direction::Backward } else { Direction::Forward };
        let b = simulate(&spec, dir, nets.net(dir.policy()), 3, seed).unwrap();
        let mut buf = Vec::new();
        b.write_csv(&mut buf).unwrap();
        let back = read_trajectory_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
        prop_assert_eq!(back.direction, dir);
        prop_assert_eq!(back.x, b.x.clone());
        let rate = collision_rate(&b, &spec);
        prop_assert!((0.0..=1.0).contains(&rate));
    }

    #[test]
    fn checkpoints_reproduce_the_networks(seed in 0u64..1000) {
        let mut nets = NetBundle::new(2, 6, AdamConfig::default(), AdamConfig::default(), &mut substream(seed, 2)).unwrap();
        nets.meta.insert("seed".into(), seed.to_string());
        let g = nets.net(NetId::ZPhi).clone();
        nets.apply(NetId::ZPhi, &g);
        let back = NetBundle::from_checkpoint_str(&nets.to_checkpoint_string()).unwrap();
        prop_assert_eq!(back, nets);
    }
}
