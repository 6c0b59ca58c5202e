mod common;

use cluster_games::sets::{ConvexSet, DykstraSettings};
use common::{brute_force_projection, Instance};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn point(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.random_range(-4.0..4.0))
}

fn sets(inst: &Instance) -> [ConvexSet; 2] {
    [
        ConvexSet::intersection(inst.members()).unwrap(),
        ConvexSet::polyhedron(inst.members()).unwrap(),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn projections_are_feasible_idempotent_nonexpansive(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = Instance::random(&mut rng);
        for set in sets(&inst) {
            let x = point(&mut rng, inst.dim);
            let y = point(&mut rng, inst.dim);
            let px = set.project(&x).unwrap();
            let py = set.project(&y).unwrap();
            prop_assert!(set.contains(&px, 1e-8).unwrap());
            let again = set.project(&px).unwrap();
            prop_assert!((&again - &px).amax() <= 1e-9);
            prop_assert!((&px - &py).norm() <= (&x - &y).norm() + 1e-9);
        }
    }

    #[test]
    fn projections_match_enumeration(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = Instance::random(&mut rng);
        let y = point(&mut rng, inst.dim);
        let expected = brute_force_projection(&inst, &y).expect("instance is nonempty");
        for set in sets(&inst) {
            let got = set.project(&y).unwrap();
            prop_assert!((&got - &expected).amax() <= 1e-6, "{got} vs {expected}");
        }
    }
}

#[test]
fn enumeration_oracle_on_known_cases() {
    // unit box, projection clamps
    let inst = Instance {
        dim: 2,
        bounds: Some((vec![0.0, 0.0], vec![1.0, 1.0])),
        halfspaces: vec![],
        equalities: vec![],
    };
    let x = brute_force_projection(&inst, &DVector::from_column_slice(&[2.0, -1.0])).unwrap();
    assert_eq!(x, DVector::from_column_slice(&[1.0, 0.0]));
    // simplex-like corner: x1 + x2 <= 1 cuts the box
    let inst = Instance {
        halfspaces: vec![(vec![1.0, 1.0], 1.0)],
        ..inst
    };
    let x = brute_force_projection(&inst, &DVector::from_column_slice(&[1.0, 1.0])).unwrap();
    assert!((x - DVector::from_column_slice(&[0.5, 0.5])).amax() < 1e-12);
}

#[test]
fn tighter_dykstra_settings_keep_agreement() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let settings = DykstraSettings {
        tolerance: 1e-13,
        max_cycles: 100_000,
    };
    for _ in 0..20 {
        let inst = Instance::random(&mut rng);
        let set = ConvexSet::intersection_with(inst.members(), settings).unwrap();
        let y = point(&mut rng, inst.dim);
        let expected = brute_force_projection(&inst, &y).unwrap();
        assert!((set.project(&y).unwrap() - expected).amax() <= 1e-8);
    }
}
