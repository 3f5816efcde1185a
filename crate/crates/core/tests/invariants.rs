use std::collections::BTreeSet;

use ddpm_polycube::codec::{GeometryFrame, FRAME_LEN};
use ddpm_polycube::dataset::{ConfigurationType, ContextVector};
use ddpm_polycube::diffusion::*;
use ddpm_polycube::geom::Vec3;
use ddpm_polycube::hex::{generate_hex_lattice, hex_scaled_jacobian, pillow_boundary};
use ddpm_polycube::polycube::{validate_polycube, PolycubeComplex};
use nalgebra::{Rotation3, Unit};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_frame(rng: &mut ChaCha8Rng) -> GeometryFrame<f64> {
    GeometryFrame::from_vec((0..FRAME_LEN).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn unit_hex() -> [Vec3; 8] {
    [
        Vec3::new(0., 0., 0.),
        Vec3::new(1., 0., 0.),
        Vec3::new(1., 1., 0.),
        Vec3::new(0., 1., 0.),
        Vec3::new(0., 0., 1.),
        Vec3::new(1., 0., 1.),
        Vec3::new(1., 1., 1.),
        Vec3::new(0., 1., 1.),
    ]
}

fn box_cells(dims: [i64; 3]) -> Vec<[i64; 3]> {
    let mut cells = Vec::new();
    for i in 0..dims[0] {
        for j in 0..dims[1] {
            for k in 0..dims[2] {
                cells.push([i, j, k]);
            }
        }
    }
    cells
}

fn shared_faces(cells: &BTreeSet<[i64; 3]>) -> usize {
    cells
        .iter()
        .map(|c| {
            (0..3)
                .filter(|&a| {
                    let mut n = *c;
                    n[a] += 1;
                    cells.contains(&n)
                })
                .count()
        })
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn noiseless_chain_matches_closed_form(steps in 2usize..200, seed in 0u64..1000, hi in 0.005f64..0.05) {
        let sched: DiffusionSchedule<f64> = linear_schedule(steps, 1e-4, hi).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = random_frame(&mut rng);
        let q = DriftField(random_frame(&mut rng));
        let z = NoiseDraw::zeros();
        let mut x = x0.clone();
        for t in 1..=steps {
            x = forward_step(&sched, &x, t, &q, &z).unwrap();
            let closed = forward_closed(&sched, &x0, t, &q, &z).unwrap();
            prop_assert!(x.max_abs_diff(&closed) < 1e-10);
        }
    }

    #[test]
    fn paired_drift_lands_on_target(steps in 2usize..300, seed in 0u64..1000) {
        let sched: DiffusionSchedule<f64> = linear_schedule(steps, 1e-4, 0.02).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = random_frame(&mut rng);
        let target = random_frame(&mut rng);
        let q = drift_from_target(&target, &sched, Some(&x0));
        let end = forward_closed(&sched, &x0, steps, &q, &NoiseDraw::zeros()).unwrap();
        prop_assert!(end.max_abs_diff(&target) < 1e-12);
    }

    #[test]
    fn reverse_drift_never_shrinks(steps in 2usize..300, k_frac in 0.0f64..1.0) {
        let sched: DiffusionSchedule<f64> = linear_schedule(steps, 1e-4, 0.02).unwrap();
        let k = 1 + ((steps - 1) as f64 * k_frac) as usize;
        let mut one = GeometryFrame::zeros();
        one.set(0, 0, 1.0);
        let q = reverse_drift(&sched, k, &DriftField(one)).unwrap();
        prop_assert!(q.0.get(0, 0) >= 1.0 - 1e-15);
        prop_assert!(sched.sigma(k) > 0.0);
    }

    #[test]
    fn context_mask_round_trips(id in 0u8..9) {
        let c = ContextVector::for_type(id).unwrap();
        prop_assert_eq!(ContextVector::parse(&format!("{:#x}", c.mask())).unwrap(), c);
        prop_assert_eq!(ContextVector::parse(&format!("{:#b}", c.mask())).unwrap(), c);
        prop_assert_eq!(ContextVector::parse(&id.to_string()).unwrap(), c);
        let ones = c.to_values::<f64>().iter().filter(|&&v| v == 1.0).count();
        prop_assert_eq!(ones, if ConfigurationType::new(id).unwrap() == ConfigurationType::STACKED { 2 } else { 1 });
    }

    #[test]
    fn scaled_jacobian_is_similarity_invariant(
        seed in 0u64..1000,
        axis in prop::array::uniform3(-1.0f64..1.0),
        angle in -3.0f64..3.0,
        scale in 0.1f64..10.0,
        shift in prop::array::uniform3(-5.0f64..5.0),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = unit_hex().map(|v| v + Vec3::from_fn(|_, _| rng.random_range(-0.2..0.2)));
        let axis = Vec3::from(axis);
        prop_assume!(axis.norm() > 1e-3);
        let r = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle);
        let moved = p.map(|v| r * v * scale + Vec3::from(shift));
        let (a, _) = hex_scaled_jacobian(&p);
        let (b, _) = hex_scaled_jacobian(&moved);
        prop_assert!((a - b).abs() < 1e-10);
        prop_assert!(a <= 1.0 + 1e-12);
    }

    #[test]
    fn random_cell_sets_are_conforming(cells in prop::collection::btree_set(prop::array::uniform3(0i64..3), 1..12)) {
        let pc = PolycubeComplex::from_cells(1.0, [0.0; 3], cells.iter().copied()).unwrap();
        let report = validate_polycube(&pc, None);
        prop_assert_eq!(report.facets, 6 * cells.len() - 2 * shared_faces(&cells));
        prop_assert_eq!(pc.unit_cells(), cells);
    }

    #[test]
    fn box_lattices_have_expected_counts(dims in prop::array::uniform3(1i64..4), depth in 0u32..3) {
        let cells = box_cells(dims);
        let pc = PolycubeComplex::from_cells(0.5, [0.0; 3], cells.iter().copied()).unwrap();
        let report = validate_polycube(&pc, Some(0));
        prop_assert!(report.is_valid(), "{:?}", report.violations);
        let n = 1i64 << depth;
        let lattice = generate_hex_lattice(&pc, depth);
        let (a, b, c) = (dims[0] * n, dims[1] * n, dims[2] * n);
        prop_assert_eq!(lattice.hexes.len() as i64, a * b * c);
        prop_assert_eq!(lattice.vertices.len() as i64, (a + 1) * (b + 1) * (c + 1));
        let quads = lattice.boundary_quads().len();
        prop_assert_eq!(quads as i64, 2 * (a * b + b * c + a * c));
        let pillowed = pillow_boundary(&lattice).unwrap();
        prop_assert_eq!(pillowed.hexes.len(), lattice.hexes.len() + quads);
        prop_assert_eq!(pillowed.boundary_quads().len(), quads);
    }
}
