use fracshape::shape::{random_mask, CostSpec};
use fracshape::solve::{ks_membership, smallest_eigenvalues, solve_torsion, torsion_or_zero};
use fracshape::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Eigenvalues of identical blocks can differ in the last few bits.
const ROUNDOFF: f64 = 1e-12;

const ORDERS: [f64; 4] = [0.3, 0.5, 0.7, 0.9];

fn random_nonempty(grid: &BoxGrid, rng: &mut impl Rng) -> SetMask {
    loop {
        let p = rng.random_range(0.2..0.9);
        let mask = SetMask::from_fn(grid, |_| rng.random_bool(p));
        if !mask.is_empty() {
            return mask;
        }
    }
}

fn random_subset(mask: &SetMask, rng: &mut impl Rng) -> SetMask {
    let cells = mask.indices();
    let keep = rng.random_range(1..=cells.len());
    let mut chosen = rand::seq::index::sample(rng, cells.len(), keep).into_vec();
    chosen.sort_unstable();
    let picked: Vec<usize> = chosen.into_iter().map(|k| cells[k]).collect();
    SetMask::from_indices(&mask.grid(), &picked).unwrap()
}

fn grids() -> [BoxGrid; 2] {
    [
        BoxGrid::interval(0.0, 1.0, 20).unwrap(),
        BoxGrid::square(0.0, 1.0, 6).unwrap(),
    ]
}

fn discretizations() -> Vec<Discretization> {
    grids()
        .iter()
        .flat_map(|g| {
            ORDERS
                .iter()
                .map(|&s| Discretization::new(g, &FracParam::new(g.dim(), s).unwrap()).unwrap())
                .chain(std::iter::once(
                    Discretization::new(g, &FracParam::classical(g.dim()).unwrap()).unwrap(),
                ))
                .collect::<Vec<_>>()
        })
        .collect()
}

#[test]
fn symmetric_m_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for disc in discretizations() {
        for _ in 0..100 {
            let op = disc.assemble(&random_nonempty(disc.grid(), &mut rng)).unwrap();
            let k = op.matrix();
            assert_eq!(k, &k.transpose());
            assert!(op.len() == 1 || op.max_off_diagonal() <= 0.0);
            assert!((0..op.len()).all(|i| k[(i, i)] > 0.0));
            let scale = (0..op.len()).map(|i| k[(i, i)]).fold(0.0, f64::max);
            assert!(op.dominance_margin() >= -1e-12 * scale);
        }
    }
}

#[test]
fn maximum_principle_and_ks_membership() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for disc in discretizations() {
        for _ in 0..100 {
            let mask = random_nonempty(disc.grid(), &mut rng);
            let sol = solve_torsion(&disc.assemble(&mask).unwrap()).unwrap();
            assert!(sol.min_before_clamp >= -1e-12, "{}", sol.min_before_clamp);
            let report = ks_membership(&disc, &sol.u);
            assert!(report.member, "{report:?}");
        }
    }
}

#[test]
fn max_of_ks_members_stays_in_ks() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for disc in discretizations() {
        for _ in 0..50 {
            let a = random_nonempty(disc.grid(), &mut rng);
            let b = random_nonempty(disc.grid(), &mut rng);
            let ta: f64 = rng.random_range(0.2..=1.0);
            let tb: f64 = rng.random_range(0.2..=1.0);
            let u: Vec<f64> = torsion_or_zero(&disc, &a).unwrap().iter().map(|v| ta * v).collect();
            let v: Vec<f64> = torsion_or_zero(&disc, &b).unwrap().iter().map(|v| tb * v).collect();
            assert!(ks_membership(&disc, &u).member && ks_membership(&disc, &v).member);
            let w: Vec<f64> = u.iter().zip(&v).map(|(x, y)| x.max(*y)).collect();
            assert!(ks_membership(&disc, &w).member);
        }
    }
}

#[test]
fn eigenvalue_and_torsion_domain_monotonicity() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for disc in discretizations() {
        for _ in 0..100 {
            let big = random_nonempty(disc.grid(), &mut rng);
            let small = random_subset(&big, &mut rng);
            let k = small.count().min(4);
            let lb = smallest_eigenvalues(&disc.assemble(&big).unwrap(), k).unwrap();
            let ls = smallest_eigenvalues(&disc.assemble(&small).unwrap(), k).unwrap();
            for (s, b) in ls.iter().zip(&lb) {
                assert!(*s >= b * (1.0 - ROUNDOFF), "{ls:?} {lb:?}");
            }
            let ub = torsion_or_zero(&disc, &big).unwrap();
            let us = torsion_or_zero(&disc, &small).unwrap();
            assert!(us.iter().zip(&ub).all(|(s, b)| *s <= b + 1e-10));
        }
    }
}

#[test]
fn cost_inclusion_monotonicity() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let specs = [
        CostSpec::single(1, 1.0).unwrap(),
        CostSpec::weighted_sum(vec![1, 2], vec![1.0, 0.5], 1.0).unwrap(),
        CostSpec::max(vec![1, 3], 1.0).unwrap(),
        CostSpec::constant(2.0, 1.0).unwrap(),
    ];
    for disc in discretizations() {
        let mut done = 0;
        while done < 50 {
            let big = random_nonempty(disc.grid(), &mut rng);
            let small = random_subset(&big, &mut rng);
            if small.count() < 3 {
                continue;
            }
            done += 1;
            for spec in &specs {
                let fb = evaluate_cost(spec, &disc, &big).unwrap();
                let fs = evaluate_cost(spec, &disc, &small).unwrap();
                assert!(fs >= fb * (1.0 - ROUNDOFF));
            }
        }
    }
}

#[test]
fn removing_a_cell_never_decreases_the_cost() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let grid = BoxGrid::square(0.0, 1.0, 6).unwrap();
    let disc = Discretization::new(&grid, &FracParam::new(2, 0.5).unwrap()).unwrap();
    let spec = CostSpec::single(1, 1.0).unwrap();
    for _ in 0..50 {
        let mut mask = random_mask(&grid, rng.random_range(2..36), &mut rng).unwrap();
        let before = evaluate_cost(&spec, &disc, &mask).unwrap();
        let cells = mask.indices();
        mask.set(cells[rng.random_range(0..cells.len())], false);
        assert!(evaluate_cost(&spec, &disc, &mask).unwrap() >= before * (1.0 - ROUNDOFF));
    }
}

#[test]
fn eigenvalue_scaling_identity() {
    for dim in [1, 2] {
        for s in [0.25, 0.5, 0.75, 1.0] {
            let make = |b: f64| {
                let g = if dim == 1 {
                    BoxGrid::interval(0.0, b, 40).unwrap()
                } else {
                    BoxGrid::square(0.0, b, 8).unwrap()
                };
                let op = Discretization::new(&g, &FracParam::new(dim, s).unwrap())
                    .unwrap()
                    .assemble(&SetMask::full(&g))
                    .unwrap();
                smallest_eigenvalues(&op, 4).unwrap()
            };
            let (l1, l2) = (make(1.0), make(2.0));
            for (a, b) in l1.iter().zip(&l2) {
                assert!((b - 2f64.powf(-2.0 * s) * a).abs() <= 1e-8 * b, "dim {dim} s {s}");
            }
        }
    }
}

#[test]
fn torsion_converges_to_classical_as_s_increases() {
    let grid = BoxGrid::square(0.0, 1.0, 10).unwrap();
    let mask = SetMask::ball(&grid, &[0.5, 0.5], 0.35);
    let classical = Discretization::new(&grid, &FracParam::classical(2).unwrap()).unwrap();
    let u1 = torsion_or_zero(&classical, &mask).unwrap();
    let dists: Vec<f64> = [0.8, 0.9, 0.95, 0.99]
        .iter()
        .map(|&s| {
            let disc = Discretization::new(&grid, &FracParam::new(2, s).unwrap()).unwrap();
            let us = torsion_or_zero(&disc, &mask).unwrap();
            let sum: f64 = us.iter().zip(&u1).map(|(a, b)| (a - b).powi(2)).sum();
            (grid.cell_volume() * sum).sqrt()
        })
        .collect();
    assert!(dists.windows(2).all(|w| w[1] < w[0]), "{dists:?}");
}

fn mask_strategy() -> impl Strategy<Value = (BoxGrid, Vec<bool>, Vec<bool>, Vec<bool>)> {
    (1usize..=2, 2usize..=7).prop_flat_map(|(dim, k)| {
        let grid = if dim == 1 {
            BoxGrid::interval(-1.0, 2.0, k * k).unwrap()
        } else {
            BoxGrid::square(0.0, 1.0, k).unwrap()
        };
        let n = grid.len();
        (
            Just(grid),
            proptest::collection::vec(any::<bool>(), n),
            proptest::collection::vec(any::<bool>(), n),
            proptest::collection::vec(any::<bool>(), n),
        )
    })
}

fn mask_of(grid: &BoxGrid, bits: &[bool]) -> SetMask {
    SetMask::from_fn(grid, |i| bits[i])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn measure_inclusion_exclusion((grid, a, b, _) in mask_strategy()) {
        let (a, b) = (mask_of(&grid, &a), mask_of(&grid, &b));
        let lhs = a.union(&b).unwrap().measure() + a.intersection(&b).unwrap().measure();
        prop_assert!((lhs - a.measure() - b.measure()).abs() < 1e-12);
        prop_assert!(a.intersection(&b).unwrap().is_subset(&a));
        prop_assert_eq!(a.complement().complement(), a.clone());
        prop_assert_eq!(a.difference(&b).unwrap().count() + a.intersection(&b).unwrap().count(), a.count());
    }

    #[test]
    fn mask_file_round_trip((grid, a, _, _) in mask_strategy()) {
        let mask = mask_of(&grid, &a);
        let parsed: SetMask = mask.to_mask_string().parse().unwrap();
        prop_assert_eq!(parsed, mask);
    }

    #[test]
    fn gamma_distance_is_a_pseudometric((grid, a, b, c) in mask_strategy(), s in 0.2f64..0.95) {
        let disc = Discretization::new(&grid, &FracParam::new(grid.dim(), s).unwrap()).unwrap();
        let (a, b, c) = (mask_of(&grid, &a), mask_of(&grid, &b), mask_of(&grid, &c));
        let ab = gamma_s_distance(&disc, &a, &b).unwrap();
        let ba = gamma_s_distance(&disc, &b, &a).unwrap();
        let bc = gamma_s_distance(&disc, &b, &c).unwrap();
        let ac = gamma_s_distance(&disc, &a, &c).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, ba);
        prop_assert!(ac <= ab + bc + 1e-10);
        prop_assert_eq!(gamma_s_distance(&disc, &a, &a).unwrap(), 0.0);
    }

    #[test]
    fn quadratic_form_is_nonnegative((grid, a, _, _) in mask_strategy(), s in 0.05f64..1.0, seed in any::<u64>()) {
        let mask = mask_of(&grid, &a);
        prop_assume!(!mask.is_empty());
        let op = Discretization::new(&grid, &FracParam::new(grid.dim(), s).unwrap()).unwrap().assemble(&mask).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = nalgebra::DVector::from_fn(op.len(), |_, _| rng.random_range(-1.0..1.0));
        prop_assert!(op.quadratic_form(&u) >= 0.0);
    }
}
