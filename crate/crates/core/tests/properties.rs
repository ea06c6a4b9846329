use nalgebra::DVector;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::sync::Arc;

use symchar_core::cyclic::{decompose_cyclic, random_orthosymplectic, CyclicSymmetry};
use symchar_core::error::Error;
use symchar_core::dual::{DualAction, DualLoop};
use symchar_core::index::{bott_check, index_iterates, omega_index, splitting_numbers};
use symchar_core::model::HypersurfaceModel;
use symchar_core::path::convex_path_to_blocks;
use symchar_core::symplectic::{
    basic_normal_form, diamond, elliptic_height, nullity_omega, standard_j, symplectic_defect, symplectic_inverse,
    Mat, NormalForm, Tolerances,
};

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, failure_persistence: None, ..ProptestConfig::default() }
}

/// `exp(J S)` for a symmetric `S` with entries drawn from `entries`.
fn exp_hamiltonian(n: usize, entries: &[f64]) -> Mat {
    let d = 2 * n;
    let mut s = Mat::zeros(d, d);
    let mut it = entries.iter().cycle();
    for i in 0..d {
        for j in i..d {
            let v = *it.next().unwrap();
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    (standard_j(n) * s).exp()
}

fn normal_form() -> impl Strategy<Value = NormalForm> {
    prop_oneof![
        (1.3f64..3.0, any::<bool>()).prop_map(|(l, neg)| NormalForm::D { lambda: if neg { -l } else { l } }),
        (0.2f64..2.9).prop_map(|t| NormalForm::R { theta: t }),
        (3.4f64..6.0).prop_map(|t| NormalForm::R { theta: t }),
        (any::<bool>(), prop::sample::select(vec![-1.0, 0.0, 1.0]))
            .prop_map(|(pos, b)| NormalForm::N1 { lambda: if pos { 1.0 } else { -1.0 }, b }),
    ]
}

fn block(form: &NormalForm) -> Mat {
    basic_normal_form(form).unwrap().into_matrix()
}

fn unit(theta: f64) -> Complex64 {
    Complex64::from_polar(1.0, theta)
}

proptest! {
    #![proptest_config(config(32))]

    #[test]
    fn exponential_of_hamiltonian_is_symplectic(n in 1usize..4, e in prop::collection::vec(-0.5f64..0.5, 28)) {
        let m = exp_hamiltonian(n, &e);
        prop_assert!(symplectic_defect(&m) < 1e-10);
        let inv = symplectic_inverse(&m);
        prop_assert!((&m * &inv - Mat::identity(2 * n, 2 * n)).norm() < 1e-10);
    }

    #[test]
    fn nullity_matches_inverse_at_reciprocal(
        a in normal_form(),
        b in normal_form(),
        e in prop::collection::vec(-0.3f64..0.3, 10),
        pick in 0usize..3,
    ) {
        let m = diamond(&block(&a), &block(&b));
        let q = exp_hamiltonian(2, &e);
        let m = &q * m * symplectic_inverse(&q);
        let omega = match (pick, a) {
            (0, NormalForm::R { theta }) => unit(theta),
            (0, NormalForm::N1 { lambda, .. }) => Complex64::new(lambda, 0.0),
            (1, _) => Complex64::new(-1.0, 0.0),
            _ => Complex64::new(1.0, 0.0),
        };
        let tol = Tolerances::default().rank;
        prop_assert_eq!(nullity_omega(&m, omega, tol), nullity_omega(&symplectic_inverse(&m), omega.inv(), tol));
    }

    #[test]
    fn elliptic_height_is_additive_and_conjugation_invariant(
        a in normal_form(),
        b in normal_form(),
        e in prop::collection::vec(-0.3f64..0.3, 10),
    ) {
        let tol = Tolerances::monodromy();
        let (ma, mb) = (block(&a), block(&b));
        let ea = elliptic_height(&ma, &tol).unwrap();
        let eb = elliptic_height(&mb, &tol).unwrap();
        let m = diamond(&ma, &mb);
        prop_assert_eq!(elliptic_height(&m, &tol).unwrap(), ea + eb);
        let q = exp_hamiltonian(2, &e);
        let c = &q * m * symplectic_inverse(&q);
        prop_assert_eq!(elliptic_height(&c, &tol).unwrap(), ea + eb);
    }

    #[test]
    fn rotation_symmetry_satisfies_kernel_condition(n in 2usize..=5, k in 2u32..=12) {
        let sym = CyclicSymmetry::rotation(n, k).unwrap();
        prop_assert!(sym.satisfies_ker_condition());
        let pk = sym.power(k as i64);
        prop_assert!((pk - Mat::identity(2 * n, 2 * n)).norm() < 1e-10);
    }

    #[test]
    fn cyclic_decomposition_round_trips(n in 1usize..=4, k in 2u32..=9, exps in prop::collection::vec(1u32..9, 4), seed in any::<u64>()) {
        let exps: Vec<u32> = exps[..n].iter().map(|e| e % k).map(|e| if e == 0 { 1 } else { e }).collect();
        let base = CyclicSymmetry::from_exponents(&exps, k).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random_orthosymplectic(n, &mut rng);
        let p = &u * base.matrix() * u.transpose();
        let sym = decompose_cyclic(&p, k).unwrap();
        let q = sym.q();
        prop_assert!(symplectic_defect(q) < 1e-9);
        let back = q.transpose() * sym.normal_form() * q;
        prop_assert!((back - &p).norm() < 1e-9);
    }
}

proptest! {
    #![proptest_config(config(12))]

    #[test]
    fn splitting_numbers_bounded_and_conjugate_symmetric(a in normal_form(), b in normal_form()) {
        let path = convex_path_to_blocks(&[a, b], 1.0, None).unwrap();
        let mut omegas = vec![Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0), unit(0.7)];
        for f in [a, b] {
            if let NormalForm::R { theta } = f {
                omegas.push(unit(theta));
            }
        }
        for w in omegas {
            let (sp, sm) = splitting_numbers(&path, w).unwrap();
            let nu = omega_index(&path, w).unwrap().nullity as i64;
            prop_assert!((0..=nu).contains(&sp) && (0..=nu).contains(&sm), "omega {} S+ {} S- {} nu {}", w, sp, sm, nu);
            let (cp, cm) = splitting_numbers(&path, w.conj()).unwrap();
            prop_assert_eq!((sp, sm), (cm, cp));
        }
    }

    #[test]
    fn splitting_numbers_add_over_roots(a in normal_form(), b in normal_form(), m in 2usize..=3, z in 0.3f64..6.0) {
        let path = Arc::new(convex_path_to_blocks(&[a, b], 1.0, None).unwrap());
        let it = path.iterate(&Mat::identity(4, 4), m).unwrap();
        let mut targets = vec![0.0, z];
        for f in [a, b] {
            if let NormalForm::R { theta } = f {
                targets.push(theta * m as f64);
            }
        }
        for t in targets {
            let lhs = splitting_numbers(&it, unit(t)).unwrap();
            let mut rhs = (0, 0);
            for j in 0..m {
                let s = splitting_numbers(&path, unit((t + 2.0 * PI * j as f64) / m as f64)).unwrap();
                rhs = (rhs.0 + s.0, rhs.1 + s.1);
            }
            prop_assert_eq!(lhs, rhs, "z angle {}", t);
        }
    }

    #[test]
    fn index_is_conjugation_invariant(a in normal_form(), b in normal_form(), e in prop::collection::vec(-0.3f64..0.3, 10)) {
        let path = Arc::new(convex_path_to_blocks(&[a, b], 1.0, None).unwrap());
        let q = exp_hamiltonian(2, &e);
        let conj = path.conjugate(&q).unwrap();
        for w in [Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0), unit(1.9)] {
            let x = omega_index(&path, w).unwrap();
            let y = omega_index(&conj, w).unwrap();
            prop_assert_eq!((x.index, x.nullity), (y.index, y.nullity));
            prop_assert_eq!(splitting_numbers(&path, w).unwrap(), splitting_numbers(&conj, w).unwrap());
        }
    }

    #[test]
    fn iterate_index_is_sum_over_roots_of_unity(a in normal_form(), b in normal_form(), m in 1usize..=4) {
        let path = Arc::new(convex_path_to_blocks(&[a, b], 1.0, None).unwrap());
        let it = index_iterates(&path, m).unwrap();
        let direct = it[m - 1];
        let mut index = 0;
        let mut nullity = 0;
        for j in 0..m {
            let r = omega_index(&path, unit(2.0 * PI * j as f64 / m as f64)).unwrap();
            index += r.index;
            nullity += r.nullity;
        }
        prop_assert_eq!((direct.index, direct.nullity), (index, nullity));
    }

    #[test]
    fn bott_formula_with_rotation_symmetry(a in normal_form(), b in normal_form(), k in 2u32..=5, z in 0.0f64..6.2) {
        let path = Arc::new(convex_path_to_blocks(&[a, b], 1.0, None).unwrap());
        let sym = CyclicSymmetry::rotation(2, k).unwrap();
        for w in [Complex64::new(1.0, 0.0), unit(z)] {
            let c = bott_check(&path, sym.matrix(), k as usize, w).unwrap();
            prop_assert!(c.holds(), "k {} z {}: {:?}", k, w, c);
        }
    }
}

/// Perturbed model, or `None` when the perturbation breaks convexity.
fn perturbed(radii: &[f64], eps: f64, k: u32) -> Option<HypersurfaceModel> {
    let sym = CyclicSymmetry::rotation(radii.len(), k).unwrap();
    match HypersurfaceModel::perturbed(radii, 1.5, eps, k, sym) {
        Ok(m) => Some(m),
        Err(Error::NotConvex(_)) => None,
        Err(e) => panic!("{e}"),
    }
}

fn ellipsoid_radii() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1.0f64..2.5, 2..=3)
}

proptest! {
    #![proptest_config(config(16))]

    #[test]
    fn young_fenchel_inequality(radii in ellipsoid_radii(), k in 2u32..=5, seed in any::<u64>()) {
        let model = perturbed(&radii, 0.01, k);
        prop_assume!(model.is_some());
        let model = model.unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = model.random_point(&mut rng);
        let y = model.random_point(&mut rng);
        let gap = model.hamiltonian(&x) + model.fenchel(&y).unwrap() - x.dot(&y);
        prop_assert!(gap >= -1e-9, "gap {}", gap);
        let g = model.ham_grad(&x);
        let eq = model.hamiltonian(&x) + model.fenchel(&g).unwrap() - x.dot(&g);
        prop_assert!(eq.abs() < 1e-8 * (1.0 + x.dot(&g).abs()), "equality gap {}", eq);
    }

    #[test]
    fn hamiltonian_is_symmetric(radii in ellipsoid_radii(), k in 2u32..=6, eps in 0.0f64..0.01, seed in any::<u64>()) {
        let n = radii.len();
        let sym = CyclicSymmetry::rotation(n, k).unwrap();
        let p = sym.matrix().clone();
        let model = perturbed(&radii, eps, k);
        prop_assume!(model.is_some());
        let model = model.unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = model.random_point(&mut rng);
        let px: DVector<f64> = &p * &x;
        let h = model.hamiltonian(&x);
        prop_assert!((model.hamiltonian(&px) - h).abs() < 1e-10 * (1.0 + h.abs()));
        let gp: DVector<f64> = &p * model.ham_grad(&x);
        prop_assert!((model.ham_grad(&px) - gp).norm() < 1e-9 * (1.0 + h.abs()));
    }

    #[test]
    fn zero_perturbation_matches_ellipsoid(radii in ellipsoid_radii(), k in 2u32..=5, seed in any::<u64>()) {
        let n = radii.len();
        let sym = CyclicSymmetry::rotation(n, k).unwrap();
        let flat = HypersurfaceModel::perturbed(&radii, 1.5, 0.0, k, sym.clone()).unwrap();
        let ell = HypersurfaceModel::ellipsoid(&radii, 1.5, sym).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = ell.random_point(&mut rng);
        prop_assert!((flat.hamiltonian(&x) - ell.hamiltonian(&x)).abs() < 1e-12 * (1.0 + ell.hamiltonian(&x)));
        prop_assert!((flat.ham_grad(&x) - ell.ham_grad(&x)).norm() < 1e-10 * (1.0 + ell.ham_grad(&x).norm()));
    }

    #[test]
    fn dual_action_is_equivariant(radii in ellipsoid_radii(), k in 2u32..=5, seed in any::<u64>()) {
        let n = radii.len();
        let sym = CyclicSymmetry::rotation(n, k).unwrap();
        let p = sym.matrix().clone();
        let model = perturbed(&radii, 0.01, k);
        prop_assume!(model.is_some());
        let model = Arc::new(model.unwrap());
        let action = DualAction::new(model, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = DualLoop::random(2 * n, 8, 3, 1.0, &mut rng);
        let a = action.value(&u).unwrap();
        let b = action.value(&u.map(&p)).unwrap();
        prop_assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()), "{} vs {}", a, b);
    }
}
