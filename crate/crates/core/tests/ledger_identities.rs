mod common;

use lorentz_decay::grid::log_space;
use lorentz_decay::ledger::{bracket_sq, default_time_grid, ledger_trajectory, order_densities, ratio_profile};
use lorentz_decay::rng::{MaterialKind, Stream};
use lorentz_decay::{
    build_generator, densities, derivative_ladder, gronwall_certificate, identity_residual, initial_bound_ratio,
    lemma_form, lemma_ratio, spectral_abscissa, LedgerError, MaterialParams, ModeState, Oscillator, Subspace,
};
use nalgebra::Vector3;
use num_complex::Complex64 as C;

fn cv(x: f64, y: f64, z: f64) -> Vector3<C> {
    Vector3::new(C::new(x, 0.0), C::new(y, 0.0), C::new(z, 0.0))
}

fn lorentz_two() -> MaterialParams {
    MaterialParams::new(
        1.0,
        1.0,
        vec![Oscillator::new(1.0, 1.0, 0.4), Oscillator::new(0.6, 2.5, 0.2)],
        vec![Oscillator::new(0.8, 1.5, 0.3), Oscillator::new(1.1, 0.7, 0.9)],
    )
    .unwrap()
}

#[test]
fn initial_energy_with_oscillators_at_rest() {
    let m = MaterialParams::new(1.3, 0.7, vec![Oscillator::new(1.0, 1.0, 0.5)], vec![Oscillator::new(1.0, 0.0, 1.0)])
        .unwrap();
    let k = Vector3::new(0.0, 0.0, 1.0);
    let e0 = Vector3::new(C::new(1.0, 0.5), C::new(-0.3, 0.0), C::new(0.0, 0.0));
    let h0 = cv(0.2, 0.9, 0.0);
    let s = ModeState::from_fields(&m, e0, h0);
    let lad = derivative_ladder(&build_generator(&m, k), &s, 3);
    let l = densities(&m, &k, 0.0, &lad).unwrap();
    let want = 0.5 * (1.3 * e0.norm_squared() + 0.7 * h0.norm_squared());
    assert!((l.orders[0].lyapunov - want).abs() < 1e-15);
    assert_eq!(l.orders[0].decay, 0.0);
}

#[test]
fn drude_toy_decay_density_by_hand() {
    let m = MaterialParams::new(1.5, 0.8, vec![Oscillator::new(1.2, 0.0, 0.7)], vec![Oscillator::new(0.9, 0.0, 1.3)])
        .unwrap();
    let k = Vector3::new(1.0, 0.0, 0.0);
    let s = Stream::new(21).transverse_state(&m, &k, true);
    let d = order_densities(&m, &s);
    let want = 0.7 * 1.5 * 1.44 * s.pdot[0].norm_squared() + 1.3 * 0.8 * 0.81 * s.mdot[0].norm_squared();
    assert!((d.decay - want).abs() < 1e-14 * want);
    // Drude degeneration: the lorentz formulas lose their |P|^2 terms
    let lyap = 0.5
        * (1.5 * s.e.norm_squared()
            + 0.8 * s.h.norm_squared()
            + 1.5 * 1.44 * s.pdot[0].norm_squared()
            + 0.8 * 0.81 * s.mdot[0].norm_squared());
    assert!((d.lyapunov - lyap).abs() < 1e-14 * lyap);
    assert!((d.energy + d.extra_energy - d.lyapunov).abs() <= 1e-15 * d.lyapunov);
}

#[test]
fn lossless_has_no_decay_density() {
    let m = MaterialParams::new(1.0, 1.0, vec![Oscillator::new(1.0, 1.0, 0.0)], vec![Oscillator::new(1.0, 0.0, 0.0)])
        .unwrap();
    let k = Vector3::new(0.3, 0.4, 0.5);
    let s = Stream::new(22).transverse_state(&m, &k, true);
    let l = densities(&m, &k, 0.0, &derivative_ladder(&build_generator(&m, k), &s, 3)).unwrap();
    for o in &l.orders {
        assert_eq!(o.decay, 0.0);
    }
}

#[test]
fn ladder_too_short() {
    let m = MaterialParams::drude_toy();
    let k = Vector3::new(1.0, 0.0, 0.0);
    let s = ModeState::zeros(1, 1);
    let lad = derivative_ladder(&build_generator(&m, k), &s, 1);
    assert!(matches!(densities(&m, &k, 0.0, &lad), Err(LedgerError::LadderTooShort(_))));
}

#[test]
fn cumulated_definitions() {
    let m = lorentz_two();
    let k = Vector3::new(0.3, -0.2, 1.1);
    let s = Stream::new(23).transverse_state(&m, &k, true);
    let l = densities(&m, &k, 0.0, &derivative_ladder(&build_generator(&m, k), &s, 3)).unwrap();
    let b = 1.0 / (1.0 + k.norm_squared());
    let c2 = l.orders[0].lyapunov + b * l.orders[1].lyapunov + b * b * l.orders[2].lyapunov;
    assert!((l.cumulated(2).lyapunov - c2).abs() <= 1e-15 * c2);
    let d1 = l.orders[0].decay + b * l.orders[1].decay;
    assert!((l.cumulated(1).decay - d1).abs() <= 1e-15 * d1);
    assert_eq!(bracket_sq(&k), 1.0 / b);
    for o in l.orders.iter().chain(l.cumulated.iter()) {
        assert!(o.energy >= 0.0 && o.extra_energy >= 0.0 && o.lyapunov >= 0.0 && o.decay >= 0.0);
    }
}

#[test]
fn identity_examples() {
    let times = log_space(1e-3, 30.0, 40);
    let m = MaterialParams::drude_toy();
    let k = Vector3::new(1.0, 0.0, 0.0);
    let s = Stream::new(24).transverse_state(&m, &k, true);
    let r = identity_residual(&m, &k, &s, &times).unwrap();
    assert!(r.max_relative() <= 1e-10, "{}", r.max_relative());

    let m = lorentz_two();
    let k = Vector3::new(0.3, -0.2, 1.1);
    let s = Stream::new(25).transverse_state(&m, &k, true);
    let r = identity_residual(&m, &k, &s, &times).unwrap();
    assert!(r.max_relative() <= 1e-9, "{}", r.max_relative());

    assert!(matches!(identity_residual(&m, &k, &s, &[]), Err(LedgerError::EmptyTimeGrid)));
}

#[test]
fn identity_rates_against_finite_differences_of_oracle_trajectory() {
    // d L_j / dt by central differences of densities on an independently
    // integrated trajectory must match -D_j
    let m = lorentz_two();
    let k = Vector3::new(0.3, -0.2, 1.1);
    let s = Stream::new(26).transverse_state(&m, &k, true);
    let g = build_generator(&m, k);
    let y0: Vec<C> = s.to_vector().iter().copied().collect();
    let h = 1e-3;
    let t = 2.0;
    let ys = common::gbs_grid(common::mode_rhs(&m, k), &y0, &[t - h, t, t + h], 1e-14);
    let at = |y: &Vec<C>| {
        let st = ModeState::from_vector(&nalgebra::DVector::from_vec(y.clone()), s.layout());
        densities(&m, &k, 0.0, &derivative_ladder(&g, &st, 3)).unwrap()
    };
    let (lm, l0, lp) = (at(&ys[0]), at(&ys[1]), at(&ys[2]));
    for j in 0..3 {
        let rate = (lp.orders[j].lyapunov - lm.orders[j].lyapunov) / (2.0 * h);
        let d = l0.orders[j].decay;
        assert!((rate + d).abs() <= 1e-6 * (d.abs() + l0.orders[j].lyapunov), "order {j}: {rate} vs {d}");
    }
    // the oracle's energy agrees with the library's order-0 density
    assert!((common::lyapunov_density(&m, &ys[1]) - l0.orders[0].lyapunov).abs() < 1e-13);
}

#[test]
fn lyapunov_density_is_non_increasing() {
    let mut rng = Stream::new(27);
    let times = log_space(1e-2, 200.0, 60);
    for kind in [MaterialKind::Drude, MaterialKind::Lorentz, MaterialKind::Mixed] {
        for _ in 0..5 {
            let m = rng.material(kind, true);
            let k = Vector3::new(rng.range(-3.0, 3.0), rng.range(-3.0, 3.0), rng.range(-3.0, 3.0));
            let s = rng.transverse_state(&m, &k, true);
            let rows = ledger_trajectory(&m, &k, &s, &times).unwrap();
            let l0 = order_densities(&m, &s).lyapunov;
            let mut prev = l0;
            for r in &rows {
                let l = r.ledger.orders[0].lyapunov;
                assert!(l <= prev * (1.0 + 1e-12) + 1e-14 * l0);
                prev = l;
            }
        }
    }
}

#[test]
fn homogeneity() {
    let m = lorentz_two();
    let k = Vector3::new(0.5, 0.1, -0.4);
    let s = Stream::new(28).transverse_state(&m, &k, true);
    let c = C::new(1.5, -2.0);
    let g = build_generator(&m, k);
    let a = densities(&m, &k, 0.0, &derivative_ladder(&g, &s, 3)).unwrap();
    let b = densities(&m, &k, 0.0, &derivative_ladder(&g, &s.scaled(c), 3)).unwrap();
    for j in 0..3 {
        assert!((b.orders[j].lyapunov - c.norm_sqr() * a.orders[j].lyapunov).abs() < 1e-13 * b.orders[j].lyapunov);
        assert!((b.orders[j].decay - c.norm_sqr() * a.orders[j].decay).abs() < 1e-13 * b.orders[j].decay);
    }
    let times = default_time_grid(&lemma_form(&m, &k).unwrap());
    let r1 = lemma_ratio(&m, &k, &s, &times).unwrap();
    let r2 = lemma_ratio(&m, &k, &s.scaled(c), &times).unwrap();
    assert!((r1 - r2).abs() < 1e-10 * r1);
    let e0 = cv(1.0, 0.0, 0.0);
    let kx = Vector3::new(0.0, 0.0, 1.0);
    let i1 = initial_bound_ratio(&m, &kx, &e0, &Vector3::zeros()).unwrap();
    let i2 = initial_bound_ratio(&m, &kx, &(e0 * C::new(2.0, 0.0)), &Vector3::zeros()).unwrap();
    assert!((i1 - i2).abs() < 1e-14 * i1);
}

#[test]
fn lemma_errors() {
    let cons =
        MaterialParams::new(1.0, 1.0, vec![Oscillator::new(1.0, 0.0, 0.0)], vec![Oscillator::new(1.0, 0.0, 1.0)])
            .unwrap();
    let k = Vector3::new(1.0, 0.0, 0.0);
    let s = ModeState::from_fields(&cons, cv(0.0, 1.0, 0.0), Vector3::zeros());
    assert!(matches!(lemma_ratio(&cons, &k, &s, &[0.0, 1.0]), Err(LedgerError::NotStronglyDissipative)));
    assert!(matches!(gronwall_certificate(&cons, &k, &s, &[0.0, 1.0], 1.0), Err(LedgerError::NotStronglyDissipative)));
    let m = MaterialParams::lorentz_toy(0.5);
    let s = ModeState::from_fields(&m, cv(1.0, 0.0, 0.0), Vector3::zeros());
    assert!(matches!(lemma_ratio(&m, &Vector3::zeros(), &s, &[0.0, 1.0]), Err(LedgerError::ZeroWaveVectorForLorentz)));
    let z = ModeState::zeros(1, 1);
    assert!(matches!(lemma_ratio(&m, &k, &z, &[0.0, 1.0]), Err(LedgerError::ZeroDecayDensity(_))));
    assert!(matches!(
        initial_bound_ratio(&m, &k, &Vector3::zeros(), &Vector3::zeros()),
        Err(LedgerError::ZeroInitialData)
    ));
}

#[test]
fn drude_lemma_constant_and_gronwall() {
    let m = MaterialParams::drude_toy();
    let mut rng = Stream::new(29);
    let mut sup: f64 = 0.0;
    let mut cases = Vec::new();
    for r in log_space(0.1, 10.0, 9) {
        let k = Vector3::new(r, 0.0, 0.0);
        let times = default_time_grid(&lemma_form(&m, &k).unwrap());
        for _ in 0..4 {
            let s = rng.transverse_state(&m, &k, true);
            sup = sup.max(lemma_ratio(&m, &k, &s, &times).unwrap());
            cases.push((k, s, times.clone()));
        }
    }
    assert!(sup.is_finite() && sup > 0.0);
    let sigma = 1.0 / sup;
    for (k, s, times) in &cases {
        let cert = gronwall_certificate(&m, k, s, times, sigma).unwrap();
        assert!(cert.bound_holds, "{k:?}: {}", cert.worst_excess);
        let a = spectral_abscissa(&build_generator(&m, *k), Subspace::Transverse).unwrap();
        let bound = 2.0 * cert.weight * a.abs();
        assert!(cert.sigma_fit <= bound * 1.02, "{} vs {}", cert.sigma_fit, bound);
    }
}

#[test]
fn unweighted_lorentz_ratio_blows_up_at_small_k() {
    let m = MaterialParams::lorentz_toy(0.5);
    let s_at = |r: f64| {
        let k = Vector3::new(0.0, 0.0, r);
        (k, ModeState::from_fields(&m, cv(1.0, 0.0, 0.0), cv(0.0, 1.0, 0.0)))
    };
    let unweighted = |r: f64| {
        let (k, s) = s_at(r);
        let mut form = lemma_form(&m, &k).unwrap();
        let times = default_time_grid(&form);
        form.weight = bracket_sq(&k);
        ratio_profile(&m, &k, &s, &times, &form).unwrap().into_iter().fold(0.0, f64::max)
    };
    assert!(unweighted(0.05) >= 10.0 * unweighted(1.0));
}
