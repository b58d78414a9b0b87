//! Worked values for small parameter sets, each checked against an
//! independent computation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use repeller::dynamics::{
    basin_sample, birkhoff_near_p, g_eval_plain, orbit, return_time, DoublingMap, Dynamics,
    OrbitConfig,
};
use repeller::{
    CircleMap, CirclePoint, Construction, ConstructionParams, Error, Frac, InducedMap, Piece,
    Variant,
};

fn full() -> CircleMap {
    CircleMap::new(ConstructionParams::full_default()).unwrap()
}

fn physical() -> CircleMap {
    CircleMap::new(ConstructionParams::physical_default()).unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

#[test]
fn accepted_and_rejected_parameters() {
    let c = Construction::new(ConstructionParams::full(0.5, 0.375, 0.7)).unwrap();
    let d = c.derived();
    assert!(close(d.r, 0.125, 1e-15));
    assert!(close(d.m1, 4.0 / 3.0, 1e-15));
    assert!(close(d.s.unwrap(), 1.0 / 3.0, 1e-15));

    let err = Construction::new(ConstructionParams::full(0.5, 0.2, 0.7)).unwrap_err();
    assert!(matches!(err, Error::InvalidParam { .. }), "{err}");

    let c = Construction::new(ConstructionParams::physical_default()).unwrap();
    assert!(close(c.derived().a_eff, 0.75f64.powf(0.25), 1e-15));
    assert!(close(c.derived().r, 0.15, 1e-15));

    let err = Construction::new(ConstructionParams::physical(0.5, 0.375, 0.25, 0.2, 0.04)).unwrap_err();
    assert!(err.to_string().contains("physical variant requires q < 1/2"), "{err}");
}

#[test]
fn p_ratios_and_slopes() {
    let f = Construction::new(ConstructionParams::full_default()).unwrap();
    let p = Construction::new(ConstructionParams::physical_default()).unwrap();
    assert_eq!(f.p_ratio(2).unwrap(), 0.75);
    assert!(close(p.p_ratio(2).unwrap(), 1.0 - 0.08 * 0.75f64.powf(0.4), 1e-15));
    for c in [&f, &p] {
        for n in 2..c.n_max() {
            let (now, next) = (c.p_ratio(n).unwrap(), c.p_ratio(n + 1).unwrap());
            // 1 − 2⁻ⁿ rounds to 1 once 2⁻ⁿ drops below half an ulp
            if c.p_gap(n + 1).unwrap() > f64::EPSILON {
                assert!(now < next, "n = {n}");
            } else {
                assert!(now <= next, "n = {n}");
            }
        }
    }
    assert!(close(f.slope_m(1).unwrap(), 4.0 / 3.0, 1e-15));
    assert!(close(f.slope_m(400).unwrap(), 7.0 / 3.0, 1e-12));
    // mₙ = |Kₙ⁻|/|Lₙ| from endpoints
    for c in [&f, &p] {
        for n in 2..=50 {
            let below = c.k_offset_left(n);
            let l = c.p_ratio(n).unwrap() * (c.k_offset_right(n) - c.k_offset_left(n));
            assert!(close(c.slope_m(n).unwrap(), below / l, 1e-12), "n = {n}");
        }
    }
}

#[test]
fn partition_cells() {
    let c = Construction::new(ConstructionParams::full_default()).unwrap();
    assert!(close(c.k_left(1), 0.625, 1e-15) && c.k_right(1) == 1.0);
    assert!(close(c.k_left(2), 0.5875, 1e-15) && close(c.k_right(2), 0.625, 1e-15));
    assert!(close(c.j_left(2), 0.375, 1e-15) && close(c.j_right(2), 0.5, 1e-15));
    assert!(close(c.j_left(3), 0.28125, 1e-15) && close(c.j_right(3), 0.375, 1e-15));
    for big_n in [1, 5, 30, 100] {
        let sum: f64 = (1..=big_n).map(|n| c.k_width(n)).sum();
        let tail = c.derived().r * c.derived().a_eff.powi(big_n as i32 - 1);
        assert!(close(sum + tail, 0.5, 1e-14));
    }
    assert_eq!(c.locate_i2(1.0).unwrap().0, 1);
    assert_eq!(c.locate_i2(0.6).unwrap().0, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for n in 1..=60 {
        for _ in 0..100 {
            let x = c.k_left(n) + rng.random::<f64>() * c.k_width(n);
            if x > c.k_left(n) && x <= c.k_right(n) {
                assert_eq!(c.locate_i2(x).unwrap().0, n);
            }
        }
    }
}

#[test]
fn first_branch_values() {
    let map = full();
    let f1 = map.f1();
    assert_eq!(f1.eval(0.0).unwrap(), 0.0);
    assert!(close(f1.eval(0.5).unwrap(), 1.0, 1e-15));
    assert!(close(f1.eval(0.375).unwrap(), 0.5, 1e-15));
    let y = 1.0 - 0.5 * 0.5f64.powf(1.0 / 3.0);
    assert!(close(f1.eval(7.0 / 16.0).unwrap(), y, 1e-15));
    assert!(close(f1.inv(y).unwrap(), 7.0 / 16.0, 1e-12));
    assert!(close(f1.inv(0.5).unwrap(), 0.375, 1e-15));
    assert!(close(f1.deriv(0.0).unwrap(), 4.0 / 3.0, 1e-15));
    assert_eq!(physical().f1().deriv(0.4).unwrap(), 0.0);

    let mut last = 0.0;
    for k in 4..=12 {
        let x = 0.5 - 10f64.powi(-k);
        let d = f1.deriv(x).unwrap();
        assert!(d > last);
        last = d;
        let h = 1e-3 * 10f64.powi(-k);
        let (xp, xm) = (x + h, x - h);
        let fd = (f1.eval(xp).unwrap() - f1.eval(xm).unwrap()) / (xp - xm);
        assert!(close(fd, d, 1e-6), "k = {k}: {fd} vs {d}");
    }

    // f₁(x) is only known to an ulp, which costs ε/f₁'(x) in x where the cap is flat
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for map in [full(), physical()] {
        let f1 = map.f1();
        let q = f1.q();
        for _ in 0..10_000 {
            let x = rng.random::<f64>() * q;
            let err = (f1.inv(f1.eval(x).unwrap()).unwrap() - x).abs();
            let bound = 1e-12f64.max(2.0 * f64::EPSILON / f1.deriv(x).unwrap());
            assert!(err <= bound, "{} x = {x:e}: {err:e}", map.variant());
        }
    }
}

#[test]
fn inverse_iterates() {
    let map = full();
    let f1 = map.f1();
    assert_eq!(f1.inv_iter(0.3, 0).unwrap(), 0.3);
    // f₁⁻¹(1) = q, f₁⁻¹(q) = b
    assert!(close(f1.inv_iter(1.0, 2).unwrap(), 0.375, 1e-15));
    assert!(close(f1.inv_iter(1.0, 3).unwrap(), 0.375 * 0.75, 1e-15));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let y = rng.random::<f64>();
        let mut naive = y;
        for k in 1..=40 {
            naive = f1.inv(naive).unwrap();
            assert!((f1.inv_iter(y, k).unwrap() - naive).abs() <= 1e-13);
        }
    }
}

#[test]
fn return_map_values() {
    let map = full();
    let induced = map.induced();
    let c = induced.construction();
    assert!(close(induced.eval(1.0).unwrap(), 1.0, 1e-15));
    // F(z₂⁻) = 1, approached like a cube root
    for g in [1e-30, 1e-60, 1e-120] {
        let (image, _) = induced.eval_local(2, Frac::Right(g)).unwrap();
        assert!((1.0 - induced.image_value(image)) <= 2.0 * g.cbrt());
    }
    for n in 2..=20 {
        let br = induced.branch(n).unwrap();
        let l_end = c.k_left(n) + br.p * br.width;
        let expected = c.q() + c.slope_m(n).unwrap() * (l_end - c.k_left(n));
        assert!(close(induced.eval(l_end).unwrap(), expected, 1e-12));
        assert!(close(expected, c.q() + c.derived().r * c.derived().a_eff.powi(n as i32 - 1), 1e-12));
    }
    let x = c.k_left(5) + 0.3 * c.k_width(5) * c.p_ratio(5).unwrap();
    assert_eq!(induced.piece_at(x).unwrap(), (5, Piece::L));
    assert_eq!(induced.deriv(x).unwrap(), c.slope_m(5).unwrap());
}

#[test]
fn quadratic_cap_slope_near_the_gluing_point() {
    let map = physical();
    let induced = map.induced();
    let c = induced.construction();
    for n in [2, 3, 6] {
        let br = induced.branch(n).unwrap();
        let m_prev = c.slope_m(n - 1).unwrap();
        for frac in [1e-3, 1e-2, 0.3] {
            let h = frac * br.right_width * br.width;
            let x = c.k_right(n) - h;
            assert_eq!(induced.piece_at(x).unwrap().1, Piece::R);
            let d = induced.deriv(x).unwrap();
            assert!(close(d, 2.0 * m_prev * m_prev * h, 1e-6), "n = {n}: {d}");
        }
    }
}

#[test]
fn branches_are_convex_or_continuous() {
    let map = full();
    let induced = map.induced();
    let c = induced.construction();
    let br = induced.branch(1).unwrap();
    assert!(close(br.slope_left, 4.0 / 3.0, 1e-15));

    let (lo, w) = (c.k_left(3), c.k_width(3));
    let mut last = 0.0;
    for i in 1..1000 {
        let d = induced.deriv(lo + w * i as f64 / 1000.0).unwrap();
        assert!(d >= last * (1.0 - 1e-12), "i = {i}");
        last = d;
    }

    let map = physical();
    let induced = map.induced();
    let c = induced.construction();
    let br = induced.branch(3).unwrap();
    for (_, iv) in br.pieces(c.k_left(3), c.k_right(3), Variant::Physical).iter().skip(1) {
        let a = induced.eval(iv.lo - 1e-15).unwrap();
        let b = induced.eval(iv.lo).unwrap();
        assert!((a - b).abs() <= 1e-13);
    }
    let (lo, w) = (c.k_left(3), c.k_width(3));
    let mut last = c.q();
    for i in 1..=1000 {
        let y = induced.eval(lo + w * i as f64 / 1000.0).unwrap();
        assert!(y > last);
        last = y;
    }
}

#[test]
fn middle_images() {
    let map = physical();
    let induced = map.induced();
    let c = induced.construction();
    let m2 = induced.image_middle(2).unwrap();
    assert!(close(m2.lo, c.q() + c.derived().r * c.derived().a_eff, 1e-12));
    let bound = 2.0 * c.derived().mn_base;
    for n in 2..=c.n_max() {
        assert!(induced.middle_ratio(n).unwrap() > bound, "n = {n}");
    }
    assert!(induced.middle_ratio(50).unwrap() >= 10.0 * induced.middle_ratio(5).unwrap());
}

#[test]
fn second_branch_values() {
    let map = full();
    let c = map.construction().clone();
    assert!(close(map.f2_eval(1.0).unwrap(), 1.0, 1e-15));
    assert!(close(map.f2_eval(c.k_left(2) + 1e-14).unwrap(), 0.375, 1e-12));
    assert!(close(map.f2_deriv(0.8).unwrap(), 4.0 / 3.0, 1e-15));

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for map in [full(), physical()] {
        let c = map.construction().clone();
        for n in 1..=40 {
            for _ in 0..1000 {
                let x = c.k_left(n) + rng.random::<f64>() * c.k_width(n);
                if x <= c.k_left(n) {
                    continue;
                }
                let y = map.f2_eval(x).unwrap();
                assert!(y >= c.j_left(n) - 1e-15 && y <= c.j_right(n) + 1e-15, "n = {n}");
            }
        }
    }

    // physical: f₂' at cell midpoints falls below 1e-3
    let map = physical();
    let c = map.construction().clone();
    let mid = |n: usize| map.f2_deriv_local(n, Frac::Left(0.5)).unwrap();
    assert!((2..60).all(|n| mid(n + 1) < mid(n)));
    assert!(mid(60) < 1e-3, "{}", mid(60));
    let _ = c;
}

#[test]
fn graph_pieces_compose() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for map in [full(), physical()] {
        let c = map.construction().clone();
        for n in 1..=25 {
            for _ in 0..100 {
                let x = c.k_left(n) + rng.random::<f64>() * c.k_width(n);
                if x <= c.k_left(n) {
                    continue;
                }
                assert_eq!(map.graph_piece(n, n, x).unwrap(), map.f2_eval(x).unwrap());
                assert!(close(map.graph_piece(n, 1, x).unwrap(), map.induced().eval(x).unwrap(), 1e-10));
                // φ_{a,b₂} = f^{b₁−b₂} ∘ φ_{a,b₁}
                let b1 = rng.random_range(1..=n);
                let b2 = rng.random_range(1..=b1);
                let mut y = map.graph_piece(n, b1, x).unwrap();
                for _ in 0..b1 - b2 {
                    y = map.f_eval_plain(y).unwrap();
                }
                assert!(close(y, map.graph_piece(n, b2, x).unwrap(), 1e-10), "n = {n}, {b1} → {b2}");
            }
        }
    }
}

#[test]
fn circle_map_values() {
    for map in [full(), physical()] {
        let q = map.construction().q();
        assert_eq!(map.f_eval_plain(0.0).unwrap(), 0.0);
        assert!(map.f_eval(CirclePoint::plain(q)).unwrap().is_fixed_point());
        let m1 = q / map.construction().b();
        assert!(close(map.f_deriv_plain(0.0).unwrap(), m1, 1e-15));
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let y = rng.random::<f64>();
            let left = map.f1().inv(y).unwrap();
            let right = map.f2_inv(y).unwrap();
            assert!(left <= q && right >= q);
            assert!((map.f_eval_plain(left).unwrap() - y).abs() <= 1e-10);
            assert!((map.f_eval_plain(right).unwrap() - y).abs() <= 1e-10);
        }
    }
    assert!(close(full().f_deriv_plain(0.0).unwrap(), 4.0 / 3.0, 1e-15));
}

#[test]
fn orbits_of_the_special_points() {
    let map = full();
    let dynamics = repeller::CircleDynamics::new(&map, repeller::OrbitMode::Structured);
    let cfg = OrbitConfig {
        n: 1000,
        window: 1000,
        ..OrbitConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let o = orbit(&dynamics, dynamics.initial(CirclePoint::plain(0.0)).unwrap(), &cfg, &mut rng).unwrap();
    assert!(o.points.iter().all(|p| p.value == 0.0));
    assert_eq!(o.stats.frac_near_p, 1.0);
    let o = orbit(&dynamics, dynamics.initial(CirclePoint::plain(0.5)).unwrap(), &cfg, &mut rng).unwrap();
    assert_eq!(o.points[0].value, 0.5);
    assert!(o.points[1..].iter().all(|p| p.value == 0.0));
    assert_eq!(birkhoff_near_p(&dynamics, CirclePoint::plain(0.0), 100, 0.05, 1).unwrap().fraction, 1.0);
}

#[test]
fn return_times_match_cells() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for map in [full(), physical()] {
        let c = map.construction().clone();
        for n in [1, 5] {
            for _ in 0..200 {
                let x = c.k_left(n) + rng.random::<f64>() * c.k_width(n);
                if x <= c.k_left(n) {
                    continue;
                }
                let (tau, y) = return_time(&map, CirclePoint::plain(x), 100).unwrap();
                assert_eq!(tau, n);
                assert!((y.value - map.induced().eval(x).unwrap()).abs() <= 1e-8);
            }
        }
    }
}

#[test]
fn induced_returns_of_the_physical_map() {
    let map = physical();
    let induced: &InducedMap = map.induced();
    let c = induced.construction();
    for n in 2..=20 {
        let br = induced.branch(n).unwrap();
        let x = c.k_left(n) + 0.5 * br.p * br.width;
        assert_eq!(g_eval_plain(&map, x, 10_000).unwrap().tau, 1);
        let x = c.k_right(n) - 0.5 * br.right_width * br.width;
        let g = g_eval_plain(&map, x, 10_000).unwrap();
        assert!(g.via_k1, "n = {n}");
        assert!(g.derivative > 1.0);
    }
}

#[test]
fn doubling_control_has_no_basin_at_p() {
    let est = basin_sample(&DoublingMap, 200, 100_000, 0.05, 0.5, 42).unwrap();
    assert_eq!(est.fraction, 0.0);
    let all = basin_sample(&DoublingMap, 20, 1000, 0.05, 0.0, 42).unwrap();
    assert_eq!(all.fraction, 1.0);
}

#[test]
fn doubling_histogram_is_flat() {
    let cfg = OrbitConfig {
        n: 10_000_000,
        bins: 64,
        ..OrbitConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let state = DoublingMap.random_state(&mut rng).unwrap();
    let o = orbit(&DoublingMap, state, &cfg, &mut rng).unwrap();
    assert_eq!(o.stats.histogram_total(), cfg.n);
    let p = 1.0 / 64.0;
    let mean = cfg.n as f64 * p;
    let se = (cfg.n as f64 * p * (1.0 - p)).sqrt();
    for (i, &count) in o.stats.histogram.iter().enumerate() {
        assert!((count as f64 - mean).abs() <= 5.0 * se, "bin {i}: {count}");
    }
}
