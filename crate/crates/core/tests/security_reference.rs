use polqkd_core::link::TallyBlock;
use polqkd_core::polarization::Basis;
use polqkd_core::reference::RUNS;
use polqkd_core::security::{
    analyze, asymptotic_bounds, decoy_bounds, lambda_ec, secret_key_length, LengthInputs, SecurityParams,
};

fn entropy(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    -x * x.log2() - (1.0 - x) * (1.0 - x).log2()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn key_length_from_tabulated_intermediates() {
    let p = SecurityParams::default();
    for run in &RUNS {
        let t = run.tally();
        let nz = t.n_basis(Basis::Z);
        let lam = 1.16 * nz * entropy(t.m_basis(Basis::Z) / nz);
        assert!(rel(lambda_ec(&t, &p).unwrap(), lam) < 1e-12);

        // Hand-evaluated key length with vacuum contribution dropped.
        let raw =
            run.s_z1_l * (1.0 - entropy(run.phi_z_u)) - lam - 6.0 * (19.0f64 / 1e-9).log2() - (2.0f64 / 1e-9).log2();
        let want = raw.max(0.0).floor() * 50e6 / 1e10;
        let inputs = LengthInputs {
            s_z0_l: 0.0,
            s_z1_l: run.s_z1_l,
            phi_z_u: run.phi_z_u,
        };
        let got = secret_key_length(&inputs, lam, &p).unwrap();
        assert!((got.skr - want).abs() <= 1e-9 * want.max(1.0), "{} km", run.distance_km);
        assert!(
            rel(got.skr, run.skr_bps) < 0.10,
            "{} km: {} vs {}",
            run.distance_km,
            got.skr,
            run.skr_bps
        );
    }
}

#[test]
fn decoy_bounds_track_reference_table() {
    let p = SecurityParams::default();
    for run in &RUNS {
        let b = decoy_bounds(&run.tally(), &run.source(), &p).unwrap();
        assert!(
            rel(b.s_z1_l, run.s_z1_l) < 0.15,
            "{} km s1 {}",
            run.distance_km,
            b.s_z1_l
        );
        assert!(
            rel(b.phi_z_u, run.phi_z_u) < 0.15,
            "{} km phi {}",
            run.distance_km,
            b.phi_z_u
        );
        let r = analyze(&run.tally(), &run.source(), &p).unwrap();
        assert!(!r.floored);
    }
}

#[test]
fn finite_bounds_are_conservative() {
    let p = SecurityParams::default();
    for run in &RUNS {
        let f = decoy_bounds(&run.tally(), &run.source(), &p).unwrap();
        let a = asymptotic_bounds(&run.tally(), &run.source()).unwrap();
        assert!(f.s_z1_l <= a.s_z1_l);
        assert!(f.s_z0_l <= a.s_z0_l);
        assert!(f.phi_z_u >= a.phi_z_u);
    }
}

#[test]
fn bounds_approach_asymptotic_with_more_data() {
    let p = SecurityParams::default();
    for run in &RUNS {
        let a = asymptotic_bounds(&run.tally(), &run.source()).unwrap();
        let mut last = f64::INFINITY;
        for scale in [1.0, 10.0, 100.0, 1e4] {
            let t: TallyBlock = run.tally().scaled(scale);
            let f = decoy_bounds(&t, &run.source(), &p).unwrap();
            let gap = (a.s_z1_l - f.s_z1_l / scale).abs() / a.s_z1_l + (f.phi_z_u - a.phi_z_u).abs();
            assert!(gap < last, "{} km at x{scale}", run.distance_km);
            last = gap;
        }
        assert!(last < 0.01, "{} km gap {last}", run.distance_km);
    }
}

#[test]
fn bad_tallies_are_rejected() {
    let p = SecurityParams::default();
    let run = &RUNS[0];
    let mut t = run.tally();
    t.n[1][1] = 0.0;
    t.m[1][1] = 0.0;
    assert!(decoy_bounds(&t, &run.source(), &p).is_err());
    let mut t = run.tally();
    t.m[0][0] = t.n[0][0] + 1.0;
    assert!(analyze(&t, &run.source(), &p).is_err());
    let mut src = run.source();
    src.nu = src.mu;
    assert!(decoy_bounds(&run.tally(), &src, &p).is_err());
}
