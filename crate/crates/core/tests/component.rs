use gridpinn::component::sm9::{eval_rhs, reference_domain, solve_network};
use gridpinn::component::{ComponentModel, Sm9Model, SmParams, SmState};
use gridpinn::sampling::lhs_sample;
use proptest::prelude::*;

fn nominal() -> SmState {
    SmState {
        delta: 0.0,
        omega: 0.0,
        e_q_prime: 1.0,
        e_d_prime: 0.0,
        e_fd: 1.08,
        r_f: 1.0,
        v_r: 1.105,
        p_m: 0.7048,
        p_sv: 0.7048,
    }
}

#[test]
fn rate_feedback_spot_check() {
    // dRf/dt = (-Rf + KF/TF * Efd) / TF = (-1 + 0.18 * 1.08) / 0.35
    let d = eval_rhs(0.0, &nominal(), &SmParams::default()).unwrap();
    assert!((d.r_f - (-0.8056 / 0.35)).abs() < 1e-12);
    assert!((d.r_f + 2.30171).abs() < 1e-5);
}

#[test]
fn d_axis_current_spot_check() {
    // Id = Vs / (Xd' + Xep) at delta = 0 with zero resistances.
    let (i_d, i_q) = solve_network(0.0, &SmParams::default()).unwrap();
    assert!((i_d - 1.0 / 0.332).abs() < 1e-12);
    assert!((i_d - 3.01205).abs() < 1e-5);
    assert_eq!(i_q, 0.0);
}

#[test]
fn trait_and_struct_forms_agree() {
    let model = Sm9Model::default();
    let s = SmState { delta: 0.4, omega: 0.1, ..nominal() };
    let mut dx = [0.0; 9];
    model.rhs(0.0, &s.to_array(), &mut dx).unwrap();
    let d = eval_rhs(0.0, &s, &model.params).unwrap();
    assert_eq!(dx, d.to_array());
}

#[test]
fn limited_field_freezes_outward_derivatives_only() {
    let model = Sm9Model::default();
    let mut x = nominal().to_array();
    x[6] = model.params.v_r_max;
    x[5] = 50.0;
    let mut raw = [0.0; 9];
    let mut lim = [0.0; 9];
    model.rhs(0.0, &x, &mut raw).unwrap();
    model.rhs_limited(0.0, &x, &mut lim).unwrap();
    assert!(raw[6] > 0.0);
    assert_eq!(lim[6], 0.0);
    for i in (0..9).filter(|&i| i != 6) {
        assert_eq!(lim[i], raw[i]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn jacobian_matches_central_differences(i in 0usize..64) {
        let model = Sm9Model::default();
        let ics = lhs_sample(&reference_domain(), 64, 5).unwrap();
        let x = ics.row(i).to_vec();
        let jac = model.jacobian(0.0, &x).unwrap();
        let h = 1e-6;
        for j in 0..9 {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[j] += h;
            xm[j] -= h;
            let (mut fp, mut fm) = (vec![0.0; 9], vec![0.0; 9]);
            model.rhs(0.0, &xp, &mut fp).unwrap();
            model.rhs(0.0, &xm, &mut fm).unwrap();
            for r in 0..9 {
                let fd = (fp[r] - fm[r]) / (2.0 * h);
                prop_assert!((fd - jac[r * 9 + j]).abs() <= 1e-5 * fd.abs().max(1.0), "d f{r}/d x{j}: {fd} vs {}", jac[r * 9 + j]);
            }
        }
    }

    #[test]
    fn vjp_is_transpose_product(i in 0usize..16, v in proptest::array::uniform9(-1.0..1.0f64)) {
        let model = Sm9Model::default();
        let x = lhs_sample(&reference_domain(), 16, 9).unwrap().row(i).to_vec();
        let jac = model.jacobian(0.0, &x).unwrap();
        let mut f = vec![0.0; 9];
        model.rhs(0.0, &x, &mut f).unwrap();
        let mut f2 = vec![0.0; 9];
        let mut vjp = vec![0.0; 9];
        model.rhs_vjp(0.0, &x, &v, &mut f2, &mut vjp).unwrap();
        prop_assert_eq!(&f, &f2);
        for j in 0..9 {
            let expect: f64 = (0..9).map(|r| jac[r * 9 + j] * v[r]).sum();
            prop_assert!((expect - vjp[j]).abs() <= 1e-12 * expect.abs().max(1.0));
        }
    }
}
