//! Correspondence and relaxation properties at l = 154 that need full
//! quantum and ensemble runs.

use spinchaos::classical_map::{angles_to_state, trajectory, ClassicalParams};
use spinchaos::cli::s_for_ratio;
use spinchaos::correspondence::*;
use spinchaos::liouville::{ensemble_evolve, marginal_pz_classical, Ensemble, MomentSeries};
use spinchaos::quantum_spin::{build_floquet, observable_series, ObservableSeries, QuantumState, SpinQuantum};
use spinchaos::Exec;

const A: f64 = 5.0;

fn spin(j: f64) -> SpinQuantum {
    SpinQuantum::new(j).unwrap()
}

fn runs(s: SpinQuantum, l: SpinQuantum, gamma: f64, ic: [f64; 4], n_traj: usize, kicks: usize) -> (ObservableSeries, MomentSeries) {
    let a = ic.map(f64::to_radians);
    let f = build_floquet(s, l, A, gamma / s.magnitude()).unwrap();
    let psi = QuantumState::coherent(s, l, a[0], a[1], a[2], a[3]);
    let q = observable_series(Exec::Parallel, &psi, &f, kicks, &[]).unwrap();
    let e = Ensemble::matched(s, l, a, n_traj, 1).unwrap();
    let p = ClassicalParams::new(A, gamma, l.magnitude() / s.magnitude()).unwrap();
    (q, ensemble_evolve(Exec::Parallel, &e, p, kicks))
}

#[test]
fn regular_state_difference_stays_bounded() {
    let (q, c) = runs(spin(140.0), spin(154.0), 1.215, [5.0; 4], 1_000_000, 200);
    let d = difference_series(&q, &c).unwrap();
    let initial = d.delta[0];
    let (worst, at) = d.delta.iter().enumerate().fold((0.0, 0), |acc, (n, &v)| if v > acc.0 { (v, n) } else { acc });
    assert!(
        worst < 10.0 * initial,
        "delta L_z reaches {worst:.4} at kick {at}, {:.0} times its initial value {initial:.2e} (initial SE {:.2e})",
        worst / initial,
        d.classical_se[0]
    );
}

#[test]
fn ehrenfest_difference_saturates_while_ensemble_difference_stays_small() {
    let (s, l) = (spin(140.0), spin(154.0));
    let ic = [20.0f64, 40.0, 160.0, 130.0];
    let (q, c) = runs(s, l, 1.215, ic, 200_000, 200);
    let d = difference_series(&q, &c).unwrap();
    let a = ic.map(f64::to_radians);
    let p = ClassicalParams::new(A, 1.215, l.magnitude() / s.magnitude()).unwrap();
    let traj = trajectory(angles_to_state(a[0], a[1], a[2], a[3]), p, 200);
    let ehrenfest = (0..=200)
        .map(|n| (q.kicks[n].l_z - l.magnitude() * traj[n].l_hat[2]).abs())
        .fold(0.0, f64::max);
    let ensemble = max_difference(&d, 200);
    assert!(ehrenfest > 0.5 * l.magnitude(), "Ehrenfest difference only reaches {ehrenfest:.2}");
    assert!(ensemble < 0.1 * l.magnitude(), "ensemble difference reaches {ensemble:.2}");
    assert!(ehrenfest > 10.0 * ensemble);
}

#[test]
fn break_scaling_and_direct_fit_agree() {
    let ic = [20.0f64, 40.0, 160.0, 130.0];
    let mut records = Vec::new();
    let mut direct = None;
    for lv in [11.0, 22.0, 44.0, 88.0, 154.0, 220.0] {
        let l = spin(lv);
        let s = s_for_ratio(l, 1.1);
        let (q, c) = runs(s, l, 1.215, ic, 1_000_000, 25);
        let d = difference_series(&q, &c).unwrap();
        records.push(break_time(&d, 0.1));
        if lv == 154.0 {
            let w = growth_window(&d, GROWTH_CEILING, SMOOTHING, NOISE_SIGMAS).unwrap();
            direct = Some(fit_growth_exponent(&d, w, FitOptions::default()).unwrap().lambda);
        }
    }
    let scaling = fit_break_scaling(&records).unwrap().lambda;
    let direct = direct.unwrap();
    assert!((direct - scaling).abs() <= 0.25 * scaling, "direct {direct:.4} vs break-time scaling {scaling:.4}");
}

#[test]
fn global_chaos_ensemble_reaches_microcanonical_limit() {
    let (s, l) = (spin(140.0), spin(154.0));
    let ic = [45.0f64, 70.0, 135.0, 70.0];
    let (q, c) = runs(s, l, 2.835, ic, 1_000_000, 200);
    let qv = q.l_var_norm();
    let w = variance_window(&qv, VARIANCE_CEILING).unwrap();
    let lambda_w = variance_growth_fit(&qv, None, l, w, FitOptions::default()).unwrap().lambda;
    let t_sat = saturation_time(lambda_w, l.j());
    let last = c.len() - 1;
    assert!(last as f64 >= 5.0 * t_sat, "run of {last} kicks is shorter than 5 t_sat = {:.1}", 5.0 * t_sat);
    let k = c.kicks[last].l;
    assert!(k.mean[2].abs() < 5.0 * k.se[2], "<L~z> = {:.2e} +- {:.2e}", k.mean[2], k.se[2]);
    assert!((1.0 - k.var_norm).abs() < 5.0 * k.var_se, "variance {:.8} +- {:.2e}", k.var_norm, k.var_se);
}

#[test]
fn classical_marginal_is_normalized() {
    let (s, l) = (spin(10.0), spin(11.0));
    let a = [20.0f64, 40.0, 160.0, 130.0].map(f64::to_radians);
    let e = Ensemble::matched(s, l, a, 50_000, 4).unwrap();
    let p = marginal_pz_classical(&e.states(), l);
    assert_eq!(p.len(), l.dim());
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(p.iter().all(|&x| x >= 0.0));
}
