//! Qualitative and quantitative properties of the integrated flow.

mod common;

use common::data_path;
use krflow::cli::{setup, validate, Setup};
use krflow::config::ExperimentConfig;
use krflow::flow::{run, Gauge, Integrator};
use krflow::monitors::{
    curvature_constant, default_barrier_constant, BConfig, Monitor, MonitorContext,
};
use krflow::calabi::ricci_eigenvalues;
use krflow::{FlowState64, MonitorRecord64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn load(name: &str, nodes: usize) -> Setup {
    let mut cfg = ExperimentConfig::load(&data_path(name)).unwrap();
    cfg.solver.nodes = nodes;
    let v = validate(&cfg).unwrap();
    setup(&cfg, &v).unwrap()
}

fn monitor(su: &Setup) -> Monitor<f64> {
    let c = curvature_constant(&su.model, &su.problem.initial).unwrap();
    let a = default_barrier_constant(c, su.singular_time);
    let ctx = MonitorContext::new(&su.problem, su.problem.initial.clone(), BConfig::new(10.0, a).unwrap())
        .unwrap();
    Monitor::new(ctx)
}

fn fixed_steps(su: &Setup, gauge: Gauge, dt: f64, steps: usize) -> Vec<FlowState64> {
    let mut ctrl = su.control.clone();
    ctrl.gauge = gauge;
    let integ = Integrator::new(su.problem.clone(), ctrl).unwrap();
    let mut st = integ.initial_state().unwrap();
    let mut out = vec![st.clone()];
    for _ in 0..steps {
        st = integ.step_fixed(&st, dt).unwrap();
        out.push(st.clone());
    }
    out
}

#[test]
fn geometry_does_not_depend_on_gauge() {
    let su = load("f1.cfg", 128);
    let zero = fixed_steps(&su, Gauge::Zero, 5e-3, 20);
    let norm = fixed_steps(&su, Gauge::Normalized, 5e-3, 20);
    let (mut mz, mut mn) = (monitor(&su), monitor(&su));
    for (a, b) in zero.iter().zip(&norm) {
        let ra: MonitorRecord64 = mz.observe(a).unwrap();
        let rb = mn.observe(b).unwrap();
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-10 * (1.0 + x.abs());
        for (x, y) in [
            (ra.diam_fiber, rb.diam_fiber),
            (ra.r_sup, rb.r_sup),
            (ra.rm_sup, rb.rm_sup),
            (ra.vr_sup, rb.vr_sup),
            (ra.vr_inf, rb.vr_inf),
            (ra.trace0_scaled_sup, rb.trace0_scaled_sup),
            (ra.trace_sigma_sup, rb.trace_sigma_sup),
        ] {
            assert!(close(x, y), "t = {}: {x} vs {y}", ra.t);
        }
        assert_eq!(ra.q_argmax, rb.q_argmax);
    }
}

#[test]
fn endpoints_move_at_class_rates() {
    let su = load("f1.cfg", 256);
    let (alpha, beta) = su.problem.rates;
    for st in fixed_steps(&su, Gauge::Zero, 1e-4, 10) {
        let (da, db) = st.endpoint_velocities(&su.model);
        assert!((da + alpha).abs() < 1e-3, "ȧ = {da}");
        assert!((db + beta).abs() < 1e-3, "ḃ = {db}");
    }
}

#[test]
fn fiber_gap_shrinks_linearly() {
    let su = load("f1.cfg", 256);
    let states = fixed_steps(&su, Gauge::Zero, 1e-2, 20);
    let gap = |s: &FlowState64| {
        let (a, b) = s.measured_endpoints().unwrap();
        b - a
    };
    let first = &states[0];
    let last = states.last().unwrap();
    let slope = (gap(last) - gap(first)) / (last.t - first.t);
    assert!((slope + 2.0).abs() < 1e-3, "slope {slope}");
}

#[test]
fn product_fiber_diameter_decays_monotonically() {
    let su = load("product.cfg", 256);
    let mut m = monitor(&su);
    let out = run(&su.problem, &su.control, |st| m.observe(st).unwrap()).unwrap();
    let d: Vec<f64> = out.records.iter().map(|r| r.diam_fiber).collect();
    assert!(d.windows(2).all(|w| w[1] < w[0]));
    let t_end = out.records.last().unwrap().t;
    let ratio = d.last().unwrap() / d[0];
    let expected = ((su.singular_time - t_end) / su.singular_time).sqrt();
    assert!((ratio / expected - 1.0).abs() < 1e-3, "{ratio} vs {expected}");
}

#[test]
fn time_derivative_is_minus_ricci() {
    let su = load("f1.cfg", 256);
    let integ = Integrator::new(su.problem.clone(), su.control.clone()).unwrap();
    let mut ctrl = su.control.clone();
    ctrl.eps_stop = 1e-2;
    let out = run(&su.problem, &ctrl, |st| st.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let st = &out.records[rng.gen_range(0..out.records.len())];
        let tau = 1e-6 * (su.singular_time - st.t);
        let next = integ.step_fixed(st, tau).unwrap();
        let ric = ricci_eigenvalues(&su.model, &st.profile).unwrap();
        let d2u0 = st.profile.d2u();
        let d2u1 = next.profile.d2u();
        let (mut eb, mut ef, mut sb, mut sf) = (0f64, 0f64, 0f64, 0f64);
        for i in 0..d2u0.len() {
            let vb = (next.profile.du()[i] - st.profile.du()[i]) / tau;
            let vf = (d2u1[i] - d2u0[i]) / tau;
            eb = eb.max((vb + ric.base[i]).abs());
            ef = ef.max((vf + ric.fiber[i]).abs());
            sb = sb.max(ric.base[i].abs());
            sf = sf.max(ric.fiber[i].abs());
        }
        assert!(eb < 1e-4 * sb && ef < 1e-4 * sf, "t = {}: {eb:e}/{sb:e}, {ef:e}/{sf:e}", st.t);
    }
}

/// Self-convergence of the endpoint drift `(a, b)_measured − (a, b)_class`
/// against a 1024-node reference on a common fixed time grid, so that the
/// temporal error cancels.
#[test]
fn endpoint_drift_converges_under_refinement() {
    let drift = |nodes: usize| -> Vec<(f64, f64)> {
        let su = load("f1.cfg", nodes);
        fixed_steps(&su, Gauge::Zero, 2e-3, 50)
            .iter()
            .map(|st| {
                let (a, b) = st.measured_endpoints().unwrap();
                let (ap, bp) = su.problem.predicted_endpoints(st.t);
                (a - ap, b - bp)
            })
            .collect()
    };
    let reference = drift(1024);
    let defect = |nodes: usize| {
        drift(nodes)
            .iter()
            .zip(&reference)
            .map(|(x, r)| (x.0 - r.0).abs().max((x.1 - r.1).abs()))
            .fold(0.0, f64::max)
    };
    let (coarse, fine) = (defect(256), defect(512));
    assert!(coarse >= 3.0 * fine, "endpoint drift defect {coarse:e} at 256, {fine:e} at 512");
}
