use qmgm::benchmark::{generate_independent, generate_sample, true_graph, DgpKind, DgpVariant};
use qmgm::midcdf::{estimate_all, LogitConfig, NodeDesign};
use qmgm::model::{Dataset, QuantileGrid, VariableKind, VariableSpec};
use qmgm::penalized::{fit_node_quantile, fit_pseudo_response_path, NodeFitConfig, NodeProblem};
use qmgm::selection::{path_graphs, select_graph, QmgmConfig, ResidualScale, SelectionCriterion};
use qmgm::{fit_qmgm, model::log_spaced_lambdas};
use statrs::distribution::{ContinuousCDF, StudentsT};

fn main_sample(n: usize, seed: u64) -> (Dataset, qmgm::EstimatedGraph) {
    generate_sample(&DgpVariant::new(DgpKind::Main, n, seed).unwrap()).unwrap()
}

#[test]
fn simulated_truth_matches_generator() {
    let (data, truth) = main_sample(200, 3);
    assert_eq!(truth, true_graph());
    assert_eq!(truth.edge_count(), 12);
    assert_eq!(data.p(), 10);
    for j in 0..10 {
        let kind = data.spec(j).kind;
        assert_eq!(kind == VariableKind::Continuous, j < 5, "column {j}");
        if kind.is_discrete() {
            assert!(data.column(j).iter().all(|v| v.fract() == 0.0 && *v >= 0.0));
        }
    }
}

/// Row-averaged step-one CDF of the heavy-tailed first column should track
/// the Student t(3) marginal it was drawn from.
#[test]
fn averaged_conditional_cdf_tracks_t3_marginal() {
    let (raw, _) = main_sample(1000, 17);
    let data = raw.validate_and_standardize().unwrap();
    let st = data.standardization()[0].unwrap();
    let models = estimate_all(&data, &LogitConfig::default()).unwrap();
    let m = &models[0];
    let t3 = StudentsT::new(0.0, 1.0, 3.0).unwrap();
    let zs = m.thresholds();
    let mut worst: f64 = 0.0;
    for (h, &z_std) in zs.iter().enumerate() {
        let z = st.center + st.scale * z_std;
        if !(-3.0..=3.0).contains(&z) {
            continue;
        }
        let avg = (0..data.n())
            .map(|i| {
                let pi = m.row_pi(i);
                // recover F from mid-probabilities: F_h = 2 pi_h - F_{h-1}
                let mut f = 0.0;
                for p in &pi[..=h] {
                    f = 2.0 * p - f;
                }
                f
            })
            .sum::<f64>()
            / data.n() as f64;
        worst = worst.max((avg - t3.cdf(z)).abs());
    }
    assert!(worst < 0.05, "max deviation {worst}");
}

/// Under a logistic location model the step-one logits are correctly
/// specified, so an unpenalized fit recovers `a + b x + logit(tau)`.
#[test]
fn unpenalized_fits_recover_logistic_location_quantile() {
    use rand::{Rng, SeedableRng};
    let (a, b) = (0.5, -1.5);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let x: Vec<f64> = (0..2000).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let y: Vec<f64> = x
        .iter()
        .map(|&xi| {
            let u: f64 = rng.gen_range(1e-9..1.0 - 1e-9);
            a + b * xi + (u / (1.0 - u)).ln()
        })
        .collect();
    let specs = vec![VariableSpec::new("x", VariableKind::Continuous), VariableSpec::new("y", VariableKind::Continuous)];
    let data = Dataset::new(specs, vec![x, y]).unwrap().validate_and_standardize().unwrap();
    let (s1, s2) = (data.standardization()[0].unwrap(), data.standardization()[1].unwrap());
    let models = estimate_all(&data, &LogitConfig::default()).unwrap();
    let design = NodeDesign::for_node(&data, 1);
    let problem = NodeProblem::new(data.column(1), &design, &models[1], data.spec(1).link).unwrap();
    let to_raw = |b0: f64, b1: f64| {
        let slope = b1 * s2.scale / s1.scale;
        (s2.center + s2.scale * b0 - slope * s1.center, slope)
    };
    for tau in [0.25, 0.5, 0.75] {
        let intercept: f64 = a + f64::ln(tau / (1.0 - tau));
        let mut cfg = NodeFitConfig::new(tau, 0.0);
        cfg.max_iterations = 5000;
        let implicit = fit_node_quantile(&problem, &cfg, None).unwrap();
        let pseudo = fit_pseudo_response_path(&problem, &[1e-12], &cfg, false).unwrap().remove(0);
        for (name, fit) in [("pseudo", pseudo), ("implicit", implicit)] {
            let (c0, c1) = to_raw(fit.intercept, fit.beta[0]);
            assert!((c1 - b).abs() < 0.1, "{name} tau {tau}: slope {c1} vs {b}");
            assert!((c0 - intercept).abs() < 0.1, "{name} tau {tau}: intercept {c0} vs {intercept}");
        }
    }
}

#[test]
fn independent_columns_select_an_empty_graph() {
    let (raw, truth) = generate_independent(3, 3, 800, 2).unwrap();
    assert_eq!(truth.edge_count(), 0);
    let data = raw.validate_and_standardize().unwrap();
    let cfg = QmgmConfig::new(QuantileGrid::standard(3).unwrap(), log_spaced_lambdas(0.001, 5.0, 30).unwrap());
    let cube = fit_qmgm(&data, &cfg).unwrap();
    let path = path_graphs(&cube, cfg.nonzero_tolerance);
    assert_eq!(path[0].edge_count(), 0);
    let crit = SelectionCriterion::from_name("bicp", data.p()).unwrap();
    let sel = select_graph(&cube, &data, crit, ResidualScale::Linear, cfg.nonzero_tolerance).unwrap();
    assert_eq!(sel.graph.edge_count(), 0, "selected lambda {}", sel.lambda);
}

#[test]
fn schema_links_follow_variable_kind() {
    let specs = vec![
        VariableSpec::new("c", VariableKind::Continuous),
        VariableSpec::new("b", VariableKind::Binary),
        VariableSpec::new("k", VariableKind::Count),
    ];
    let data = Dataset::new(specs, vec![vec![0.5, 1.5, -2.0], vec![0.0, 1.0, 1.0], vec![0.0, 3.0, 7.0]])
        .unwrap()
        .validate_and_standardize()
        .unwrap();
    assert_eq!(data.spec(0).link.as_str(), "identity");
    assert_eq!(data.spec(1).link.as_str(), "logit");
    assert_eq!(data.spec(2).link.as_str(), "log");
    assert_eq!(data.column(2), &[0.0, 3.0, 7.0]);
}
