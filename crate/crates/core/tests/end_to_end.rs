mod common;

use common::{rel_gap, small_trial};
use stepwedge::data::{read_csv, write_csv, PeriodLayout};
use stepwedge::variance::variance;
use stepwedge::{
    compute_weights, estimate, generate_trial, validate, DgpSpec, ModelSpec, Reference, Scenario, WeightScheme,
};

#[test]
fn csv_round_trip_preserves_every_estimate() {
    let trial = generate_trial(&DgpSpec::new(Scenario::ScenarioII, 18, 2024), 0, WeightScheme::Uniform).unwrap();
    let mut buf = Vec::new();
    write_csv(&trial.dataset, &mut buf).unwrap();
    let back = read_csv(&buf[..], PeriodLayout::Full).unwrap();
    assert_eq!(back.cell_sizes(), trial.dataset.cell_sizes());
    assert_eq!(back.covariate_names(), trial.dataset.covariate_names());
    let spec = back.inferred_design().unwrap();
    assert_eq!(spec, trial.design);
    assert!(validate(&back, &spec).is_empty());
    let asg = back.adoption_assignment().unwrap();
    for scheme in WeightScheme::ALL {
        let wt = compute_weights(&back, scheme).unwrap();
        for model in ModelSpec::ALL {
            let a = estimate(&trial.dataset, model, scheme).unwrap();
            let b = estimate(&back, model, scheme).unwrap();
            assert_eq!(a.tau.to_bits(), b.tau.to_bits(), "{model:?} {scheme:?}");
            let v = variance(&b, &back, &wt, &spec, &asg, 0.05, Reference::Normal).unwrap();
            assert!(v.ci_db.0 < b.tau && b.tau < v.ci_db.1);
        }
    }
}

#[test]
fn unadjusted_is_a_weighted_difference_in_means() {
    for seed in 0..25 {
        let t = small_trial(seed);
        let ds = &t.dataset;
        for scheme in WeightScheme::ALL {
            let fit = estimate(ds, ModelSpec::Unadjusted, scheme).unwrap();
            for j in 1..=ds.num_rollout_periods() {
                let nj: usize = (0..ds.num_clusters()).map(|i| ds.cell(i, j).outcomes.len()).sum();
                let mut sums = [(0.0, 0.0); 2];
                for i in 0..ds.num_clusters() {
                    let cell = ds.cell(i, j);
                    let w = common::individual_weight(scheme, cell.outcomes.len(), nj);
                    let slot = &mut sums[cell.treated as usize];
                    slot.0 += w * cell.outcomes.iter().sum::<f64>();
                    slot.1 += w * cell.outcomes.len() as f64;
                }
                let direct = sums[1].0 / sums[1].1 - sums[0].0 / sums[0].1;
                assert!(rel_gap(fit.delta[j - 1], direct) < 1e-10);
            }
        }
    }
}

#[test]
fn fit_serializes_with_labeled_coefficients() {
    let t = small_trial(5);
    let fit = estimate(&t.dataset, ModelSpec::AncovaIII, WeightScheme::InverseCellSize).unwrap();
    let json = serde_json::to_value(&fit).unwrap();
    assert_eq!(json["model"], "a3");
    assert_eq!(json["scheme"], "cell");
    assert_eq!(json["delta"].as_array().unwrap().len(), t.dataset.num_rollout_periods());
    assert!(json["coefficients"]["treated:x1"].is_number());
}
