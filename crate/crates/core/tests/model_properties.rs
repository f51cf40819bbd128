use locsvm_core::geometry::build_rnet;
use locsvm_core::model::train_localized;
use locsvm_core::solver::clip;
use locsvm_core::tvsvm::{build_nets, train_tv};
use locsvm_core::{DecisionFunction, LocalizedModel, MarginDistribution, NetMode, SolverOptions};

fn small_model() -> (MarginDistribution, LocalizedModel) {
    let dist = MarginDistribution::halfspace(2, 1.0, 1.0).unwrap();
    let data = dist.sample(600, 3);
    let p = build_rnet(2, 0.5, 3).unwrap();
    let m = p.num_cells();
    let model = train_localized(
        &data,
        &p,
        &vec![1e-3; m],
        &vec![0.3; m],
        &SolverOptions::default(),
    )
    .unwrap();
    (dist, model)
}

#[test]
fn clipped_prediction_clips_the_raw_score() {
    let (dist, model) = small_model();
    for x in dist.sample_x(1000, 8) {
        assert_eq!(
            model.predict_clipped(&x).unwrap(),
            clip(model.predict_raw(&x).unwrap())
        );
    }
}

#[test]
fn model_text_round_trips() {
    let (dist, model) = small_model();
    let text = model.to_text();
    let back = LocalizedModel::from_text(&text).unwrap();
    assert_eq!(back.to_text(), text);
    for x in dist.sample_x(200, 9) {
        assert_eq!(
            back.predict_raw(&x).unwrap(),
            model.predict_raw(&x).unwrap()
        );
    }
}

#[test]
fn tv_selects_the_validation_minimizer() {
    let dist = MarginDistribution::sphere(2, 0.5, 1.0, 1.0).unwrap();
    let data = dist.sample(800, 5);
    let p = build_rnet(2, 0.6, 5).unwrap();
    let nets = build_nets(data.len() / 2, p.radius(), NetMode::Geometric, 4).unwrap();
    let (_, report) = train_tv(&data, &p, &nets, &SolverOptions::default()).unwrap();
    for j in 0..p.num_cells() {
        let rows: Vec<_> = report.rows.iter().filter(|r| r.cell == j).collect();
        let chosen: Vec<_> = rows.iter().filter(|r| r.chosen).collect();
        assert_eq!(chosen.len(), 1, "cell {j}");
        if let Some(best) = chosen[0].val_risk {
            for r in &rows {
                assert!(best <= r.val_risk.unwrap(), "cell {j}");
            }
        }
        assert_eq!(report.chosen[j], (chosen[0].lambda, chosen[0].gamma));
    }
}

#[test]
fn tv_is_identical_across_thread_pools() {
    let dist = MarginDistribution::halfspace(2, 1.0, 1.0).unwrap();
    let data = dist.sample(600, 6);
    let p = build_rnet(2, 0.5, 6).unwrap();
    let nets = build_nets(data.len() / 2, p.radius(), NetMode::Geometric, 3).unwrap();
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            let (model, report) = train_tv(&data, &p, &nets, &SolverOptions::default()).unwrap();
            (model.to_text(), report.to_csv())
        })
    };
    assert_eq!(run(1), run(4));
}
