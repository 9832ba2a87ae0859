use veralign::eval::{mean, run_experiment, run_grid, run_on_dataset, AlignParams, BaseSource, ExperimentConfig};
use veralign::graph::{GraphConfig, IsolatedPolicy, NormalizeOptions};
use veralign::predict::BaselineParams;
use veralign::synth::{generate, SynthConfig};
use veralign::{Dataset, Error, PredictionMatrix};

fn small() -> Dataset {
    generate(&SynthConfig {
        n_articles: 120,
        n_users: 400,
        seed: 5,
        ..Default::default()
    })
    .unwrap()
}

fn base() -> BaseSource {
    BaseSource::Baseline(BaselineParams {
        iterations: 50,
        ..Default::default()
    })
}

#[test]
fn zero_steps_match_the_prompt_only_variant() {
    let ds = small();
    let seeds: Vec<u64> = (0..6).collect();
    let k0 = AlignParams {
        k: 0,
        ..Default::default()
    };
    let plain = AlignParams {
        use_tpl: false,
        use_graph: false,
        ..Default::default()
    };
    let a = run_on_dataset(&ds, &base(), 8, &seeds, &k0, true).unwrap();
    let b = run_on_dataset(&ds, &base(), 8, &seeds, &plain, true).unwrap();
    for (x, y) in a.runs.iter().zip(&b.runs) {
        assert_eq!(x.predictions, y.predictions);
        // without the graph, labels are the base argmax
        assert_eq!(y.aligned_accuracy, y.base_accuracy);
    }
}

#[test]
fn reports_are_internally_consistent() {
    let ds = small();
    let seeds = [11, 3, 7, 19, 2, 5, 13];
    let report = run_on_dataset(&ds, &base(), 16, &seeds, &AlignParams::default(), false).unwrap();
    for r in &report.runs {
        assert_eq!(r.n_train, 16);
        assert_eq!(r.n_eval, ds.n_articles() - 16);
        assert!((0.0..=100.0).contains(&r.base_accuracy));
        assert!((0.0..=100.0).contains(&r.aligned_accuracy));
    }
    let aligned: Vec<f64> = report.runs.iter().map(|r| r.aligned_accuracy).collect();
    let naive = aligned.iter().sum::<f64>() / aligned.len() as f64;
    assert!((report.summary.mean_aligned_accuracy - naive).abs() <= 1e-12);
    assert_eq!(report.summary.mean_aligned_accuracy, mean(&aligned));
    assert!(report.summary.wilcoxon.is_some() || report.runs.iter().all(|r| r.aligned_accuracy == r.base_accuracy));

    let mut reversed = seeds;
    reversed.reverse();
    let again = run_on_dataset(&ds, &base(), 16, &reversed, &AlignParams::default(), false).unwrap();
    assert_eq!(
        again.summary.mean_aligned_accuracy,
        report.summary.mean_aligned_accuracy
    );
    assert_eq!(again.summary.mean_base_accuracy, report.summary.mean_base_accuracy);
    for (x, y) in report.runs.iter().zip(again.runs.iter().rev()) {
        assert_eq!(x, y);
    }
}

#[test]
fn zero_rows_are_counted() {
    let ds = small();
    let params = AlignParams {
        graph: GraphConfig {
            t_u: 1000,
            options: NormalizeOptions {
                zero_diagonal: true,
                isolated: IsolatedPolicy::Zero,
            },
            ..Default::default()
        },
        ..Default::default()
    };
    let report = run_on_dataset(&ds, &base(), 8, &[1], &params, false).unwrap();
    assert_eq!(report.runs[0].zero_rows, ds.n_articles() - 8);
}

#[test]
fn failing_seed_is_named() {
    let ds = small();
    match run_on_dataset(&ds, &base(), 200, &[42], &AlignParams::default(), false) {
        Err(Error::Run { seed, .. }) => assert_eq!(seed, 42),
        other => panic!("unexpected {other:?}"),
    }
    assert!(run_on_dataset(&ds, &base(), 8, &[1, 1], &AlignParams::default(), false).is_err());
    assert!(run_on_dataset(&ds, &base(), 8, &[], &AlignParams::default(), false).is_err());
}

#[test]
fn fixed_prediction_files_drive_the_pipeline() {
    let ds = small();
    let dir = tempfile::tempdir().unwrap();
    let mut articles = Vec::new();
    let mut engagements = Vec::new();
    ds.write_articles(&mut articles).unwrap();
    ds.write_engagements(&mut engagements).unwrap();
    std::fs::write(dir.path().join("articles.jsonl"), articles).unwrap();
    std::fs::write(dir.path().join("engagements.csv"), engagements).unwrap();
    let p = PredictionMatrix::uniform(ds.n_articles(), 2);
    let mut buf = Vec::new();
    p.write(&ds, &mut buf).unwrap();
    std::fs::write(dir.path().join("predictions.csv"), buf).unwrap();

    let config_path = dir.path().join("experiment.toml");
    std::fs::write(
        &config_path,
        r#"
n = 8
seeds = [1, 2, 3, 4, 5, 6]

[data]
articles = "articles.jsonl"
engagements = "engagements.csv"
predictions = "predictions.csv"

[align]
use_tpl = false

[grid]
k = [0, 2]
"#,
    )
    .unwrap();
    let config = ExperimentConfig::load(&config_path).unwrap();
    let report = run_experiment(&config).unwrap();
    // uniform base rows all predict real, so base accuracy is the real share
    let real_share = 100.0 * (ds.n_articles() / 2 - 4) as f64 / (ds.n_articles() - 8) as f64;
    assert!(report.runs.iter().all(|r| r.base_accuracy == real_share));

    // pseudo labeling is off: uniform rows would all tie at the threshold and harden to real
    let grid = run_grid(&config).unwrap();
    assert_eq!(grid.len(), 2);
    assert_eq!(grid[0].params.k, 0);
    assert!(grid[1].summary.mean_aligned_accuracy > grid[0].summary.mean_aligned_accuracy);
}

#[test]
fn unknown_config_keys_are_rejected() {
    assert!(toml::from_str::<ExperimentConfig>("n = 8\nbogus = 1\n").is_err());
}
