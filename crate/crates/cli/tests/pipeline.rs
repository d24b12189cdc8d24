use dglm_cli::config::{SamplePolicy, Window};
use dglm_cli::synth::{synth_generate, Scenario, SynthParams, Synthetic};
use dglm_cli::{run_pipeline, run_pipeline_with_threads, CliError, ObservationTable, RunResult, Stage};

fn synth(scenario: Scenario, steps: usize, horizons: usize, samples: usize, seed: u64) -> Synthetic {
    let params = SynthParams {
        steps,
        horizons,
        samples,
        ..Default::default()
    };
    synth_generate(scenario, &params, seed)
}

fn csv_rows(r: &RunResult, file: &str) -> Vec<Vec<String>> {
    r.files[file]
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

// Bonferroni over every KS test the run reports.
fn pit_suite_passes(r: &RunResult) -> bool {
    let n = r.summary.pit.len() as f64;
    !r.summary.pit.is_empty() && r.summary.pit.iter().all(|k| k.p_value > 0.01 / n)
}

#[test]
fn retail_run_writes_every_output_and_is_calibrated() {
    let s = synth(Scenario::RetailDcmm, 180, 7, 1000, 3);
    let r = run_pipeline(&s.config, &s.table, Stage::Evaluate).unwrap();
    for f in ["filtered.csv", "quantiles.csv", "samples.csv", "metrics.csv"] {
        assert!(r.files.contains_key(f), "missing {f}");
    }

    // Every (series, origin) has k horizons of non-decreasing quantiles.
    let w = r.window.unwrap();
    let k = s.config.horizons as i64;
    let q = csv_rows(&r, "quantiles.csv");
    let origins = (w.start..=w.end).filter(|t| t + k <= w.end).count();
    assert!(q.len() >= s.config.series.len() * origins * k as usize);
    for row in &q {
        let qs: Vec<f64> = row[5..].iter().map(|v| v.parse().unwrap()).collect();
        assert_eq!(qs.len(), s.config.output.quantiles.len());
        assert!(qs.windows(2).all(|p| p[0] <= p[1]), "{row:?}");
    }

    assert!(pit_suite_passes(&r), "{:#?}", r.summary.pit);
    assert!(r.summary.mean_zape.values().all(|z| z.is_finite()));
}

#[test]
fn plain_run_without_externals() {
    let s = synth(Scenario::PlainPoisson, 150, 3, 500, 8);
    assert!(s.config.external.is_empty());
    let r = run_pipeline(&s.config, &s.table, Stage::Evaluate).unwrap();
    assert!(pit_suite_passes(&r), "{:#?}", r.summary.pit);
    let one = r.metric("pit", &s.config.series[0].name, 1).unwrap();
    assert!(one.values.iter().all(|u| (0.0..=1.0).contains(u)));
}

#[test]
fn filter_stage_writes_only_filtered_states() {
    let s = synth(Scenario::PlainPoisson, 40, 3, 200, 1);
    let r = run_pipeline(&s.config, &s.table, Stage::Filter).unwrap();
    assert_eq!(r.files.keys().collect::<Vec<_>>(), ["filtered.csv"]);
    let rows = csv_rows(&r, "filtered.csv");
    let times: std::collections::BTreeSet<_> = rows.iter().map(|r| r[1].clone()).collect();
    assert_eq!(times.len(), 40);
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let s = synth(Scenario::RetailDcmm, 60, 4, 300, 5);
    let a = run_pipeline_with_threads(&s.config, &s.table, Stage::Evaluate, Some(1)).unwrap();
    let b = run_pipeline_with_threads(&s.config, &s.table, Stage::Evaluate, Some(3)).unwrap();
    assert_eq!(a.files, b.files);
    assert_eq!(a.summary, b.summary);
}

#[test]
fn seed_changes_forecast_samples_but_not_filtering() {
    let mut s = synth(Scenario::PlainPoisson, 50, 2, 200, 2);
    s.config.output.samples = SamplePolicy::All;
    let a = run_pipeline(&s.config, &s.table, Stage::Forecast).unwrap();
    s.config.seed += 1;
    let b = run_pipeline(&s.config, &s.table, Stage::Forecast).unwrap();
    assert_eq!(a.files["filtered.csv"], b.files["filtered.csv"]);
    assert_ne!(a.files["samples.csv"], b.files["samples.csv"]);
}

#[test]
fn window_outside_the_data_writes_nothing() {
    let mut s = synth(Scenario::PlainPoisson, 30, 2, 100, 2);
    s.config.window = Some(Window { start: 500, end: 600 });
    let r = run_pipeline(&s.config, &s.table, Stage::Evaluate).unwrap();
    assert!(r.files.is_empty());
}

#[test]
fn network_model_beats_decoupled_baseline() {
    let s = synth(Scenario::NetworkFlows, 365, 1, 100, 4);
    let r = run_pipeline(&s.config, &s.table, Stage::Evaluate).unwrap();
    assert!(r.summary.lpdr_terminal["all"] < 0.0, "{:?}", r.summary.lpdr_terminal);
    assert!(r.files["lpdr.csv"].lines().count() > 365);
}

#[test]
fn unaligned_series_are_a_data_error() {
    let params = SynthParams {
        steps: 30,
        series: 2,
        ..Default::default()
    };
    let s = synth_generate(Scenario::PlainPoisson, &params, 2);
    let mut buf = Vec::new();
    s.table.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let first = s.config.series[0].name.clone();
    // Drop the first time point of one series.
    let mut dropped = false;
    let trimmed: String = text
        .lines()
        .filter(|l| {
            let skip = !dropped && l.starts_with(&format!("{first},"));
            dropped |= skip;
            !skip
        })
        .map(|l| format!("{l}\n"))
        .collect();
    let table = ObservationTable::from_reader(trimmed.as_bytes()).unwrap();
    let err = run_pipeline(&s.config, &table, Stage::Filter).unwrap_err();
    assert!(matches!(err, CliError::Data(_)), "{err}");
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn negative_count_is_a_data_error() {
    let s = synth(Scenario::PlainPoisson, 20, 2, 100, 2);
    let mut table = s.table.clone();
    let name = s.config.series[0].name.clone();
    table.series.get_mut(&name).unwrap().values[5] = Some(-2.0);
    let err = run_pipeline(&s.config, &table, Stage::Filter).unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");
}
