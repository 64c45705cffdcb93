use hotpate_core::harness::{
    run_alpha_sweep, run_lemma_transfer_check, run_sampling_compare, AlphaSweepConfig, ExperimentReport,
    LemmaConfig, OutputFormat, RunSettings, SamplingCompareConfig, SuiteSpec,
};

fn in_pool<F: FnOnce() -> ExperimentReport + Send>(threads: usize, f: F) -> ExperimentReport {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

fn bytes(report: &ExperimentReport) -> Vec<u8> {
    let mut out = Vec::new();
    report.write_rows(&mut out, OutputFormat::Csv).unwrap();
    if let Some(table) = &report.table {
        table.write(&mut out, OutputFormat::Jsonl).unwrap();
    }
    out
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let settings = RunSettings::new(7, 20_000);
    let lemma = LemmaConfig::new(SuiteSpec::preset("mixture0.1").unwrap());
    let a = in_pool(1, || run_lemma_transfer_check(&lemma, &settings).unwrap());
    let b = in_pool(4, || run_lemma_transfer_check(&lemma, &settings).unwrap());
    assert_eq!(bytes(&a), bytes(&b));

    let compare = SamplingCompareConfig::preset("planetz").unwrap();
    let a = in_pool(1, || run_sampling_compare(&compare, &settings).unwrap());
    let b = in_pool(3, || run_sampling_compare(&compare, &settings).unwrap());
    assert_eq!(bytes(&a), bytes(&b));

    let sweep = AlphaSweepConfig {
        alphas: vec![0.1, 0.6],
        ..AlphaSweepConfig::default()
    };
    let small = RunSettings::new(7, 2_000);
    let a = in_pool(1, || run_alpha_sweep(&sweep, &small).unwrap());
    let b = in_pool(5, || run_alpha_sweep(&sweep, &small).unwrap());
    assert_eq!(bytes(&a), bytes(&b));
}

#[test]
fn different_seeds_differ() {
    let lemma = LemmaConfig::new(SuiteSpec::preset("uniform4").unwrap());
    let a = run_lemma_transfer_check(&lemma, &RunSettings::new(1, 5_000)).unwrap();
    let b = run_lemma_transfer_check(&lemma, &RunSettings::new(2, 5_000)).unwrap();
    assert_ne!(bytes(&a), bytes(&b));
}
