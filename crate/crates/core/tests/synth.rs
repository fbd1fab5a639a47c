use scriptscreen::behavior_log::{log_to_jsonl, manifest_to_json, parse_log, parse_manifest};
use scriptscreen::eval_harness::{
    group_statistics, synth_dataset, write_dataset, CaseSource, Dataset, MemoryDataset, SynthSpec, TTestMode,
};
use scriptscreen::pipeline::PipelineConfig;
use scriptscreen::Label;

fn spec(n_asd: usize, n_td: usize, seed: u64) -> SynthSpec {
    SynthSpec {
        n_asd,
        n_td,
        seed,
        ..Default::default()
    }
}

#[test]
fn same_seed_is_byte_identical() {
    let a = synth_dataset(&spec(3, 3, 11));
    let b = synth_dataset(&spec(3, 3, 11));
    let c = synth_dataset(&spec(3, 3, 12));
    let text = |v: &[scriptscreen::eval_harness::LabeledCase]| {
        v.iter()
            .map(|c| log_to_jsonl(&c.log) + &manifest_to_json(&c.manifest))
            .collect::<String>()
    };
    assert_eq!(text(&a), text(&b));
    assert_ne!(text(&a), text(&c));
}

#[test]
fn generated_logs_pass_validation() {
    for case in synth_dataset(&spec(2, 2, 5)) {
        let log = parse_log(&log_to_jsonl(&case.log)).unwrap();
        let manifest = parse_manifest(&manifest_to_json(&case.manifest)).unwrap();
        assert_eq!(log, case.log);
        assert_eq!(manifest, case.manifest);
    }
}

#[test]
fn groups_differ_in_the_expected_direction() {
    let ds = MemoryDataset::new(synth_dataset(&spec(25, 25, 1))).unwrap();
    let stats = group_statistics(&ds, &PipelineConfig::default(), TTestMode::Welch).unwrap();
    let get = |name: &str| stats.iter().find(|s| s.variable == name).unwrap();
    let look = get("look_latency_s");
    assert!(look.td_mean < look.asd_mean, "{look:?}");
    assert_eq!((look.td_n, look.asd_n), (25, 25));
}

#[test]
fn dataset_round_trips_through_disk() {
    let cases = synth_dataset(&spec(2, 3, 9));
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &cases).unwrap();
    let ds = Dataset::open(dir.path()).unwrap();
    assert_eq!(ds.entries().len(), 5);
    assert_eq!(ds.entries().iter().filter(|e| e.label == Label::ASD).count(), 2);
    for c in &cases {
        let (log, manifest) = ds.load(&c.manifest.case_id).unwrap();
        assert_eq!(log, c.log);
        assert_eq!(manifest, c.manifest);
    }
}
