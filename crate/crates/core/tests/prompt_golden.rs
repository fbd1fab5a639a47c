use std::path::Path;

use scriptscreen::behavior_log::load_log;
use scriptscreen::pipeline::{compile_case, PipelineConfig};
use scriptscreen::prompt_builder::{build_prompt, PromptConfig, PromptTemplates};
use scriptscreen::script_compiler::TemplateTable;

fn dir(rel: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join(rel)
}

#[test]
fn default_prompt_matches_golden() {
    let (log, manifest) = load_log(
        &dir("fixtures/rn_look_speak.log.jsonl"),
        &dir("fixtures/rn_look_speak.manifest.json"),
    )
    .unwrap();
    let a = compile_case(&log, &manifest, &PipelineConfig::default(), &TemplateTable::default(), None, None).unwrap();
    let bundle = build_prompt(&a.script, &[], &PromptTemplates::default(), &PromptConfig::default()).unwrap();
    let golden = std::fs::read_to_string(dir("golden/default_prompt.txt")).unwrap();
    assert_eq!(bundle.render(), golden);
}
