use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use biosage_core::prompts::{PromptRegistry, TemplateId};

fn manifest_dir() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn rendered_bodies_match_golden_files() {
    let bindings: BTreeMap<String, BTreeMap<String, String>> =
        serde_json::from_str(&fs::read_to_string(manifest_dir().join("tests/golden/bindings.json")).unwrap()).unwrap();
    let reg = PromptRegistry::builtin();
    for id in TemplateId::ALL {
        let b = &bindings[id.as_str()];
        let pairs: Vec<(&str, &str)> = b.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
        let r = reg.render(id, &pairs).unwrap();
        let got = format!("{}\n<<<BODY>>>\n{}\n", r.system, r.body);
        let want = fs::read_to_string(manifest_dir().join(format!("tests/golden/{id}.txt"))).unwrap();
        assert_eq!(got, want, "golden mismatch for {id}");
    }
}

#[test]
fn checksums_match_manifest() {
    let text = fs::read_to_string(manifest_dir().join("prompts/checksums.txt")).unwrap();
    let recorded: BTreeMap<&str, &str> = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| l.split_once(' ').unwrap())
        .collect();
    assert_eq!(recorded.len(), 8);
    let reg = PromptRegistry::builtin();
    for id in TemplateId::ALL {
        assert_eq!(reg.checksum(id), recorded[id.as_str()], "checksum drift for {id}");
    }
}
