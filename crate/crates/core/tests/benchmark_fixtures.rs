use std::path::PathBuf;

use biosage_core::eval::{load_benchmark, BenchmarkFormat};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/bench").join(name)
}

#[test]
fn every_adapter_loads_its_fixture() {
    for (file, format) in [
        ("native.jsonl", "xdisc"),
        ("litqa2.jsonl", "litqa2"),
        ("gpqa.csv", "gpqa"),
        ("wmdp.jsonl", "wmdp"),
        ("hle.jsonl", "hle"),
    ] {
        let format: BenchmarkFormat = format.parse().unwrap();
        let items = load_benchmark(&fixture(file), format).unwrap();
        assert_eq!(items.len(), 3, "{file}");
        for it in &items {
            assert!((2..=26).contains(&it.choices.len()) && it.gold_index < it.choices.len(), "{file}: {}", it.item_id);
        }
    }
}

#[test]
fn gold_answers_survive_normalization() {
    let native = load_benchmark(&fixture("native.jsonl"), BenchmarkFormat::Native).unwrap();
    assert_eq!(native[0].choices[native[0].gold_index], "ATAC-seq");
    let lq = load_benchmark(&fixture("litqa2.jsonl"), BenchmarkFormat::Litqa2).unwrap();
    assert_eq!(lq[0].choices[lq[0].gold_index], "PTEN");
    assert!(lq.iter().all(|i| i.allows_unsure));
    let gpqa = load_benchmark(&fixture("gpqa.csv"), BenchmarkFormat::Gpqa).unwrap();
    assert_eq!(gpqa[2].choices[gpqa[2].gold_index], "Kinases");
    assert_eq!(gpqa[0].item_id, "rec001");
    let wmdp = load_benchmark(&fixture("wmdp.jsonl"), BenchmarkFormat::Wmdp).unwrap();
    assert_eq!(wmdp[2].choices[wmdp[2].gold_index], "Pressurized steam");
    let hle = load_benchmark(&fixture("hle.jsonl"), BenchmarkFormat::Hle).unwrap();
    assert_eq!(hle[1].choices, ["AUG", "UAA", "UGA"]);
}
