//! Regenerate the bundled synthetic payslip fixture:
//! `cargo run -p layoutlab-core --example make_fixture [DIR]`

use std::collections::BTreeMap;
use std::path::PathBuf;

use layoutlab::corpus::{payslips_labels, write_corpus};
use layoutlab::synth::{synth_pages, SynthConfig};

fn main() -> layoutlab::Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/payslips_synth")
    });
    std::fs::create_dir_all(&dir)?;
    let splits = [("train", 40, 11), ("test", 12, 12)];
    let mut manifest = BTreeMap::new();
    for (name, pages, seed) in splits {
        let (p, m) = synth_pages(&SynthConfig { pages, seed, ..Default::default() });
        write_corpus(dir.join(format!("{name}.jsonl")), &p)?;
        manifest.insert(name, m);
    }
    std::fs::write(dir.join("labels.txt"), payslips_labels().to_text())?;
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    println!("wrote fixture to {}", dir.display());
    Ok(())
}
