use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use m3col::data::{load_dataset, Manifest};
use m3col::experiment::{run_training, RunConfig};

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// Fills `dir` with small random files in the layout a manifest expects.
fn fake_release(dir: &Path, manifest: &Manifest) {
    let classes = manifest.num_classes.unwrap();
    for split in [&manifest.splits.train, &manifest.splits.test] {
        let rows = split.rows.unwrap();
        let labels: String = (0..rows).map(|i| format!("{}.0\n", i % classes)).collect();
        fs::write(dir.join(&split.labels), labels).unwrap();
        for (k, file) in split.features.values().enumerate() {
            let mut text = String::new();
            for i in 0..rows {
                let signal = (i % classes) as f64;
                writeln!(text, "{},{},{}", signal + 0.01 * k as f64, (i * 7 % 11) as f64, -signal).unwrap();
            }
            fs::write(dir.join(file), text).unwrap();
        }
    }
}

#[test]
fn presets_parse_and_train_on_their_layout() {
    for (preset, classes, train_rows) in [("rosmap", 2, 245), ("brca", 5, 612)] {
        let config = RunConfig::load(&configs().join(format!("{preset}.toml")), &[]).unwrap();
        config.validate().unwrap();
        let mut manifest = Manifest::read(&config.manifest_path().unwrap()).unwrap();
        assert_eq!(manifest.modalities, ["mrna", "meth", "mirna"]);
        assert_eq!(manifest.num_classes, Some(classes));
        assert_eq!(manifest.splits.train.rows, Some(train_rows));
        assert!(!config.reference.ablation_acc.is_empty());

        let dir = tempfile::tempdir().unwrap();
        fake_release(dir.path(), &manifest);
        manifest.root = None;
        let data = load_dataset(dir.path(), &manifest).unwrap();
        assert_eq!(data.train.len(), train_rows);
        assert_eq!(data.num_classes(), classes);

        let manifest_path = dir.path().join("manifest.toml");
        fs::write(&manifest_path, toml_manifest(&manifest)).unwrap();
        let overrides = [
            format!("data.manifest={:?}", manifest_path.display().to_string()),
            "optim.epochs=2".to_string(),
        ];
        let run = RunConfig::load(&configs().join(format!("{preset}.toml")), &overrides).unwrap();
        let outcome = run_training(&run).unwrap();
        assert_eq!(outcome.report.test.unimodal.len(), 3);
        assert!(outcome.report.test.crosstab.is_none());
        assert_eq!(outcome.report.test.fused.auc.is_some(), classes == 2);
    }
}

fn toml_manifest(m: &Manifest) -> String {
    let split = |name: &str, s: &m3col::data::SplitFiles| {
        let features: Vec<String> = s.features.iter().map(|(k, v)| format!("{k} = {:?}", v.display().to_string())).collect();
        format!("[splits.{name}]\nlabels = {:?}\nfeatures = {{ {} }}\n", s.labels.display().to_string(), features.join(", "))
    };
    format!(
        "name = {:?}\nmodalities = {:?}\n{}{}",
        m.name,
        m.modalities,
        split("train", &m.splits.train),
        split("test", &m.splits.test)
    )
}
