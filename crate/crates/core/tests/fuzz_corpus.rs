//! Replays the checked-in fuzz seed corpora through the decoders. Seeds that
//! are well-formed must decode; mangled ones must fail cleanly.

use std::path::{Path, PathBuf};

use cotrain::corruptions::SeverityTable;
use cotrain::data::Manifest;
use cotrain::image::{decode_raster, ValueSpace};
use cotrain::model::ModelCheckpoint;
use cotrain::saliency::SaliencyDensity;
use cotrain::training::NeuralResponseSet;

fn corpus(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut files: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    assert!(!files.is_empty(), "empty corpus {target}");
    files.into_iter().map(|p| (p.clone(), std::fs::read(&p).unwrap())).collect()
}

fn mangled(path: &Path) -> bool {
    matches!(path.file_name().and_then(|n| n.to_str()), Some("truncated" | "flipped"))
}

fn replay<T, E: std::fmt::Debug>(target: &str, decode: impl Fn(&[u8]) -> Result<T, E>) {
    for (path, bytes) in corpus(target) {
        let r = decode(&bytes);
        if mangled(&path) {
            // Must not panic; a flipped payload byte may still be valid.
            if path.ends_with("truncated") {
                assert!(r.is_err(), "{} decoded", path.display());
            }
        } else {
            r.unwrap_or_else(|e| panic!("{}: {e:?}", path.display()));
        }
    }
}

fn text(bytes: &[u8]) -> &str {
    std::str::from_utf8(bytes).unwrap()
}

#[test]
fn checkpoint_seeds() {
    replay("checkpoint", ModelCheckpoint::decode);
}

#[test]
fn response_seeds() {
    replay("responses", NeuralResponseSet::decode);
}

#[test]
fn raster_seeds() {
    replay("raster", |b| decode_raster(b, ValueSpace::Raw));
}

#[test]
fn png_density_seeds() {
    replay("png_density", |b| SaliencyDensity::decode(b, false, "seed"));
}

#[test]
fn severity_table_seeds() {
    replay("severity_table", |b| SeverityTable::parse(text(b)));
}

#[test]
fn dataset_manifest_seeds() {
    replay("dataset_manifest", |b| {
        let m = Manifest::parse(text(b))?;
        assert_eq!(Manifest::parse(&m.to_text()).unwrap(), m);
        Ok::<_, cotrain::Error>(m)
    });
}
