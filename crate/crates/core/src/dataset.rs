//! Paired training corpus: (source, edited, prompt) triplets.
//!
//! Every identity is rendered at the same evenly spaced yaws, and every pose
//! is edited with every effect. Images are single-frame MFV files; the
//! manifest stores paths relative to its own directory.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::effects::{apply_effect, caption, describe_face, EffectSpec};
use crate::error::{Error, Result};
use crate::imaging::{load_frame, save_frame, Frame};
use crate::synthface::{render_face, sample_face_params, Canvas};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const POSE_RANGE_DEG: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TripletMeta {
    pub seed: u64,
    pub identity: usize,
    pub effect: String,
    pub yaw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTriplet {
    pub source: Frame,
    pub edited: Frame,
    pub prompt: String,
    pub meta: TripletMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub src: String,
    pub edit: String,
    pub prompt: String,
    pub meta: TripletMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
    pub vocab: Vec<String>,
    /// Directory the record paths are relative to.
    #[serde(skip)]
    pub root: PathBuf,
}

/// Sorted, deduplicated whitespace tokens of all prompts.
pub fn build_vocab<'a>(prompts: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    prompts
        .into_iter()
        .flat_map(str::split_whitespace)
        .map(str::to_owned)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Evenly spaced yaws over `[-30, 30]`; a single pose is frontal.
pub fn pose_yaws(poses: usize) -> Vec<f64> {
    match poses {
        0 => vec![],
        1 => vec![0.0],
        n => (0..n)
            .map(|k| -POSE_RANGE_DEG + 2.0 * POSE_RANGE_DEG * k as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// SplitMix64 finalizer, used to give every identity an independent stream.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn slug(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '_'
            }
        })
        .collect()
}

struct PoseSample {
    identity: usize,
    pose: usize,
    source: Frame,
    triplets: Vec<TrainingTriplet>,
}

fn render_identity(
    identity: usize,
    effects: &[EffectSpec],
    yaws: &[f64],
    seed: u64,
    canvas: Canvas,
) -> Result<Vec<PoseSample>> {
    let face_seed = derive_seed(seed, identity as u64);
    let base = sample_face_params(face_seed, canvas)?;
    let mut out = Vec::with_capacity(yaws.len());
    for (pose, &yaw) in yaws.iter().enumerate() {
        let mut p = base.clone();
        p.yaw = yaw;
        let (source, lms) = render_face(&p, canvas)?;
        let base_caption = describe_face(&p);
        let triplets = effects
            .iter()
            .map(|e| {
                Ok(TrainingTriplet {
                    edited: apply_effect(&source, &lms, e)?,
                    prompt: caption(e, &base_caption)?,
                    source: source.clone(),
                    meta: TripletMeta {
                        seed: face_seed,
                        identity,
                        effect: e.name.clone(),
                        yaw,
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(PoseSample {
            identity,
            pose,
            source,
            triplets,
        });
    }
    Ok(out)
}

fn check_forge_args(n_identities: usize, effects: &[EffectSpec], poses: usize) -> Result<()> {
    if n_identities == 0 {
        return Err(Error::Config("need at least one identity".into()));
    }
    if effects.is_empty() {
        return Err(Error::Config("need at least one effect".into()));
    }
    if poses == 0 {
        return Err(Error::Config("need at least one pose per identity".into()));
    }
    let names: BTreeSet<&str> = effects.iter().map(|e| e.name.as_str()).collect();
    if names.len() != effects.len() {
        return Err(Error::Schema("effect names must be unique".into()));
    }
    effects.iter().try_for_each(EffectSpec::validate)
}

/// In-memory forge; record order is identity, then pose, then effect.
pub fn forge_triplets(
    n_identities: usize,
    effects: &[EffectSpec],
    poses_per_identity: usize,
    seed: u64,
    canvas: Canvas,
) -> Result<Vec<TrainingTriplet>> {
    check_forge_args(n_identities, effects, poses_per_identity)?;
    let yaws = pose_yaws(poses_per_identity);
    let per_identity = (0..n_identities)
        .into_par_iter()
        .map(|i| render_identity(i, effects, &yaws, seed, canvas))
        .collect::<Result<Vec<_>>>()?;
    Ok(per_identity.into_iter().flatten().flat_map(|p| p.triplets).collect())
}

/// Forges the dataset into `out_dir` and writes `manifest.json` there.
pub fn forge(
    n_identities: usize,
    effects: &[EffectSpec],
    poses_per_identity: usize,
    seed: u64,
    out_dir: impl AsRef<Path>,
    canvas: Canvas,
) -> Result<DatasetManifest> {
    check_forge_args(n_identities, effects, poses_per_identity)?;
    let out_dir = out_dir.as_ref();
    let images = out_dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let yaws = pose_yaws(poses_per_identity);

    let records = (0..n_identities)
        .into_par_iter()
        .map(|i| -> Result<Vec<ManifestRecord>> {
            let mut recs = Vec::new();
            for sample in render_identity(i, effects, &yaws, seed, canvas)? {
                let stem = format!("id{:04}_pose{}", sample.identity, sample.pose);
                let src = format!("images/{stem}_src.mfv");
                save_frame(&sample.source, out_dir.join(&src))?;
                for t in sample.triplets {
                    let edit = format!("images/{stem}_{}.mfv", slug(&t.meta.effect));
                    save_frame(&t.edited, out_dir.join(&edit))?;
                    recs.push(ManifestRecord {
                        src: src.clone(),
                        edit,
                        prompt: t.prompt,
                        meta: t.meta,
                    });
                }
            }
            Ok(recs)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect::<Vec<_>>();

    let vocab = build_vocab(records.iter().map(|r| r.prompt.as_str()));
    let manifest = DatasetManifest {
        records,
        vocab,
        root: out_dir.to_path_buf(),
    };
    let path = out_dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Reads and validates a manifest: unknown fields are schema errors and every
/// referenced image must exist.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut m: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    m.root = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    m.validate()?;
    Ok(m)
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        for r in &self.records {
            for rel in [&r.src, &r.edit] {
                let p = self.root.join(rel);
                if !p.is_file() {
                    return Err(Error::Asset(format!("missing image {}", p.display())));
                }
            }
            if let Some(tok) = r
                .prompt
                .split_whitespace()
                .find(|t| self.vocab.binary_search_by(|v| v.as_str().cmp(t)).is_err())
            {
                return Err(Error::Schema(format!("token `{tok}` missing from vocab")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn load_triplet(&self, index: usize) -> Result<TrainingTriplet> {
        let r = self
            .records
            .get(index)
            .ok_or_else(|| Error::Config(format!("record {index} out of range")))?;
        Ok(TrainingTriplet {
            source: load_frame(self.root.join(&r.src))?,
            edited: load_frame(self.root.join(&r.edit))?,
            prompt: r.prompt.clone(),
            meta: r.meta.clone(),
        })
    }

    pub fn load_triplets(&self) -> Result<Vec<TrainingTriplet>> {
        (0..self.records.len()).map(|i| self.load_triplet(i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::effects::{builtin_effect, builtin_effects};
    use crate::synthface::DEFAULT_CANVAS;

    #[test]
    fn record_count_is_product() {
        let dir = tempfile::tempdir().unwrap();
        let e = vec![builtin_effect("glasses").unwrap()];
        let m = forge(2, &e, 3, 7, dir.path(), DEFAULT_CANVAS).unwrap();
        assert_eq!(m.len(), 6);
        // 30,000 sources x 8 effects
        assert_eq!(30_000 * 8, 240_000);
    }

    #[test]
    fn forge_is_byte_deterministic() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let e = builtin_effects()[..2].to_vec();
        forge(2, &e, 2, 11, a.path(), DEFAULT_CANVAS).unwrap();
        forge(2, &e, 2, 11, b.path(), DEFAULT_CANVAS).unwrap();
        let ma = fs::read(a.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(ma, fs::read(b.path().join(MANIFEST_FILE)).unwrap());
        let m = load_manifest(a.path().join(MANIFEST_FILE)).unwrap();
        for r in &m.records {
            for rel in [&r.src, &r.edit] {
                assert_eq!(
                    fs::read(a.path().join(rel)).unwrap(),
                    fs::read(b.path().join(rel)).unwrap()
                );
            }
        }
    }

    #[test]
    fn manifest_roundtrip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let e = vec![builtin_effect("bow").unwrap()];
        let m = forge(1, &e, 2, 3, dir.path(), DEFAULT_CANVAS).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        assert_eq!(load_manifest(&path).unwrap(), m);
        for tok in ["green", "bow", "effect"] {
            assert!(m.vocab.iter().any(|v| v == tok));
        }

        fs::remove_file(dir.path().join(&m.records[1].edit)).unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::Asset(_))));

        let text = fs::read_to_string(&path)
            .unwrap()
            .replacen("\"vocab\"", "\"extra\": 1, \"vocab\"", 1);
        fs::write(&path, text).unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::Schema(_))));
    }

    #[test]
    fn triplet_invariants() {
        let effects = builtin_effects();
        let ts = forge_triplets(3, &effects, 3, 5, DEFAULT_CANVAS).unwrap();
        assert_eq!(ts.len(), 3 * 3 * 8);
        let mut yaws_per_identity: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        for t in &ts {
            assert_eq!(t.source.shape(), t.edited.shape());
            assert!(t.prompt.ends_with(&t.meta.effect));
            assert!(t.source.max_abs_diff(&t.edited).unwrap() > 0.0);
            // suffix identifies exactly one effect
            let matching: Vec<_> = effects
                .iter()
                .filter(|e| t.prompt.ends_with(&format!(" {}", e.name)))
                .collect();
            assert_eq!(matching.len(), 1);
            yaws_per_identity
                .entry(t.meta.identity)
                .or_default()
                .push(format!("{:.3}", t.meta.yaw));
        }
        let first = yaws_per_identity.values().next().unwrap().clone();
        assert!(yaws_per_identity.values().all(|v| *v == first));
    }

    #[test]
    fn pose_grid() {
        assert_eq!(pose_yaws(1), vec![0.0]);
        assert_eq!(pose_yaws(3), vec![-30.0, 0.0, 30.0]);
        assert_eq!(pose_yaws(5)[1], -15.0);
    }

    #[test]
    fn bad_arguments() {
        let dir = tempfile::tempdir().unwrap();
        let e = builtin_effects();
        assert!(matches!(
            forge(0, &e, 1, 0, dir.path(), DEFAULT_CANVAS),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            forge(1, &[], 1, 0, dir.path(), DEFAULT_CANVAS),
            Err(Error::Config(_))
        ));
        let dup = vec![e[0].clone(), e[0].clone()];
        assert!(matches!(
            forge_triplets(1, &dup, 1, 0, DEFAULT_CANVAS),
            Err(Error::Schema(_))
        ));
    }
}
