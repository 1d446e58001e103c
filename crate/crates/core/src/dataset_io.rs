//! On-disk datasets: `header.json` plus one CADW record per episode under
//! `train/`, `val/` and `test/`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::Checkpoint;
use crate::error::{CadError, Result};
use crate::synthetic::{Category, Dataset, Sample, SplitSizes, SyntheticConfig, QUESTION_LEN};

pub const FORMAT: &str = "cad-dataset";
pub const FORMAT_VERSION: u32 = 1;
const SPLITS: [&str; 3] = ["train", "val", "test"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub config: SyntheticConfig,
    pub split: SplitSizes,
    /// Per split, counts in category order.
    pub category_counts: [[usize; 9]; 3],
}

impl DatasetHeader {
    pub fn for_dataset(d: &Dataset) -> Self {
        Self {
            format: FORMAT.into(),
            version: FORMAT_VERSION,
            seed: d.seed,
            config: d.config.clone(),
            split: SplitSizes {
                train: d.train.len(),
                val: d.val.len(),
                test: d.test.len(),
            },
            category_counts: d.category_counts(),
        }
    }
}

pub fn encode_sample(s: &Sample, cfg: &SyntheticConfig) -> Checkpoint {
    let mut ck = Checkpoint::new();
    ck.insert("audio", vec![cfg.n_cues, cfg.feat_dim], s.audio.clone());
    ck.insert("visual", vec![cfg.n_cues, cfg.spatial, cfg.feat_dim], s.visual.clone());
    ck.insert("question", vec![QUESTION_LEN, cfg.text_dim], s.question.clone());
    ck.insert("answer", vec![1], vec![s.answer as f32]);
    ck.insert("category", vec![1], vec![s.category.index() as f32]);
    ck
}

pub fn decode_sample(ck: &Checkpoint, cfg: &SyntheticConfig) -> Result<Sample> {
    let field = |name: &str, shape: Vec<usize>| -> Result<Vec<f32>> {
        let t = ck.get(name).ok_or_else(|| CadError::Dataset(format!("record lacks `{name}`")))?;
        if t.shape != shape {
            return Err(CadError::Dataset(format!("`{name}` has shape {:?}, header implies {shape:?}", t.shape)));
        }
        Ok(t.data.clone())
    };
    let label = |name: &str| -> Result<usize> {
        let v = field(name, vec![1])?[0];
        if v < 0.0 || v.fract() != 0.0 {
            return Err(CadError::Dataset(format!("`{name}` = {v} is not a label")));
        }
        Ok(v as usize)
    };
    let category = Category::from_index(label("category")?).ok_or_else(|| CadError::Dataset("unknown category".into()))?;
    Ok(Sample {
        audio: field("audio", vec![cfg.n_cues, cfg.feat_dim])?,
        visual: field("visual", vec![cfg.n_cues, cfg.spatial, cfg.feat_dim])?,
        question: field("question", vec![QUESTION_LEN, cfg.text_dim])?,
        category,
        answer: label("answer")?,
    })
}

fn record_name(i: usize) -> String {
    format!("{i:06}.cadw")
}

pub fn save_dataset(d: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CadError::io(dir, e))?;
    let header = serde_json::to_string_pretty(&DatasetHeader::for_dataset(d)).expect("header serializes");
    let hp = dir.join("header.json");
    fs::write(&hp, header + "\n").map_err(|e| CadError::io(&hp, e))?;
    for (name, samples) in SPLITS.iter().zip([&d.train, &d.val, &d.test]) {
        let sub = dir.join(name);
        fs::create_dir_all(&sub).map_err(|e| CadError::io(&sub, e))?;
        for (i, s) in samples.iter().enumerate() {
            encode_sample(s, &d.config).save(&sub.join(record_name(i)))?;
        }
    }
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let hp = dir.join("header.json");
    let text = fs::read_to_string(&hp).map_err(|e| CadError::io(&hp, e))?;
    let header: DatasetHeader = serde_json::from_str(&text).map_err(|e| CadError::Dataset(format!("{}: {e}", hp.display())))?;
    if header.format != FORMAT || header.version != FORMAT_VERSION {
        return Err(CadError::Dataset(format!("{}: unsupported format {} v{}", hp.display(), header.format, header.version)));
    }
    let sizes = [header.split.train, header.split.val, header.split.test];
    let mut splits = Vec::with_capacity(3);
    for (name, n) in SPLITS.iter().zip(sizes) {
        let sub = dir.join(name);
        let samples = (0..n)
            .map(|i| decode_sample(&Checkpoint::load(&sub.join(record_name(i)))?, &header.config))
            .collect::<Result<Vec<_>>>()?;
        splits.push(samples);
    }
    let [train, val, test]: [Vec<Sample>; 3] = splits.try_into().expect("three splits");
    Ok(Dataset {
        config: header.config,
        seed: header.seed,
        train,
        val,
        test,
    })
}

/// SHA-256 over the git-style blob hashes of every record, in split order.
pub fn content_hash(d: &Dataset) -> String {
    let mut outer = Sha256::new();
    for (name, samples) in SPLITS.iter().zip([&d.train, &d.val, &d.test]) {
        for (i, s) in samples.iter().enumerate() {
            let bytes = encode_sample(s, &d.config).to_bytes();
            let mut blob = Sha256::new();
            blob.update(format!("blob {}\0", bytes.len()).as_bytes());
            blob.update(&bytes);
            outer.update(format!("{name}/{}\0", record_name(i)).as_bytes());
            outer.update(blob.finalize());
        }
    }
    hex::encode(outer.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{make_dataset, World};

    fn small() -> Dataset {
        let cfg = SyntheticConfig { n_episodes: 12, ..Default::default() };
        let world = World::for_seed(3, cfg.n_classes, cfg.feat_dim, cfg.text_dim);
        make_dataset(&cfg, &world, 3).unwrap()
    }

    #[test]
    fn roundtrip_on_disk() {
        let d = small();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&d, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.train, d.train);
        assert_eq!(back.test, d.test);
        assert_eq!(content_hash(&back), content_hash(&d));
    }

    #[test]
    fn hash_tracks_content() {
        let d = small();
        let mut e = d.clone();
        e.test[0].answer ^= 1;
        assert_ne!(content_hash(&d), content_hash(&e));
        assert_eq!(content_hash(&d).len(), 64);
    }

    #[test]
    fn missing_header_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("header.json"));
    }
}
