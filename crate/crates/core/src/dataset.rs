//! On-disk dataset layout: `<dir>/manifest.json` plus one EMB1 file per
//! (sample, network) under `<dir>/embeddings/`.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::embedding::{read_embedding_file, write_embedding_file, EmbeddingSet, NetworkId};
use crate::error::{DmadError, Result};
use crate::manifest::DatasetManifest;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const EMBEDDING_DIR: &str = "embeddings";

#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub embeddings: EmbeddingSet,
}

impl Dataset {
    pub fn manifest_path(dir: &Path) -> PathBuf {
        dir.join(MANIFEST_FILE)
    }

    pub fn embedding_dir(dir: &Path) -> PathBuf {
        dir.join(EMBEDDING_DIR)
    }

    pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
        let path = Self::manifest_path(dir);
        let text = fs::read_to_string(&path).map_err(|e| DmadError::from(e).in_file(&path))?;
        let manifest = DatasetManifest::from_json(&text).map_err(|e| e.in_file(&path))?;
        manifest.validate().map_err(|e| e.in_file(&path))?;
        Ok(manifest)
    }

    /// Loads and validates the manifest, then every embedding it references.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = Self::load_manifest(dir)?;
        let dims = manifest.dims();
        let emb_dir = Self::embedding_dir(dir);
        let records = manifest
            .entries
            .par_iter()
            .flat_map_iter(|e| NetworkId::ALL.into_iter().map(move |n| (e, n)))
            .map(|(e, n)| read_embedding_file(&emb_dir, &e.sample_id, n, &dims))
            .collect::<Result<Vec<_>>>()?;
        let mut embeddings = EmbeddingSet::new(dims);
        for r in records {
            embeddings.insert(r)?;
        }
        Ok(Self {
            manifest,
            embeddings,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.manifest.validate()?;
        let emb_dir = Self::embedding_dir(dir);
        fs::create_dir_all(&emb_dir).map_err(|e| DmadError::from(e).in_file(&emb_dir))?;
        let path = Self::manifest_path(dir);
        fs::write(&path, self.manifest.to_json()? + "\n")
            .map_err(|e| DmadError::from(e).in_file(&path))?;
        let dims = *self.embeddings.dims();
        self.embeddings
            .records()
            .collect::<Vec<_>>()
            .par_iter()
            .try_for_each(|r| write_embedding_file(&emb_dir, r, &dims))
    }
}
