//! JSON episode manifests pointing at SSPT files.
//!
//! ```json
//! {
//!   "episodes": [
//!     {
//!       "episode_id": 0,
//!       "class_id": 3,
//!       "supports": [{ "features": "e0_s0.sspt", "mask": "e0_s0_mask.sspt" }],
//!       "query": "e0_q.sspt",
//!       "query_gt": "e0_q_mask.sspt"
//!     }
//!   ]
//! }
//! ```
//!
//! A bare episode object is accepted in place of the `episodes` list.
//! Relative paths resolve against the manifest's directory. `query_gt` is
//! optional for plain matching and required for evaluation.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use ssp_core::{FeatureMap, Mask, Shot};

use crate::episode::Episode;
use crate::error::{HarnessError, Result};
use crate::sspt::{read_features, read_mask, write_tensor_file};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupportEntry {
    pub features: PathBuf,
    pub mask: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeEntry {
    pub episode_id: u64,
    #[serde(default)]
    pub class_id: u32,
    pub supports: Vec<SupportEntry>,
    pub query: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_gt: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub episodes: Vec<EpisodeEntry>,
    /// Free-form provenance, e.g. feature extraction settings.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<serde_json::Value>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ManifestShape {
    Many(Manifest),
    One(EpisodeEntry),
}

/// An episode whose query ground truth may be missing.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedEpisode {
    pub supports: Vec<Shot>,
    pub query: FeatureMap,
    pub query_gt: Option<Mask>,
    pub class_id: u32,
    pub episode_id: u64,
}

impl LoadedEpisode {
    pub fn into_episode(self, manifest: &Path) -> Result<Episode> {
        let gt = self.query_gt.ok_or_else(|| HarnessError::Manifest {
            path: manifest.to_path_buf(),
            message: format!("episode {} has no query_gt", self.episode_id),
        })?;
        Episode::new(
            self.supports,
            self.query,
            gt,
            self.class_id,
            self.episode_id,
        )
    }
}

fn manifest_error(path: &Path, message: impl Into<String>) -> HarnessError {
    HarnessError::Manifest {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

impl Manifest {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let shape: ManifestShape =
            serde_json::from_str(text).map_err(|e| manifest_error(path, e.to_string()))?;
        let manifest = match shape {
            ManifestShape::Many(m) => m,
            ManifestShape::One(e) => Manifest {
                episodes: vec![e],
                metadata: None,
            },
        };
        if manifest.episodes.is_empty() {
            return Err(manifest_error(path, "no episodes"));
        }
        let mut ids: Vec<u64> = manifest.episodes.iter().map(|e| e.episode_id).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(manifest_error(
                path,
                format!("duplicate episode_id {}", w[0]),
            ));
        }
        Ok(manifest)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| HarnessError::io(path, e))
    }
}

fn base_dir(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn load_entry(entry: &EpisodeEntry, base: &Path) -> Result<LoadedEpisode> {
    let supports = entry
        .supports
        .iter()
        .map(|s| {
            let fpath = base.join(&s.features);
            let mpath = base.join(&s.mask);
            let features = read_features(&fpath)?;
            let mask = read_mask(&mpath)?;
            Shot::new(features, mask).map_err(|e| manifest_error(&mpath, e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let query = read_features(base.join(&entry.query))?;
    let query_gt = entry
        .query_gt
        .as_ref()
        .map(|p| {
            let path = base.join(p);
            let gt = read_mask(&path)?;
            query
                .check_mask(&gt, "query_gt")
                .map_err(|e| manifest_error(&path, e.to_string()))?;
            Ok::<_, HarnessError>(gt)
        })
        .transpose()?;
    Ok(LoadedEpisode {
        supports,
        query,
        query_gt,
        class_id: entry.class_id,
        episode_id: entry.episode_id,
    })
}

/// Loads every episode listed in a manifest, ground truth optional.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<LoadedEpisode>> {
    let path = path.as_ref();
    let manifest = Manifest::read(path)?;
    let base = base_dir(path);
    manifest
        .episodes
        .iter()
        .map(|e| load_entry(e, &base))
        .collect()
}

/// Loads every episode listed in a manifest; each must carry `query_gt`.
pub fn load_episodes(path: impl AsRef<Path>) -> Result<Vec<Episode>> {
    let path = path.as_ref();
    load_manifest(path)?
        .into_iter()
        .map(|e| e.into_episode(path))
        .collect()
}

/// Writes each episode as SSPT files into `dir` plus `dir/manifest.json`.
pub fn write_episodes(dir: impl AsRef<Path>, episodes: &[Episode]) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut entries = Vec::with_capacity(episodes.len());
    for ep in episodes {
        let id = ep.episode_id;
        let mut supports = Vec::with_capacity(ep.supports.len());
        for (k, shot) in ep.supports.iter().enumerate() {
            let entry = SupportEntry {
                features: format!("e{id}_s{k}.sspt").into(),
                mask: format!("e{id}_s{k}_mask.sspt").into(),
            };
            write_tensor_file(dir.join(&entry.features), &shot.features.clone().into())?;
            write_tensor_file(dir.join(&entry.mask), &shot.mask.clone().into())?;
            supports.push(entry);
        }
        let query = PathBuf::from(format!("e{id}_q.sspt"));
        let query_gt = PathBuf::from(format!("e{id}_q_mask.sspt"));
        write_tensor_file(dir.join(&query), &ep.query.clone().into())?;
        write_tensor_file(dir.join(&query_gt), &ep.query_gt.clone().into())?;
        entries.push(EpisodeEntry {
            episode_id: id,
            class_id: ep.class_id,
            supports,
            query,
            query_gt: Some(query_gt),
        });
    }
    let path = dir.join("manifest.json");
    Manifest {
        episodes: entries,
        metadata: None,
    }
    .write(&path)?;
    Ok(path)
}
