//! On-disk dataset directories.
//!
//! ```text
//! <dir>/manifest.json        feature width, class count, split membership
//! <dir>/annotations.jsonl    scene annotations
//! <dir>/features/<id>.hegf   node features (+ <id>.idx)
//! <dir>/graphs/<id>.hegg     cached graphs (+ cache.json with the stride)
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HegError, Result};
use crate::features::{FeatureSource, FeatureTable};
use crate::graph::{build_graph, read_graph, write_graph, TemporalBipartiteGraph};
use crate::scene::{read_annotations, write_annotations, VideoSequence};
use crate::synth::{split_indices, SynthSpec, SynthTask, SynthVideo};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const FEATURES_DIR: &str = "features";
pub const GRAPHS_DIR: &str = "graphs";
const GRAPH_CACHE_FILE: &str = "cache.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    All,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::All => "all",
        })
    }
}

impl FromStr for Split {
    type Err = HegError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "all" => Ok(Split::All),
            other => Err(HegError::Domain(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIds {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub feature_dim: usize,
    pub num_classes: usize,
    pub splits: SplitIds,
    /// Generator settings, for synthetic datasets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
}

#[derive(Debug, Serialize, Deserialize)]
struct GraphCache {
    stride: usize,
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| HegError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| HegError::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| HegError::io(path, e))
}

/// Handle on a dataset directory.
#[derive(Debug, Clone)]
pub struct DatasetDir {
    root: PathBuf,
}

impl DatasetDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn feature_path(&self, video_id: &str) -> PathBuf {
        self.root.join(FEATURES_DIR).join(format!("{video_id}.hegf"))
    }

    pub fn graph_path(&self, video_id: &str) -> PathBuf {
        self.root.join(GRAPHS_DIR).join(format!("{video_id}.hegg"))
    }

    /// Writes annotations, features and a manifest with a seeded 70/15/15
    /// split.
    pub fn write_synthetic(&self, spec: &SynthSpec, videos: &[SynthVideo]) -> Result<Manifest> {
        create_dir(&self.root.join(FEATURES_DIR))?;
        let sequences: Vec<VideoSequence> = videos.iter().map(|v| v.sequence.clone()).collect();
        write_annotations(&self.root.join(ANNOTATIONS_FILE), &sequences)?;
        for v in videos {
            v.features.write(&self.feature_path(&v.sequence.video_id))?;
        }
        let splits = split_indices(videos.len(), spec.seed);
        let ids = |idx: &[usize]| idx.iter().map(|&i| videos[i].sequence.video_id.clone()).collect();
        let manifest = Manifest {
            feature_dim: spec.feature_dim,
            num_classes: SynthTask::CLASSES,
            splits: SplitIds {
                train: ids(&splits.train),
                val: ids(&splits.val),
                test: ids(&splits.test),
            },
            synth: Some(spec.clone()),
        };
        self.write_manifest(&manifest)?;
        Ok(manifest)
    }

    pub fn write_manifest(&self, manifest: &Manifest) -> Result<()> {
        let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
        write_text(&self.root.join(MANIFEST_FILE), &(text + "\n"))
    }

    pub fn manifest(&self) -> Result<Manifest> {
        let path = self.root.join(MANIFEST_FILE);
        serde_json::from_str(&read_text(&path)?)
            .map_err(|e| HegError::Ingestion(format!("{}: {e}", path.display())))
    }

    pub fn videos(&self) -> Result<Vec<VideoSequence>> {
        read_annotations(&self.root.join(ANNOTATIONS_FILE))
    }

    /// Feature table of one video, checked against the manifest width.
    pub fn features(&self, video_id: &str, feature_dim: usize) -> Result<FeatureTable> {
        let path = self.feature_path(video_id);
        let table = FeatureTable::read(&path)?;
        if table.feature_dim() != feature_dim {
            return Err(HegError::Ingestion(format!(
                "{}: feature width {} does not match the dataset width {feature_dim}",
                path.display(),
                table.feature_dim()
            )));
        }
        Ok(table)
    }

    fn selected_ids(&self, manifest: &Manifest, split: Split, videos: &[VideoSequence]) -> Vec<String> {
        match split {
            Split::Train => manifest.splits.train.clone(),
            Split::Val => manifest.splits.val.clone(),
            Split::Test => manifest.splits.test.clone(),
            Split::All => videos.iter().map(|v| v.video_id.clone()).collect(),
        }
    }

    /// Builds every selected video's graph from annotations and features.
    pub fn build_graphs(&self, split: Split, stride: usize) -> Result<Vec<(String, TemporalBipartiteGraph)>> {
        let manifest = self.manifest()?;
        let videos = self.videos()?;
        let ids = self.selected_ids(&manifest, split, &videos);
        ids.par_iter()
            .map(|id| {
                let seq = videos
                    .iter()
                    .find(|v| &v.video_id == id)
                    .ok_or_else(|| HegError::Ingestion(format!("split lists unknown video {id:?}")))?;
                if seq.label >= manifest.num_classes {
                    return Err(HegError::Ingestion(format!(
                        "video {id}: label {} out of range for {} classes",
                        seq.label, manifest.num_classes
                    )));
                }
                let table = self.features(id, manifest.feature_dim)?;
                Ok((id.clone(), build_graph(seq, &table, stride)?))
            })
            .collect()
    }

    /// Builds all graphs and caches them under `graphs/`.
    pub fn write_graph_cache(&self, stride: usize) -> Result<usize> {
        let graphs = self.build_graphs(Split::All, stride)?;
        let dir = self.root.join(GRAPHS_DIR);
        create_dir(&dir)?;
        for (id, g) in &graphs {
            write_graph(&self.graph_path(id), g)?;
        }
        let cache = serde_json::to_string(&GraphCache { stride }).expect("cache serializes");
        write_text(&dir.join(GRAPH_CACHE_FILE), &cache)?;
        info!("cached {} graphs with stride {stride}", graphs.len());
        Ok(graphs.len())
    }

    fn cached_stride(&self) -> Option<usize> {
        let text = std::fs::read_to_string(self.root.join(GRAPHS_DIR).join(GRAPH_CACHE_FILE)).ok()?;
        serde_json::from_str::<GraphCache>(&text).ok().map(|c| c.stride)
    }

    /// Graphs of a split, from the cache when it was built with `stride`,
    /// otherwise built afresh. Order follows the manifest.
    pub fn load_graphs(&self, split: Split, stride: usize) -> Result<Vec<TemporalBipartiteGraph>> {
        if self.cached_stride() == Some(stride) {
            let manifest = self.manifest()?;
            let ids = match split {
                Split::All => self.videos()?.into_iter().map(|v| v.video_id).collect(),
                _ => self.selected_ids(&manifest, split, &[]),
            };
            let graphs: Vec<TemporalBipartiteGraph> =
                ids.par_iter().map(|id| read_graph(&self.graph_path(id))).collect::<Result<_>>()?;
            if let Some(g) = graphs.iter().find(|g| g.feature_dim() != manifest.feature_dim) {
                return Err(HegError::Ingestion(format!(
                    "cached graph has feature width {}, dataset width is {}",
                    g.feature_dim(),
                    manifest.feature_dim
                )));
            }
            return Ok(graphs);
        }
        Ok(self.build_graphs(split, stride)?.into_iter().map(|(_, g)| g).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{encode_graph, Neighborhoods};
    use crate::synth::generate;

    fn small_spec() -> SynthSpec {
        SynthSpec { num_videos: 20, frames_per_video: 11, feature_dim: 4, ..SynthSpec::default() }
    }

    #[test]
    fn synthetic_round_trip_and_cache() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = DatasetDir::new(tmp.path());
        let spec = small_spec();
        let videos = generate(&spec).unwrap();
        let manifest = dir.write_synthetic(&spec, &videos).unwrap();
        assert_eq!(dir.manifest().unwrap(), manifest);
        assert_eq!(manifest.splits.train.len(), 14);
        assert_eq!(dir.videos().unwrap().len(), 20);

        let built = dir.load_graphs(Split::Test, 5).unwrap();
        assert_eq!(built.len(), 3);
        assert_eq!(dir.write_graph_cache(5).unwrap(), 20);
        let cached = dir.load_graphs(Split::Test, 5).unwrap();
        for (a, b) in built.iter().zip(&cached) {
            assert_eq!(encode_graph(a), encode_graph(b));
        }
        // a different stride ignores the cache
        let other = dir.load_graphs(Split::Test, 2).unwrap();
        assert!(other[0].node_count() > built[0].node_count());
    }

    #[test]
    fn width_mismatch_rejected_at_ingestion() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = DatasetDir::new(tmp.path());
        let spec = small_spec();
        let mut manifest = dir.write_synthetic(&spec, &generate(&spec).unwrap()).unwrap();
        manifest.feature_dim = 1024;
        dir.write_manifest(&manifest).unwrap();
        let err = dir.load_graphs(Split::Train, 5).unwrap_err();
        assert!(matches!(err, HegError::Ingestion(_)), "{err}");
    }

    #[test]
    fn missing_directory_names_path() {
        let err = DatasetDir::new("/nonexistent/heg").manifest().unwrap_err();
        assert!(err.to_string().contains("/nonexistent/heg"), "{err}");
    }
}
