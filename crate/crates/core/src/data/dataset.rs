//! Validated dataset: clip manifest plus one embedding table per view.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::data::embedding::EmbeddingTable;
use crate::data::manifest::{read_manifest, write_manifest, Attribute, ClipRecord, Split, View};
use crate::error::{Error, Result};

/// Conventional file names inside a dataset bundle directory.
pub const MANIFEST_FILE: &str = "manifest.json";
pub const EGO_EMBEDDING_FILE: &str = "ego.emb";
pub const EXO_EMBEDDING_FILE: &str = "exo.emb";
const PROVENANCE_FILE: &str = "provenance.json";

/// Retrieval tasks answerable from a dataset. Queries are always ego clips.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RetrievalTask {
    /// Find the wearer's other ego clips among ego clips.
    EgoToEgoIdentity,
    /// Find the wearer's exo clips among exo clips.
    EgoToExoIdentity,
    /// Find clips recorded in the query's scene.
    Scene,
    /// Find the exo clips time-synchronized with the query (same take).
    Moment,
}

impl RetrievalTask {
    /// Which view the gallery draws from. `Scene` is configurable; this is its default.
    pub fn default_gallery_view(self) -> View {
        match self {
            RetrievalTask::EgoToEgoIdentity | RetrievalTask::Scene => View::Ego,
            RetrievalTask::EgoToExoIdentity | RetrievalTask::Moment => View::Exo,
        }
    }
}

impl std::fmt::Display for RetrievalTask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RetrievalTask::EgoToEgoIdentity => "ego2ego",
            RetrievalTask::EgoToExoIdentity => "ego2exo",
            RetrievalTask::Scene => "scene",
            RetrievalTask::Moment => "moment",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for RetrievalTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ego2ego" => Ok(RetrievalTask::EgoToEgoIdentity),
            "ego2exo" => Ok(RetrievalTask::EgoToExoIdentity),
            "scene" => Ok(RetrievalTask::Scene),
            "moment" => Ok(RetrievalTask::Moment),
            other => Err(Error::InvalidInput(format!(
                "unknown task '{other}' (expected ego2ego, ego2exo, scene, or moment)"
            ))),
        }
    }
}

/// Clip manifest plus per-view embedding tables, validated for mutual consistency.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    clips: Vec<ClipRecord>,
    by_id: BTreeMap<String, usize>,
    by_identity: BTreeMap<String, Vec<usize>>,
    by_take: BTreeMap<String, Vec<usize>>,
    ego: EmbeddingTable,
    exo: EmbeddingTable,
    provenance: String,
}

impl Dataset {
    /// Build and validate a dataset from already-loaded parts.
    ///
    /// Checks: unique clip ids, positive frame counts, embedding rows matching
    /// the manifest one-to-one per view, declared frame counts matching stored
    /// rows, and demographic labels agreeing across each identity's clips.
    pub fn from_parts(
        clips: Vec<ClipRecord>,
        ego: EmbeddingTable,
        exo: EmbeddingTable,
        provenance: String,
    ) -> Result<Self> {
        let mut by_id = BTreeMap::new();
        for (i, clip) in clips.iter().enumerate() {
            if clip.frame_count == 0 {
                return Err(Error::MalformedManifest(format!(
                    "clip '{}' declares zero frames",
                    clip.clip_id
                )));
            }
            if by_id.insert(clip.clip_id.clone(), i).is_some() {
                return Err(Error::MalformedManifest(format!(
                    "duplicate clip id '{}'",
                    clip.clip_id
                )));
            }
        }

        // Each view's table must hold exactly the manifest's clips for that view.
        for clip in &clips {
            let table = match clip.view {
                View::Ego => &ego,
                View::Exo => &exo,
            };
            let frames = table
                .frames(&clip.clip_id)
                .ok_or_else(|| Error::MissingEmbedding(clip.clip_id.clone()))?;
            if frames.nrows() != clip.frame_count as usize {
                return Err(Error::MalformedManifest(format!(
                    "clip '{}' declares {} frames but the embedding file stores {}",
                    clip.clip_id,
                    clip.frame_count,
                    frames.nrows()
                )));
            }
        }
        for (table, view) in [(&ego, View::Ego), (&exo, View::Exo)] {
            for id in table.ids() {
                match by_id.get(id) {
                    Some(&i) if clips[i].view == view => {}
                    _ => return Err(Error::UnknownClipId(id.to_string())),
                }
            }
        }

        // Demographic labels must agree across an identity's clips when present.
        let mut by_identity: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, clip) in clips.iter().enumerate() {
            by_identity.entry(clip.identity_id.clone()).or_default().push(i);
        }
        for (identity, members) in &by_identity {
            for attribute in Attribute::ALL {
                let mut seen: Option<usize> = None;
                for &i in members {
                    if let Some(class) = clips[i].class_index(attribute) {
                        match seen {
                            None => seen = Some(class),
                            Some(prev) if prev != class => {
                                return Err(Error::MalformedManifest(format!(
                                    "identity '{identity}' has conflicting {attribute} labels"
                                )));
                            }
                            Some(_) => {}
                        }
                    }
                }
            }
        }

        let mut by_take: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, clip) in clips.iter().enumerate() {
            by_take.entry(clip.take_id.clone()).or_default().push(i);
        }

        Ok(Dataset { clips, by_id, by_identity, by_take, ego, exo, provenance })
    }

    /// Load and validate a dataset from a manifest and two embedding files.
    pub fn ingest(manifest: &Path, ego: &Path, exo: &Path) -> Result<Self> {
        let clips = read_manifest(manifest)?;
        let ego_table = EmbeddingTable::read(ego)?;
        let exo_table = EmbeddingTable::read(exo)?;
        let provenance = format!(
            "ingest manifest={} ego={} exo={}",
            manifest.display(),
            ego.display(),
            exo.display()
        );
        Dataset::from_parts(clips, ego_table, exo_table, provenance)
    }

    /// Load a dataset from a bundle directory written by [`Dataset::write_bundle`].
    pub fn load_bundle(dir: &Path) -> Result<Self> {
        let clips = read_manifest(&dir.join(MANIFEST_FILE))?;
        let ego = EmbeddingTable::read(&dir.join(EGO_EMBEDDING_FILE))?;
        let exo = EmbeddingTable::read(&dir.join(EXO_EMBEDDING_FILE))?;
        let prov_path = dir.join(PROVENANCE_FILE);
        let provenance = if prov_path.exists() {
            let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&prov_path)?)?;
            v.get("provenance").and_then(|p| p.as_str()).unwrap_or_default().to_string()
        } else {
            format!("bundle dir={}", dir.display())
        };
        Dataset::from_parts(clips, ego, exo, provenance)
    }

    /// Write the dataset as a bundle directory (manifest, both embedding
    /// files, provenance). Loading the bundle back is an exact round trip.
    pub fn write_bundle(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_manifest(&dir.join(MANIFEST_FILE), &self.clips)?;
        self.ego.write(&dir.join(EGO_EMBEDDING_FILE))?;
        self.exo.write(&dir.join(EXO_EMBEDDING_FILE))?;
        let prov = serde_json::json!({ "provenance": self.provenance });
        fs::write(dir.join(PROVENANCE_FILE), format!("{}\n", serde_json::to_string_pretty(&prov)?))?;
        Ok(())
    }

    pub fn clips(&self) -> &[ClipRecord] {
        &self.clips
    }

    pub fn clip(&self, clip_id: &str) -> Result<&ClipRecord> {
        self.by_id
            .get(clip_id)
            .map(|&i| &self.clips[i])
            .ok_or_else(|| Error::NoSuchClip(clip_id.to_string()))
    }

    pub fn contains(&self, clip_id: &str) -> bool {
        self.by_id.contains_key(clip_id)
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn table(&self, view: View) -> &EmbeddingTable {
        match view {
            View::Ego => &self.ego,
            View::Exo => &self.exo,
        }
    }

    /// Clips of one view, optionally restricted to a split, in manifest order.
    pub fn view_clips(&self, view: View, split: Option<Split>) -> Vec<&ClipRecord> {
        self.clips
            .iter()
            .filter(|c| c.view == view && split.map_or(true, |s| c.split == s))
            .collect()
    }

    /// All clips of one identity, in manifest order.
    pub fn identity_clips(&self, identity_id: &str) -> Vec<&ClipRecord> {
        self.by_identity
            .get(identity_id)
            .map(|ids| ids.iter().map(|&i| &self.clips[i]).collect())
            .unwrap_or_default()
    }

    /// Identity ids present in the dataset, ascending.
    pub fn identities(&self) -> impl Iterator<Item = &str> {
        self.by_identity.keys().map(String::as_str)
    }

    /// All clips of one take, in manifest order.
    pub fn take_clips(&self, take_id: &str) -> Vec<&ClipRecord> {
        self.by_take
            .get(take_id)
            .map(|ids| ids.iter().map(|&i| &self.clips[i]).collect())
            .unwrap_or_default()
    }

    /// Frame matrix for a clip as f64, uniformly subsampled to at most
    /// `max_frames` rows (`i -> floor(i * available / max_frames)`).
    pub fn frames_f64(&self, clip_id: &str, max_frames: usize) -> Result<Array2<f64>> {
        if max_frames == 0 {
            return Err(Error::InvalidInput("max_frames must be positive".into()));
        }
        let clip = self.clip(clip_id)?;
        let frames = self
            .table(clip.view)
            .frames(clip_id)
            .expect("validated: every clip has embedding rows");
        let available = frames.nrows();
        let picked: Vec<usize> = if available <= max_frames {
            (0..available).collect()
        } else {
            (0..max_frames).map(|i| i * available / max_frames).collect()
        };
        let mut out = Array2::zeros((picked.len(), frames.ncols()));
        for (r, &src) in picked.iter().enumerate() {
            for c in 0..frames.ncols() {
                out[[r, c]] = f64::from(frames[[src, c]]);
            }
        }
        Ok(out)
    }

    /// Ground-truth positives for a query under a task, over the whole dataset.
    /// Scene positives default to the ego-side gallery; see
    /// [`Dataset::positive_set_with_scene_gallery`] to target the exo side.
    pub fn positive_set(&self, task: RetrievalTask, query_id: &str) -> Result<BTreeSet<String>> {
        self.positive_set_with_scene_gallery(task, query_id, View::Ego)
    }

    /// Ground-truth positives with an explicit gallery view for the Scene task.
    /// The query itself is excluded whenever it could appear in the gallery.
    pub fn positive_set_with_scene_gallery(
        &self,
        task: RetrievalTask,
        query_id: &str,
        scene_gallery: View,
    ) -> Result<BTreeSet<String>> {
        let query = self.clip(query_id)?;
        if query.view != View::Ego {
            return Err(Error::InvalidInput(format!(
                "query '{query_id}' is an exo clip; queries must be ego clips"
            )));
        }
        let set = match task {
            RetrievalTask::EgoToEgoIdentity => self
                .identity_clips(&query.identity_id)
                .into_iter()
                .filter(|c| c.view == View::Ego && c.clip_id != query.clip_id)
                .map(|c| c.clip_id.clone())
                .collect(),
            RetrievalTask::EgoToExoIdentity => self
                .identity_clips(&query.identity_id)
                .into_iter()
                .filter(|c| c.view == View::Exo)
                .map(|c| c.clip_id.clone())
                .collect(),
            RetrievalTask::Scene => {
                let scene = query.scene_id.as_ref().ok_or_else(|| {
                    Error::MissingLabel(format!("query '{query_id}' has no scene_id"))
                })?;
                self.clips
                    .iter()
                    .filter(|c| {
                        c.view == scene_gallery
                            && c.scene_id.as_ref() == Some(scene)
                            && c.clip_id != query.clip_id
                    })
                    .map(|c| c.clip_id.clone())
                    .collect()
            }
            RetrievalTask::Moment => self
                .take_clips(&query.take_id)
                .into_iter()
                .filter(|c| c.view == View::Exo)
                .map(|c| c.clip_id.clone())
                .collect(),
        };
        Ok(set)
    }
}
