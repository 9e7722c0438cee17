//! Exact cosine-similarity retrieval over pooled clip embeddings.
//!
//! Rankings are exact and fully deterministic: candidates are ordered by
//! descending cosine score with ties broken by ascending clip id, so any two
//! runs (and the truncated and untruncated code paths) agree on every prefix.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, RetrievalTask, Split, View};
use crate::error::{Error, Result};
use crate::train::HeadPair;

/// Cosine similarity `<u, v> / (|u| |v|)`.
///
/// Errors on mismatched dimensions and on zero vectors (no direction).
pub fn cosine_similarity(u: ArrayView1<f64>, v: ArrayView1<f64>) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch(format!(
            "cosine between vectors of length {} and {}",
            u.len(),
            v.len()
        )));
    }
    let nu = u.dot(&u).sqrt();
    let nv = v.dot(&v).sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(u.dot(&v) / (nu * nv))
}

/// Mean over frame rows.
pub fn mean_pool(frames: &Array2<f64>) -> Array1<f64> {
    let mut out = Array1::zeros(frames.ncols());
    for row in frames.rows() {
        out += &row;
    }
    out / frames.nrows() as f64
}

/// Scored gallery for one query, best candidate first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub query_id: String,
    /// `(clip_id, score)`, descending score, ties by ascending clip id.
    pub candidates: Vec<(String, f64)>,
    /// Requested cutoff if the ranking was truncated at construction.
    pub truncation_k: Option<usize>,
}

impl Ranking {
    /// Validates ordering (score descending, id ascending within ties) and
    /// uniqueness of candidate ids.
    pub fn new(
        query_id: String,
        candidates: Vec<(String, f64)>,
        truncation_k: Option<usize>,
    ) -> Result<Self> {
        for pair in candidates.windows(2) {
            if rank_order(&pair[0], &pair[1]) != Ordering::Less {
                return Err(Error::InvalidInput(format!(
                    "ranking for '{query_id}' is not in (score desc, id asc) order"
                )));
            }
        }
        let mut seen = BTreeSet::new();
        for (id, _) in &candidates {
            if !seen.insert(id) {
                return Err(Error::InvalidInput(format!(
                    "ranking for '{query_id}' lists candidate '{id}' twice"
                )));
            }
        }
        Ok(Ranking { query_id, candidates, truncation_k })
    }

    /// Candidate ids of the top `k` entries.
    pub fn top_k_ids(&self, k: usize) -> impl Iterator<Item = &str> {
        self.candidates.iter().take(k).map(|(id, _)| id.as_str())
    }
}

/// Total order over `(clip_id, score)`: earlier = higher score, ties by id.
fn rank_order(a: &(String, f64), b: &(String, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

/// Heap entry ordered so the heap's maximum is the worst-ranked candidate.
struct WorstFirst((String, f64));

impl PartialEq for WorstFirst {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for WorstFirst {}
impl PartialOrd for WorstFirst {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for WorstFirst {
    fn cmp(&self, other: &Self) -> Ordering {
        rank_order(&self.0, &other.0)
    }
}

/// Rank a gallery against a query vector by cosine similarity.
///
/// With `top_k = Some(k)` only the best `k` candidates are kept; the kept
/// prefix is identical to the same prefix of the full ranking. Small cutoffs
/// use a bounded heap instead of sorting the whole gallery.
pub fn rank_gallery(
    query_id: &str,
    query: ArrayView1<f64>,
    gallery: &[(String, Array1<f64>)],
    top_k: Option<usize>,
) -> Result<Ranking> {
    if gallery.is_empty() {
        return Err(Error::EmptyGallery(format!("ranking query '{query_id}'")));
    }
    if top_k == Some(0) {
        return Err(Error::InvalidInput("top_k must be positive".into()));
    }

    let mut scored = Vec::with_capacity(gallery.len());
    for (id, vec) in gallery {
        scored.push((id.clone(), cosine_similarity(query, vec.view())?));
    }

    let keep = top_k.map_or(scored.len(), |k| k.min(scored.len()));
    let candidates = if keep * 8 < scored.len() {
        partial_top_k(scored, keep)
    } else {
        scored.sort_by(rank_order);
        scored.truncate(keep);
        scored
    };
    Ranking::new(query_id.to_string(), candidates, top_k)
}

/// Exact top-k selection with a size-k max-heap keyed by "worst of the kept".
fn partial_top_k(scored: Vec<(String, f64)>, k: usize) -> Vec<(String, f64)> {
    let mut heap: BinaryHeap<WorstFirst> = BinaryHeap::with_capacity(k + 1);
    for entry in scored {
        if heap.len() < k {
            heap.push(WorstFirst(entry));
        } else if rank_order(&entry, &heap.peek().expect("heap nonempty").0) == Ordering::Less {
            heap.pop();
            heap.push(WorstFirst(entry));
        }
    }
    let mut kept: Vec<(String, f64)> = heap.into_iter().map(|w| w.0).collect();
    kept.sort_by(rank_order);
    kept
}

/// Settings shared by the task runners.
#[derive(Debug, Clone, Copy)]
pub struct RetrievalOptions {
    /// Restrict queries and gallery to one split (`None` = whole dataset).
    pub split: Option<Split>,
    /// Cap on frames pooled per clip (uniform subsampling above the cap).
    pub frames: usize,
    /// Gallery side for the Scene task.
    pub scene_gallery: View,
    /// Keep only the best `k` candidates per query.
    pub top_k: Option<usize>,
}

impl Default for RetrievalOptions {
    fn default() -> Self {
        RetrievalOptions { split: None, frames: 8, scene_gallery: View::Ego, top_k: None }
    }
}

impl RetrievalOptions {
    fn gallery_view(&self, task: RetrievalTask) -> View {
        if task == RetrievalTask::Scene {
            self.scene_gallery
        } else {
            task.default_gallery_view()
        }
    }
}

/// Pooled clip vector: projection-head embedding when heads are supplied
/// (picked by the clip's view), otherwise the raw frame mean.
pub fn clip_vector(
    ds: &Dataset,
    clip_id: &str,
    heads: Option<&HeadPair>,
    frames: usize,
) -> Result<Array1<f64>> {
    let view = ds.clip(clip_id)?.view;
    let mat = ds.frames_f64(clip_id, frames)?;
    match heads {
        Some(pair) => pair.head(view).embed(&mat),
        None => Ok(mean_pool(&mat)),
    }
}

/// Ego queries a task evaluates, in manifest order. For the Scene task only
/// clips with a `scene_id` qualify.
fn eligible_queries<'d>(
    ds: &'d Dataset,
    task: RetrievalTask,
    opts: &RetrievalOptions,
) -> Result<Vec<&'d crate::data::ClipRecord>> {
    let all = ds.view_clips(View::Ego, opts.split);
    if all.is_empty() {
        return Err(Error::EmptyEvaluation("no ego queries in the selected split".into()));
    }
    let queries: Vec<_> = match task {
        RetrievalTask::Scene => all.into_iter().filter(|c| c.scene_id.is_some()).collect(),
        _ => all,
    };
    if queries.is_empty() {
        return Err(Error::TaskNotRunnable("no ego query carries a scene_id".into()));
    }
    if task == RetrievalTask::Moment {
        let any_synced = queries
            .iter()
            .any(|q| ds.take_clips(&q.take_id).iter().any(|c| c.view == View::Exo));
        if !any_synced {
            return Err(Error::TaskNotRunnable(
                "no ego query has a time-synchronized exo clip".into(),
            ));
        }
    }
    Ok(queries)
}

/// Rank the task's gallery for every eligible ego query.
///
/// The gallery holds the task's view restricted to `opts.split`; for
/// same-view galleries the query itself is left out of its own ranking.
pub fn run_retrieval_task(
    ds: &Dataset,
    task: RetrievalTask,
    heads: Option<&HeadPair>,
    opts: &RetrievalOptions,
) -> Result<BTreeMap<String, Ranking>> {
    let queries = eligible_queries(ds, task, opts)?;
    let gallery_view = opts.gallery_view(task);
    let gallery_clips = ds.view_clips(gallery_view, opts.split);
    if gallery_clips.is_empty() {
        return Err(Error::EmptyGallery(format!("no {gallery_view:?} clips in the selected split")));
    }

    let mut gallery: Vec<(String, Array1<f64>)> = Vec::with_capacity(gallery_clips.len());
    for clip in &gallery_clips {
        gallery.push((clip.clip_id.clone(), clip_vector(ds, &clip.clip_id, heads, opts.frames)?));
    }

    let mut rankings = BTreeMap::new();
    for query in queries {
        let qvec = clip_vector(ds, &query.clip_id, heads, opts.frames)?;
        if let Some((_, g0)) = gallery.first() {
            if g0.len() != qvec.len() {
                return Err(Error::DimensionMismatch(format!(
                    "query vectors are {}-dimensional but the gallery is {}-dimensional",
                    qvec.len(),
                    g0.len()
                )));
            }
        }
        let ranking = if gallery_view == View::Ego {
            // Same-view gallery: the query must not rank against itself.
            let others: Vec<(String, Array1<f64>)> = gallery
                .iter()
                .filter(|(id, _)| id != &query.clip_id)
                .cloned()
                .collect();
            rank_gallery(&query.clip_id, qvec.view(), &others, opts.top_k)?
        } else {
            rank_gallery(&query.clip_id, qvec.view(), &gallery, opts.top_k)?
        };
        rankings.insert(query.clip_id.clone(), ranking);
    }
    Ok(rankings)
}

/// Ground-truth positives for every query ranked by [`run_retrieval_task`],
/// intersected with the same split-filtered gallery. Sets may be empty; the
/// metrics layer excludes those queries and reports the count.
pub fn task_positives(
    ds: &Dataset,
    task: RetrievalTask,
    opts: &RetrievalOptions,
) -> Result<BTreeMap<String, BTreeSet<String>>> {
    let queries = eligible_queries(ds, task, opts)?;
    let gallery_view = opts.gallery_view(task);
    let gallery_ids: BTreeSet<String> = ds
        .view_clips(gallery_view, opts.split)
        .into_iter()
        .map(|c| c.clip_id.clone())
        .collect();

    let mut out = BTreeMap::new();
    for query in queries {
        let full = ds.positive_set_with_scene_gallery(task, &query.clip_id, opts.scene_gallery)?;
        let in_gallery: BTreeSet<String> =
            full.intersection(&gallery_ids).cloned().collect();
        out.insert(query.clip_id.clone(), in_gallery);
    }
    Ok(out)
}

/// Dump rankings as JSONL, one query per line, in ascending query-id order.
pub fn write_rankings_jsonl(path: &Path, rankings: &BTreeMap<String, Ranking>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for ranking in rankings.values() {
        serde_json::to_writer(&mut w, ranking)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
