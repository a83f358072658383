//! AU feature ingestion: manifests, per-video frame matrices, centering,
//! segmentation, noise augmentation, subject-wise folds and the synthetic
//! dataset generator.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use rand::seq::{index, IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::NUM_CLASSES;

/// The 20 AU / expression columns of a feature file, in file order.
pub const AU_NAMES: [&str; 20] = [
    "AU1", "AU2", "AU4", "AU5", "AU6", "AU7", "AU9", "AU10", "AU12", "AU14", "AU15", "AU17",
    "AU18", "AU20", "AU24", "AU25", "AU26", "AU28", "AU43", "Smirk",
];

/// Columns that carry the planted signal in synthetic data.
pub const PAIN_AUS: [&str; 6] = ["AU4", "AU6", "AU7", "AU9", "AU10", "AU43"];

const MANIFEST_HEADER: [&str; 4] = ["video_id", "subject_id", "vas", "feature_path"];

pub fn default_au_names() -> Vec<String> {
    AU_NAMES.iter().map(|s| s.to_string()).collect()
}

/// Per-video `T × A` matrix of AU values, row-major (one row per frame).
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatrix {
    frames: usize,
    values: Vec<f64>,
    au_names: Vec<String>,
}

impl FrameMatrix {
    pub fn new(values: Vec<f64>, au_names: Vec<String>) -> Result<Self> {
        let aus = au_names.len();
        if aus == 0 || values.is_empty() {
            return Err(Error::EmptyInput);
        }
        if !values.len().is_multiple_of(aus) {
            return Err(Error::DimensionMismatch {
                expected: aus * (values.len() / aus + 1),
                got: values.len(),
            });
        }
        Ok(Self {
            frames: values.len() / aus,
            values,
            au_names,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn aus(&self) -> usize {
        self.au_names.len()
    }

    pub fn au_names(&self) -> &[String] {
        &self.au_names
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let a = self.aus();
        &self.values[t * a..(t + 1) * a]
    }

    pub fn get(&self, t: usize, au: usize) -> f64 {
        self.values[t * self.aus() + au]
    }

    pub fn column(&self, au: usize) -> Vec<f64> {
        (0..self.frames).map(|t| self.get(t, au)).collect()
    }

    /// Restricts to `names`, in the requested order.
    pub fn select_columns(&self, names: &[String]) -> Result<Self> {
        let idx = names
            .iter()
            .map(|n| {
                self.au_names
                    .iter()
                    .position(|h| h == n)
                    .ok_or_else(|| Error::UnknownColumn(n.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut values = Vec::with_capacity(self.frames * idx.len());
        for t in 0..self.frames {
            let row = self.row(t);
            values.extend(idx.iter().map(|&i| row[i]));
        }
        Self::new(values, names.to_vec())
    }
}

/// Subtracts each column's per-video mean.
pub fn center(fm: &FrameMatrix) -> FrameMatrix {
    let a = fm.aus();
    let mut means = vec![0.0; a];
    for t in 0..fm.frames {
        for (m, v) in means.iter_mut().zip(fm.row(t)) {
            *m += v;
        }
    }
    for m in &mut means {
        *m /= fm.frames as f64;
    }
    let values = fm
        .values
        .chunks_exact(a)
        .flat_map(|row| row.iter().zip(&means).map(|(v, m)| v - m))
        .collect();
    FrameMatrix {
        frames: fm.frames,
        values,
        au_names: fm.au_names.clone(),
    }
}

/// Splits into `floor(T / seg_len)` consecutive, non-overlapping segments.
/// Each segment is a row-major `seg_len × A` slice; trailing frames are dropped.
pub fn segment(fm: &FrameMatrix, seg_len: usize) -> Result<Vec<&[f64]>> {
    if seg_len == 0 {
        return Err(Error::Config("segment length must be positive".into()));
    }
    let count = fm.frames / seg_len;
    if count == 0 {
        return Err(Error::VideoTooShort {
            frames: fm.frames,
            seg_len,
        });
    }
    Ok(fm
        .values
        .chunks_exact(seg_len * fm.aus())
        .take(count)
        .collect())
}

/// Adds i.i.d. `N(0, sigma²)` noise to every entry.
pub fn add_noise<R: Rng + ?Sized>(fm: &FrameMatrix, sigma: f64, rng: &mut R) -> FrameMatrix {
    if sigma == 0.0 {
        return fm.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma must be finite and nonnegative");
    let values = fm.values.iter().map(|v| v + normal.sample(rng)).collect();
    FrameMatrix {
        frames: fm.frames,
        values,
        au_names: fm.au_names.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoRecord {
    pub video_id: String,
    pub subject_id: String,
    pub vas: u8,
    pub feature_path: PathBuf,
}

/// Labeled videos sharing one AU column schema. Feature files are read on
/// first use and kept (centered) in an in-memory cache.
#[derive(Debug)]
pub struct Dataset {
    records: Vec<VideoRecord>,
    au_names: Vec<String>,
    by_id: HashMap<String, usize>,
    cache: RwLock<HashMap<usize, Arc<FrameMatrix>>>,
}

impl Dataset {
    pub fn new(records: Vec<VideoRecord>, au_names: Vec<String>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut by_id = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.vas as usize >= NUM_CLASSES {
                return Err(Error::Config(format!(
                    "video {}: vas {} outside 0..=10",
                    r.video_id, r.vas
                )));
            }
            if by_id.insert(r.video_id.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate video_id {}", r.video_id)));
            }
        }
        Ok(Self {
            records,
            au_names,
            by_id,
            cache: RwLock::new(HashMap::new()),
        })
    }

    /// Builds a dataset whose feature matrices are already in memory.
    /// The matrices are raw (uncentered); `records[i].feature_path` is ignored.
    pub fn from_matrices(records: Vec<VideoRecord>, matrices: Vec<FrameMatrix>) -> Result<Self> {
        if records.len() != matrices.len() {
            return Err(Error::DimensionMismatch {
                expected: records.len(),
                got: matrices.len(),
            });
        }
        let au_names = matrices
            .first()
            .map(|m| m.au_names.clone())
            .ok_or(Error::EmptyDataset)?;
        let ds = Self::new(records, au_names)?;
        {
            let mut cache = ds.cache.write().expect("feature cache poisoned");
            for (i, m) in matrices.iter().enumerate() {
                if m.au_names != ds.au_names {
                    return Err(Error::Config(format!(
                        "video {} has a different AU schema",
                        ds.records[i].video_id
                    )));
                }
                cache.insert(i, Arc::new(center(m)));
            }
        }
        Ok(ds)
    }

    /// Switches the column schema; drops cached matrices.
    pub fn with_columns(mut self, au_names: Vec<String>) -> Self {
        self.au_names = au_names;
        self.cache = RwLock::new(HashMap::new());
        self
    }

    pub fn records(&self) -> &[VideoRecord] {
        &self.records
    }

    pub fn record(&self, idx: usize) -> &VideoRecord {
        &self.records[idx]
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn au_names(&self) -> &[String] {
        &self.au_names
    }

    pub fn index_of(&self, video_id: &str) -> Option<usize> {
        self.by_id.get(video_id).copied()
    }

    /// Maps video ids to record indices.
    pub fn indices(&self, ids: &[String]) -> Result<Vec<usize>> {
        ids.iter()
            .map(|id| {
                self.index_of(id)
                    .ok_or_else(|| Error::Config(format!("unknown video_id {id}")))
            })
            .collect()
    }

    pub fn subjects(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.subject_id.as_str()).collect()
    }

    /// Centered feature matrix of record `idx`, loaded on first access.
    pub fn centered(&self, idx: usize) -> Result<Arc<FrameMatrix>> {
        if let Some(m) = self.cache.read().expect("feature cache poisoned").get(&idx) {
            return Ok(Arc::clone(m));
        }
        let raw = load_video_features(&self.records[idx].feature_path, &self.au_names)?;
        let centered = Arc::new(center(&raw));
        let mut cache = self.cache.write().expect("feature cache poisoned");
        Ok(Arc::clone(cache.entry(idx).or_insert(centered)))
    }
}

/// Reads a manifest (`video_id,subject_id,vas,feature_path`). Feature paths are
/// resolved relative to the manifest's directory; files are not opened.
pub fn load_manifest(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(parse_err(
            1,
            format!("expected header {}", MANIFEST_HEADER.join(",")),
        ));
    }
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| parse_err(line, e.to_string()))?;
        if row.len() != 4 {
            return Err(parse_err(
                line,
                format!("expected 4 fields, got {}", row.len()),
            ));
        }
        let vas: i64 = row[2]
            .parse()
            .map_err(|_| parse_err(line, format!("vas {:?} is not an integer", &row[2])))?;
        if !(0..=10).contains(&vas) {
            return Err(parse_err(line, format!("vas {vas} outside 0..=10")));
        }
        if !seen.insert(row[0].to_string()) {
            return Err(parse_err(line, format!("duplicate video_id {}", &row[0])));
        }
        records.push(VideoRecord {
            video_id: row[0].to_string(),
            subject_id: row[1].to_string(),
            vas: vas as u8,
            feature_path: base.join(&row[3]),
        });
    }
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Dataset::new(records, default_au_names())
}

/// Reads one feature file restricted to `au_columns` (in that order).
pub fn load_video_features(path: &Path, au_columns: &[String]) -> Result<FrameMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let idx = au_columns
        .iter()
        .map(|name| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::UnknownColumn(name.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut values = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| parse_err(line, e.to_string()))?;
        for &c in &idx {
            let cell = row
                .get(c)
                .ok_or_else(|| parse_err(line, format!("missing column {}", &header[c])))?;
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(line, format!("non-numeric cell {cell:?}")))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(parse_err(line, format!("value {v} outside [0,1]")));
            }
            values.push(v);
        }
    }
    if values.is_empty() {
        return Err(parse_err(2, "no frames".into()));
    }
    FrameMatrix::new(values, au_columns.to_vec())
}

/// One cross-validation trial, as lists of video ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trial {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    /// Subject ids per fold.
    pub folds: Vec<Vec<String>>,
    /// Trial `i` tests on fold `i`.
    pub trials: Vec<Trial>,
}

/// Subject-wise k-fold split. Subjects are shuffled and dealt round-robin into
/// `k` folds; each trial tests on one fold and draws `val_count` validation
/// videos uniformly from the remaining videos.
pub fn make_folds<R: Rng + ?Sized>(
    ds: &Dataset,
    k: usize,
    val_count: usize,
    rng: &mut R,
) -> Result<FoldSplit> {
    let mut subjects: Vec<&str> = ds.subjects().into_iter().collect();
    if k < 2 || subjects.len() < k {
        return Err(Error::Fold(format!(
            "{} subjects cannot fill {k} folds",
            subjects.len()
        )));
    }
    subjects.shuffle(rng);
    let mut folds = vec![Vec::new(); k];
    for (i, s) in subjects.iter().enumerate() {
        folds[i % k].push(s.to_string());
    }
    for f in &mut folds {
        f.sort();
    }

    let mut trials = Vec::with_capacity(k);
    for fold in &folds {
        let in_fold: HashSet<&str> = fold.iter().map(String::as_str).collect();
        let (test, pool): (Vec<&VideoRecord>, Vec<&VideoRecord>) = ds
            .records()
            .iter()
            .partition(|r| in_fold.contains(r.subject_id.as_str()));
        if val_count >= pool.len() {
            return Err(Error::Fold(format!(
                "validation count {val_count} leaves no training videos (pool has {})",
                pool.len()
            )));
        }
        let mut picked = index::sample(rng, pool.len(), val_count).into_vec();
        picked.sort_unstable();
        let picked: HashSet<usize> = picked.into_iter().collect();
        let mut train = Vec::new();
        let mut validation = Vec::new();
        for (i, r) in pool.iter().enumerate() {
            if picked.contains(&i) {
                validation.push(r.video_id.clone());
            } else {
                train.push(r.video_id.clone());
            }
        }
        trials.push(Trial {
            train,
            validation,
            test: test.iter().map(|r| r.video_id.clone()).collect(),
        });
    }
    Ok(FoldSplit { folds, trials })
}

/// Parameters of the synthetic AU generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub subjects: usize,
    pub videos_per_class: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    /// Scales the pain bursts; 0 gives a dataset whose labels carry no signal.
    pub signal_strength: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            subjects: 25,
            videos_per_class: 12,
            min_frames: 64,
            max_frames: 160,
            signal_strength: 1.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.subjects == 0 || self.videos_per_class == 0 {
            return Err(Error::Config(
                "synth: subjects and videos_per_class must be positive".into(),
            ));
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return Err(Error::Config(
                "synth: need 0 < min_frames <= max_frames".into(),
            ));
        }
        if !(self.signal_strength >= 0.0 && self.signal_strength.is_finite()) {
            return Err(Error::Config("synth: signal_strength must be >= 0".into()));
        }
        Ok(())
    }
}

struct SubjectProfile {
    baseline: Vec<f64>,
    gain: f64,
}

/// Draws every video of a synthetic dataset in memory. Pain AUs get smooth
/// activation bursts whose count and amplitude grow with VAS; every column
/// gets a subject baseline, AR(1) background noise and VAS-independent
/// distractor bursts.
pub fn synth_matrices(spec: &SynthSpec) -> Result<(Vec<VideoRecord>, Vec<FrameMatrix>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let names = default_au_names();
    let a = names.len();
    let pain_cols: Vec<usize> = PAIN_AUS
        .iter()
        .map(|p| {
            names
                .iter()
                .position(|n| n == p)
                .expect("pain AU in schema")
        })
        .collect();
    let other_cols: Vec<usize> = (0..a).filter(|c| !pain_cols.contains(c)).collect();

    let profiles: Vec<SubjectProfile> = (0..spec.subjects)
        .map(|_| SubjectProfile {
            baseline: (0..a).map(|_| rng.random_range(0.05..0.35)).collect(),
            gain: rng.random_range(0.8..1.2),
        })
        .collect();

    // Deal shuffled video slots round-robin so every subject gets videos
    // from a spread of classes.
    let total = NUM_CLASSES * spec.videos_per_class;
    let mut slots: Vec<usize> = (0..total).collect();
    slots.shuffle(&mut rng);
    let mut subject_of = vec![0usize; total];
    for (i, &slot) in slots.iter().enumerate() {
        subject_of[slot] = i % spec.subjects;
    }

    let noise = Normal::new(0.0, 0.04).expect("valid normal");
    let mut records = Vec::with_capacity(total);
    let mut matrices = Vec::with_capacity(total);
    for v in 0..total {
        let vas = v / spec.videos_per_class;
        let subject = subject_of[v];
        let profile = &profiles[subject];
        let frames = rng.random_range(spec.min_frames..=spec.max_frames);
        let mut values = vec![0.0; frames * a];

        for c in 0..a {
            let mut e = 0.0;
            for t in 0..frames {
                e = 0.7 * e + noise.sample(&mut rng);
                values[t * a + c] = profile.baseline[c] + e;
            }
        }

        let burst = |values: &mut [f64], cols: &[(usize, f64)], amp: f64, rng: &mut ChaCha8Rng| {
            let len = rng.random_range(10..=24).min(frames);
            let start = rng.random_range(0..=frames - len);
            for k in 0..len {
                let shape = (std::f64::consts::PI * (k as f64 + 0.5) / len as f64).sin();
                for &(c, w) in cols {
                    values[(start + k) * a + c] += amp * w * shape;
                }
            }
        };

        let pain_bursts = vas.div_ceil(2);
        let amplitude = spec.signal_strength * profile.gain * (0.1 + 0.07 * vas as f64);
        for _ in 0..pain_bursts {
            let cols: Vec<(usize, f64)> = pain_cols
                .iter()
                .map(|&c| (c, rng.random_range(0.5..1.0)))
                .collect();
            burst(&mut values, &cols, amplitude, &mut rng);
        }
        let distractors = rng.random_range(0..=3);
        for _ in 0..distractors {
            let picked: Vec<(usize, f64)> = other_cols
                .choose_multiple(&mut rng, 3)
                .map(|&c| (c, rng.random_range(0.5..1.0)))
                .collect();
            let amp = rng.random_range(0.1..0.8);
            burst(&mut values, &picked, amp, &mut rng);
        }

        for x in &mut values {
            *x = x.clamp(0.0, 1.0);
        }
        let video_id = format!("v{v:04}");
        records.push(VideoRecord {
            feature_path: PathBuf::from(format!("features/{video_id}.csv")),
            video_id,
            subject_id: format!("s{subject:02}"),
            vas: vas as u8,
        });
        matrices.push(FrameMatrix::new(values, names.clone())?);
    }
    Ok((records, matrices))
}

/// Generates a synthetic dataset and writes `manifest.csv` plus one feature
/// file per video under `out_dir`. Returns the dataset as loaded from disk.
pub fn synth_generate(spec: &SynthSpec, out_dir: &Path) -> Result<Dataset> {
    let (records, matrices) = synth_matrices(spec)?;
    let feat_dir = out_dir.join("features");
    fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;

    for (rec, fm) in records.iter().zip(&matrices) {
        let path = out_dir.join(&rec.feature_path);
        write_feature_file(&path, fm)?;
    }
    let manifest = out_dir.join("manifest.csv");
    let mut text = MANIFEST_HEADER.join(",");
    text.push('\n');
    for r in &records {
        text.push_str(&format!(
            "{},{},{},{}\n",
            r.video_id,
            r.subject_id,
            r.vas,
            r.feature_path.display()
        ));
    }
    fs::write(&manifest, text).map_err(|e| Error::io(&manifest, e))?;
    load_manifest(&manifest)
}

/// Writes a feature file with five decimals per value.
pub fn write_feature_file(path: &Path, fm: &FrameMatrix) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", fm.au_names.join(",")).map_err(io)?;
    for t in 0..fm.frames {
        let line: Vec<String> = fm.row(t).iter().map(|v| format!("{v:.5}")).collect();
        writeln!(w, "{}", line.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fm(cols: &[&[f64]]) -> FrameMatrix {
        let frames = cols[0].len();
        let mut values = Vec::new();
        for t in 0..frames {
            for c in cols {
                values.push(c[t]);
            }
        }
        let names = (0..cols.len()).map(|i| format!("c{i}")).collect();
        FrameMatrix::new(values, names).unwrap()
    }

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn center_examples() {
        let c = center(&fm(&[&[0.2, 0.4, 0.6], &[0.5, 0.5, 0.5]]));
        assert!(close(&c.column(0), &[-0.2, 0.0, 0.2]));
        assert!(close(&c.column(1), &[0.0, 0.0, 0.0]));
        let single = center(&fm(&[&[0.7]]));
        assert_eq!(single.column(0), vec![0.0]);
    }

    #[test]
    fn segment_counts() {
        let make = |t: usize| fm(&[&vec![0.1; t]]);
        assert_eq!(segment(&make(40), 16).unwrap().len(), 2);
        assert_eq!(segment(&make(16), 16).unwrap().len(), 1);
        assert!(matches!(
            segment(&make(15), 16),
            Err(Error::VideoTooShort {
                frames: 15,
                seg_len: 16
            })
        ));
    }

    #[test]
    fn segments_cover_leading_frames() {
        let col: Vec<f64> = (0..40).map(|t| t as f64 / 40.0).collect();
        let m = fm(&[&col, &col]);
        let segs = segment(&m, 16).unwrap();
        let joined: Vec<f64> = segs.concat();
        assert_eq!(joined, m.values()[..32 * 2]);
    }

    #[test]
    fn zero_noise_is_identity() {
        let m = fm(&[&[0.1, 0.2, 0.3]]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(add_noise(&m, 0.0, &mut rng), m);
    }

    #[test]
    fn noise_is_seed_deterministic() {
        let m = fm(&[&[0.1, 0.2, 0.3, 0.4], &[0.5; 4]]);
        let a = add_noise(&m, 0.05, &mut ChaCha8Rng::seed_from_u64(3));
        let b = add_noise(&m, 0.05, &mut ChaCha8Rng::seed_from_u64(3));
        let c = add_noise(&m, 0.05, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(a.values(), b.values());
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn select_columns_reorders() {
        let m = fm(&[&[0.1, 0.2], &[0.3, 0.4], &[0.5, 0.6]]);
        let s = m.select_columns(&["c2".into(), "c0".into()]).unwrap();
        assert_eq!(s.values(), &[0.5, 0.1, 0.6, 0.2]);
        assert!(matches!(
            m.select_columns(&["AU99".into()]),
            Err(Error::UnknownColumn(_))
        ));
    }

    #[test]
    fn synth_covers_all_classes() {
        let spec = SynthSpec {
            subjects: 10,
            videos_per_class: 3,
            ..SynthSpec::default()
        };
        let (records, matrices) = synth_matrices(&spec).unwrap();
        assert_eq!(records.len(), 33);
        for c in 0..NUM_CLASSES as u8 {
            assert_eq!(records.iter().filter(|r| r.vas == c).count(), 3);
        }
        let subjects: HashSet<_> = records.iter().map(|r| &r.subject_id).collect();
        assert_eq!(subjects.len(), 10);
        for m in &matrices {
            assert!(m.frames() >= 64 && m.frames() <= 160);
            assert!(m.values().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn synth_rejects_bad_spec() {
        let spec = SynthSpec {
            min_frames: 100,
            max_frames: 50,
            ..SynthSpec::default()
        };
        assert!(matches!(synth_matrices(&spec), Err(Error::Config(_))));
    }
}
