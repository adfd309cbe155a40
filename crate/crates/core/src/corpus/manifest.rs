//! The corpus manifest: one JSON document plus MIDI payloads stored next to
//! it under `segments/`, `performances/` and `variations/`, each named
//! `{id}.mid`.
//!
//! Every mutation builds the next manifest, validates it, writes any new
//! payload files, then atomically replaces the JSON (write to a temporary
//! sibling, then rename). A failed mutation removes the files it wrote and
//! leaves the in-memory state untouched.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::leadsheet::{ChordChange, KeyHint};
use super::scoring::VariationSegment;
use super::segmentation::OriginalSegment;
use super::{CorpusError, Result};
use crate::midi::{parse_midi, write_midi, NoteEvent, NoteSequence, TimingMap};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Schema version, currently 1.
    pub version: u32,
    pub standards: Vec<StandardEntry>,
    pub performances: Vec<PerformanceEntry>,
    pub segments: Vec<SegmentEntry>,
    pub variations: Vec<VariationEntry>,
    pub pairs: Vec<PairRecord>,
}

impl Default for Manifest {
    fn default() -> Self {
        Manifest {
            version: MANIFEST_VERSION,
            standards: vec![],
            performances: vec![],
            segments: vec![],
            variations: vec![],
            pairs: vec![],
        }
    }
}

/// A tune; the lead sheet itself is not stored, only its segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardEntry {
    pub id: String,
    pub title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_hint: Option<KeyHint>,
}

/// A transcribed performance of a standard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceEntry {
    pub id: String,
    pub standard_id: String,
    pub performer: String,
    /// End of the last note, in seconds.
    pub duration_s: f64,
    /// Payload path relative to the manifest directory.
    pub midi: String,
}

/// An Original segment. The payload holds the 120 BPM rendering (melody on
/// channel 0, chord voicings on channel 1) starting at 0 s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentEntry {
    pub id: String,
    pub standard_id: String,
    pub start_bar: u32,
    pub bars: u32,
    /// Chord changes on the lead sheet's beat clock.
    pub chords: Vec<ChordChange>,
    pub midi: String,
}

/// A Variation window. The payload holds the clipped notes rebased so the
/// window starts at 0 s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationEntry {
    pub id: String,
    pub performance_id: String,
    pub start_s: f64,
    pub end_s: f64,
    pub midi: String,
}

/// One Original/Variation pair with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub id: String,
    pub original_id: String,
    pub variation_id: String,
    pub standard_title: String,
    pub performer: String,
    pub performance_id: String,
    pub created_at: DateTime<Utc>,
    pub annotator: String,
}

/// Distinct standards, performances and performers among the saved pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub pairs: usize,
    pub standards: usize,
    pub performances: usize,
    pub pianists: usize,
}

fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.' | '@'));
    if ok {
        Ok(())
    } else {
        Err(CorpusError::InvalidId(id.to_string()))
    }
}

fn unique<'a>(kind: &'static str, ids: impl Iterator<Item = &'a str>) -> Result<HashSet<&'a str>> {
    let mut seen = HashSet::new();
    for id in ids {
        check_id(id)?;
        if !seen.insert(id) {
            return Err(CorpusError::Duplicate { kind, id: id.to_string() });
        }
    }
    Ok(seen)
}

fn dangling(kind: &'static str, id: &str, target: &'static str, target_id: &str) -> CorpusError {
    CorpusError::Dangling { kind, id: id.to_string(), target, target_id: target_id.to_string() }
}

impl Manifest {
    /// Checks id uniqueness, every cross reference, and pair provenance.
    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(CorpusError::UnsupportedVersion(self.version));
        }
        let standards = unique("standard", self.standards.iter().map(|s| s.id.as_str()))?;
        unique("performance", self.performances.iter().map(|s| s.id.as_str()))?;
        unique("segment", self.segments.iter().map(|s| s.id.as_str()))?;
        unique("variation", self.variations.iter().map(|s| s.id.as_str()))?;
        unique("pair", self.pairs.iter().map(|s| s.id.as_str()))?;

        for p in &self.performances {
            if !standards.contains(p.standard_id.as_str()) {
                return Err(dangling("performance", &p.id, "standard", &p.standard_id));
            }
        }
        for s in &self.segments {
            if !standards.contains(s.standard_id.as_str()) {
                return Err(dangling("segment", &s.id, "standard", &s.standard_id));
            }
        }
        for v in &self.variations {
            if self.performance(&v.performance_id).is_none() {
                return Err(dangling("variation", &v.id, "performance", &v.performance_id));
            }
        }
        let mut keys = HashSet::new();
        for r in &self.pairs {
            let seg = self.segment(&r.original_id).ok_or_else(|| dangling("pair", &r.id, "segment", &r.original_id))?;
            let var =
                self.variation(&r.variation_id).ok_or_else(|| dangling("pair", &r.id, "variation", &r.variation_id))?;
            let perf = self.performance(&var.performance_id).expect("checked above");
            let mismatch = |reason: String| CorpusError::PairMismatch { id: r.id.clone(), reason };
            if r.performance_id != perf.id {
                return Err(mismatch(format!("variation belongs to performance {:?}", perf.id)));
            }
            if r.performer != perf.performer {
                return Err(mismatch(format!("performer is {:?}", perf.performer)));
            }
            let seg_title = &self.standard(&seg.standard_id).expect("checked above").title;
            let perf_title = &self.standard(&perf.standard_id).expect("checked above").title;
            if &r.standard_title != seg_title || &r.standard_title != perf_title {
                return Err(mismatch(format!(
                    "standard title {:?} does not match segment {:?} and performance {:?}",
                    r.standard_title, seg_title, perf_title
                )));
            }
            if !keys.insert((r.original_id.as_str(), r.variation_id.as_str())) {
                return Err(CorpusError::Duplicate {
                    kind: "pair",
                    id: format!("{}/{}", r.original_id, r.variation_id),
                });
            }
        }
        Ok(())
    }

    pub fn standard(&self, id: &str) -> Option<&StandardEntry> {
        self.standards.iter().find(|s| s.id == id)
    }

    pub fn performance(&self, id: &str) -> Option<&PerformanceEntry> {
        self.performances.iter().find(|s| s.id == id)
    }

    pub fn segment(&self, id: &str) -> Option<&SegmentEntry> {
        self.segments.iter().find(|s| s.id == id)
    }

    pub fn variation(&self, id: &str) -> Option<&VariationEntry> {
        self.variations.iter().find(|s| s.id == id)
    }

    pub fn pair(&self, id: &str) -> Option<&PairRecord> {
        self.pairs.iter().find(|s| s.id == id)
    }

    pub fn segments_of(&self, standard_id: &str) -> Vec<&SegmentEntry> {
        self.segments.iter().filter(|s| s.standard_id == standard_id).collect()
    }

    pub fn summary(&self) -> CorpusSummary {
        let distinct = |f: fn(&PairRecord) -> &str| self.pairs.iter().map(f).collect::<HashSet<_>>().len();
        CorpusSummary {
            pairs: self.pairs.len(),
            standards: distinct(|p| p.standard_title.as_str()),
            performances: distinct(|p| p.performance_id.as_str()),
            pianists: distinct(|p| p.performer.as_str()),
        }
    }

    /// Smallest `p{n:04}` not already used.
    fn next_pair_id(&self) -> String {
        let used: HashSet<&str> = self.pairs.iter().map(|p| p.id.as_str()).collect();
        (self.pairs.len() + 1..)
            .map(|n| format!("p{n:04}"))
            .find(|id| !used.contains(id.as_str()))
            .expect("unbounded range")
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io { path: path.to_path_buf(), source }
}

/// Reads and validates a manifest.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|source| CorpusError::Json { path: path.to_path_buf(), source })?;
    manifest.validate()?;
    Ok(manifest)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let result = (|| {
        use std::io::Write;
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(io_err(path))
}

/// Validates, then atomically replaces the manifest file.
pub fn save_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    manifest.validate()?;
    let mut json = serde_json::to_string_pretty(manifest).expect("manifest serialises");
    json.push('\n');
    write_atomic(path, json.as_bytes())
}

/// Single-writer handle on a manifest and its payload directory.
#[derive(Debug, Clone)]
pub struct CorpusStore {
    path: PathBuf,
    root: PathBuf,
    manifest: Manifest,
}

impl CorpusStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let manifest = load_manifest(&path)?;
        Ok(CorpusStore { root: root_of(&path), path, manifest })
    }

    /// Opens the manifest, creating an empty one (and its directory) if absent.
    pub fn open_or_create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if path.exists() {
            return Self::open(path);
        }
        let root = root_of(path);
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        let store = CorpusStore { root, path: path.to_path_buf(), manifest: Manifest::default() };
        save_manifest(&store.path, &store.manifest)?;
        Ok(store)
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn payload_path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Persists `next` after writing `files`; on failure removes those files.
    fn commit(&mut self, next: Manifest, files: Vec<(PathBuf, Vec<u8>)>) -> Result<()> {
        next.validate()?;
        let mut written = Vec::new();
        let mut result = Ok(());
        for (path, bytes) in &files {
            if path.exists() {
                result = Err(CorpusError::Io {
                    path: path.clone(),
                    source: std::io::Error::new(std::io::ErrorKind::AlreadyExists, "payload file already exists"),
                });
                break;
            }
            if let Some(dir) = path.parent() {
                if let Err(e) = fs::create_dir_all(dir) {
                    result = Err(io_err(dir)(e));
                    break;
                }
            }
            match write_atomic(path, bytes) {
                Ok(()) => written.push(path.clone()),
                Err(e) => {
                    result = Err(e);
                    break;
                }
            }
        }
        let result = result.and_then(|_| save_manifest(&self.path, &next));
        match result {
            Ok(()) => {
                self.manifest = next;
                Ok(())
            }
            Err(e) => {
                for p in written {
                    let _ = fs::remove_file(p);
                }
                Err(e)
            }
        }
    }

    pub fn add_standard(&mut self, id: &str, title: &str, key_hint: Option<KeyHint>) -> Result<()> {
        let mut next = self.manifest.clone();
        next.standards.push(StandardEntry { id: id.to_string(), title: title.to_string(), key_hint });
        self.commit(next, vec![])
    }

    pub fn add_performance(
        &mut self,
        id: &str,
        standard_id: &str,
        performer: &str,
        seq: &NoteSequence,
    ) -> Result<PerformanceEntry> {
        check_id(id)?;
        let rel = format!("performances/{id}.mid");
        let bytes = midi_bytes_of(&self.payload_path(&rel), seq)?;
        let entry = PerformanceEntry {
            id: id.to_string(),
            standard_id: standard_id.to_string(),
            performer: performer.to_string(),
            duration_s: seq.notes.iter().map(NoteEvent::end).fold(0.0, f64::max),
            midi: rel.clone(),
        };
        let mut next = self.manifest.clone();
        next.performances.push(entry.clone());
        self.commit(next, vec![(self.payload_path(&rel), bytes)])?;
        Ok(entry)
    }

    /// Adds Original segments; each segment's lead-sheet id names its standard.
    pub fn add_segments(&mut self, segments: &[OriginalSegment]) -> Result<Vec<SegmentEntry>> {
        let mut next = self.manifest.clone();
        let mut files = Vec::new();
        let mut entries = Vec::new();
        for seg in segments {
            check_id(&seg.id)?;
            let rel = format!("segments/{}.mid", seg.id);
            let path = self.payload_path(&rel);
            files.push((path.clone(), midi_bytes_of(&path, &seg.to_midi())?));
            let entry = SegmentEntry {
                id: seg.id.clone(),
                standard_id: seg.leadsheet_id.clone(),
                start_bar: seg.start_bar,
                bars: seg.bars,
                chords: seg.chords.clone(),
                midi: rel,
            };
            next.segments.push(entry.clone());
            entries.push(entry);
        }
        self.commit(next, files)?;
        Ok(entries)
    }

    /// Appends a pair; its variation is stored unless an identical window
    /// with the same id already exists.
    pub fn save_pair(&mut self, record: PairRecord, variation: &VariationSegment) -> Result<()> {
        if variation.notes.is_empty() {
            return Err(CorpusError::EmptyWindow);
        }
        if record.variation_id != variation.id {
            return Err(CorpusError::PairMismatch {
                id: record.id.clone(),
                reason: format!("variation id {:?} differs from payload {:?}", record.variation_id, variation.id),
            });
        }
        if self.manifest.pair(&record.id).is_some() {
            return Err(CorpusError::Duplicate { kind: "pair", id: record.id.clone() });
        }
        let duplicate = self
            .manifest
            .pairs
            .iter()
            .any(|p| p.original_id == record.original_id && p.variation_id == record.variation_id);
        if duplicate {
            return Err(CorpusError::Duplicate {
                kind: "pair",
                id: format!("{}/{}", record.original_id, record.variation_id),
            });
        }
        let mut next = self.manifest.clone();
        let mut files = Vec::new();
        match self.manifest.variation(&variation.id) {
            Some(v) if v.performance_id == variation.performance_id && v.start_s == variation.start_s && v.end_s == variation.end_s => {}
            Some(_) => return Err(CorpusError::Duplicate { kind: "variation", id: variation.id.clone() }),
            None => {
                check_id(&variation.id)?;
                let rel = format!("variations/{}.mid", variation.id);
                let path = self.payload_path(&rel);
                let seq = NoteSequence::new(variation.rebased_notes(), TimingMap::default());
                files.push((path.clone(), midi_bytes_of(&path, &seq)?));
                next.variations.push(VariationEntry {
                    id: variation.id.clone(),
                    performance_id: variation.performance_id.clone(),
                    start_s: variation.start_s,
                    end_s: variation.end_s,
                    midi: rel,
                });
            }
        }
        next.pairs.push(record);
        self.commit(next, files)
    }

    /// Cuts `[start_s, end_s)` from a performance and saves it paired with an
    /// Original, filling in provenance from the manifest.
    pub fn pair_window(
        &mut self,
        original_id: &str,
        performance_id: &str,
        start_s: f64,
        end_s: f64,
        annotator: &str,
        created_at: DateTime<Utc>,
    ) -> Result<PairRecord> {
        let seg = self
            .manifest
            .segment(original_id)
            .ok_or_else(|| CorpusError::NotFound { kind: "segment", id: original_id.to_string() })?;
        let perf = self
            .manifest
            .performance(performance_id)
            .ok_or_else(|| CorpusError::NotFound { kind: "performance", id: performance_id.to_string() })?
            .clone();
        let title = self.manifest.standard(&seg.standard_id).expect("validated").title.clone();
        let notes = self.load_performance(performance_id)?.notes;
        let variation = VariationSegment::cut(performance_id, &notes, start_s, end_s)?;
        let record = PairRecord {
            id: self.manifest.next_pair_id(),
            original_id: original_id.to_string(),
            variation_id: variation.id.clone(),
            standard_title: title,
            performer: perf.performer,
            performance_id: performance_id.to_string(),
            created_at,
            annotator: annotator.to_string(),
        };
        self.save_pair(record.clone(), &variation)?;
        Ok(record)
    }

    /// Removes a pair and, if nothing else uses it, its variation and payload.
    pub fn delete_pair(&mut self, id: &str) -> Result<PairRecord> {
        let record =
            self.manifest.pair(id).cloned().ok_or_else(|| CorpusError::NotFound { kind: "pair", id: id.to_string() })?;
        let mut next = self.manifest.clone();
        next.pairs.retain(|p| p.id != id);
        let orphan = !next.pairs.iter().any(|p| p.variation_id == record.variation_id);
        let mut stale = None;
        if orphan {
            if let Some(pos) = next.variations.iter().position(|v| v.id == record.variation_id) {
                stale = Some(self.payload_path(&next.variations.remove(pos).midi));
            }
        }
        self.commit(next, vec![])?;
        if let Some(path) = stale {
            let _ = fs::remove_file(path);
        }
        Ok(record)
    }

    fn read_payload(&self, rel: &str) -> Result<NoteSequence> {
        let path = self.payload_path(rel);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        parse_midi(&bytes).map_err(|source| CorpusError::Midi { path, source })
    }

    pub fn load_original(&self, id: &str) -> Result<OriginalSegment> {
        let e = self.manifest.segment(id).ok_or_else(|| CorpusError::NotFound { kind: "segment", id: id.to_string() })?;
        let seq = self.read_payload(&e.midi)?;
        Ok(OriginalSegment::from_rendered(&e.id, &e.standard_id, e.start_bar, e.bars, &seq, e.chords.clone()))
    }

    pub fn load_performance(&self, id: &str) -> Result<NoteSequence> {
        let e = self
            .manifest
            .performance(id)
            .ok_or_else(|| CorpusError::NotFound { kind: "performance", id: id.to_string() })?;
        self.read_payload(&e.midi)
    }

    pub fn load_variation(&self, id: &str) -> Result<VariationSegment> {
        let e =
            self.manifest.variation(id).ok_or_else(|| CorpusError::NotFound { kind: "variation", id: id.to_string() })?;
        let seq = self.read_payload(&e.midi)?;
        Ok(VariationSegment {
            id: e.id.clone(),
            performance_id: e.performance_id.clone(),
            start_s: e.start_s,
            end_s: e.end_s,
            notes: seq.notes.iter().map(|n| NoteEvent { onset: n.onset + e.start_s, ..*n }).collect(),
        })
    }

    /// Raw payload bytes for a segment, performance or variation id.
    pub fn midi_bytes(&self, id: &str) -> Result<Vec<u8>> {
        let m = &self.manifest;
        let rel = m
            .segment(id)
            .map(|e| &e.midi)
            .or_else(|| m.performance(id).map(|e| &e.midi))
            .or_else(|| m.variation(id).map(|e| &e.midi))
            .ok_or_else(|| CorpusError::NotFound { kind: "midi", id: id.to_string() })?;
        let path = self.payload_path(rel);
        fs::read(&path).map_err(io_err(&path))
    }

    /// Maps each standard id to its title.
    pub fn titles(&self) -> HashMap<&str, &str> {
        self.manifest.standards.iter().map(|s| (s.id.as_str(), s.title.as_str())).collect()
    }
}

fn root_of(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn midi_bytes_of(path: &Path, seq: &NoteSequence) -> Result<Vec<u8>> {
    write_midi(seq).map_err(|source| CorpusError::Midi { path: path.to_path_buf(), source })
}
