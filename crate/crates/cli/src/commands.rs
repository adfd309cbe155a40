//! Subcommands. Each maps onto one library operation and reads or writes
//! the files named by its flags.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use chrono::Utc;
use clap::{Args, Parser, Subcommand, ValueEnum};

use varkit::analysis::{
    align_melodies, average_deviation, contour, contour_csv, contour_svg, corpus_stats_with, extract_melody_skyline,
    harmonic_rhythm, harmonic_rhythm_csv, harmonic_rhythm_svg, Series,
};
use varkit::corpus::synthetic::SyntheticCorpus;
use varkit::corpus::{
    review_pair, scan_candidates, score_candidate_with, segment_leadsheet_with, trim_to_refrain, CorpusStore,
    LeadSheet, ScoreConfig, Section, SectionLabel, SegmentationOptions, VariationSegment, DEFAULT_TOP_K,
};
use varkit::midi::{parse_midi, write_midi};
use varkit::overpaint::{
    describe, encode, evaluate_generation, example_from_pair, generate_from_notes, split, train, Checkpoint,
    GenerateOptions, ModelConfig, OverpaintError, Sampling, TrainConfig, TrainHooks,
};
use varkit::par::Execution;
use varkit::{Clock, NoteSequence, Segment, TimingMap};

#[derive(Debug, Parser)]
#[command(name = "varkit", version, about = "Jazz variation corpus toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ManifestArg {
    /// Corpus manifest JSON.
    #[arg(long, env = "VARKIT_MANIFEST")]
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Group {
    /// Distinct Originals that appear in saved pairs.
    Originals,
    /// Distinct Variations that appear in saved pairs.
    Variations,
    /// Every Original segment in the manifest.
    Segments,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create an empty manifest.
    Init(ManifestArg),
    /// Write the bundled synthetic corpus (lead sheets, sections, performances).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Cut a lead sheet's final refrain into Original segments.
    Segment {
        #[arg(long)]
        leadsheet: PathBuf,
        /// JSON list of {label, start_bar, end_bar}; without it the whole sheet is the refrain.
        #[arg(long)]
        sections: Option<PathBuf>,
        /// Directory for the segment MIDI files.
        #[arg(long)]
        out: PathBuf,
        /// Standard id; defaults to the lead-sheet file stem.
        #[arg(long)]
        id: Option<String>,
        #[arg(long)]
        title: Option<String>,
        #[arg(long, default_value_t = 4)]
        bars: u32,
        #[arg(long)]
        keep_partial: bool,
        /// Explicit window start bars, comma separated.
        #[arg(long, value_delimiter = ',')]
        boundaries: Option<Vec<u32>>,
        /// Register the standard and its segments here as well.
        #[arg(long, env = "VARKIT_MANIFEST")]
        manifest: Option<PathBuf>,
    },
    /// Register a transcribed performance.
    AddPerformance {
        #[command(flatten)]
        manifest: ManifestArg,
        #[arg(long)]
        midi: PathBuf,
        #[arg(long)]
        id: String,
        #[arg(long)]
        standard: String,
        #[arg(long)]
        performer: String,
    },
    /// Score one window, or rank candidate windows when no window is given.
    Score {
        #[command(flatten)]
        manifest: ManifestArg,
        #[arg(long)]
        original: String,
        #[arg(long)]
        performance: String,
        #[arg(long, requires = "end")]
        start: Option<f64>,
        #[arg(long, requires = "start")]
        end: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_TOP_K)]
        top_k: usize,
        #[arg(long)]
        transposition_invariant: bool,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Save a performance window as the Variation of an Original.
    SavePair {
        #[command(flatten)]
        manifest: ManifestArg,
        #[arg(long)]
        original: String,
        #[arg(long)]
        performance: String,
        #[arg(long)]
        start: f64,
        #[arg(long)]
        end: f64,
        #[arg(long, default_value = "cli")]
        annotator: String,
    },
    /// Per-segment features and their mean and deviation.
    Stats {
        #[command(flatten)]
        manifest: ManifestArg,
        #[arg(long, value_enum)]
        group: Group,
        /// Per-segment CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Mean/sd CSV; printed to stdout when absent.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Align the melodies of a saved pair, or of two MIDI files.
    Align {
        #[arg(long, env = "VARKIT_MANIFEST")]
        manifest: Option<PathBuf>,
        #[arg(long, conflicts_with_all = ["a", "b"])]
        pair: Option<String>,
        #[arg(long, requires = "b")]
        a: Option<PathBuf>,
        #[arg(long, requires = "a")]
        b: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Skyline melody contour of a MIDI file.
    Contour {
        #[arg(long)]
        midi: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Chord changes per bar of a MIDI file.
    Rhythm {
        #[arg(long)]
        midi: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Encode a MIDI file as event tokens.
    Tokenize {
        #[arg(long)]
        midi: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print token names instead of ids.
        #[arg(long)]
        describe: bool,
    },
    /// Train on the manifest's pairs.
    Train {
        #[command(flatten)]
        manifest: ManifestArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        #[arg(long, default_value_t = 8)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 100)]
        warmup: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Seed of the 90/10 train/validation shuffle.
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
        #[arg(long, default_value_t = 4)]
        layers: usize,
        #[arg(long, default_value_t = 4)]
        heads: usize,
        #[arg(long, default_value_t = 128)]
        d_model: usize,
        #[arg(long, default_value_t = 512)]
        d_ff: usize,
        #[arg(long, default_value_t = 1024)]
        max_len: usize,
        #[arg(long, default_value_t = 512)]
        rel_window: usize,
        #[arg(long, default_value_t = 0.1)]
        dropout: f64,
        #[arg(long)]
        variation_only_loss: bool,
        /// JSON-lines progress file; stdout when absent.
        #[arg(long)]
        progress: Option<PathBuf>,
        /// Directory receiving `epoch-{n}.bin` checkpoints.
        #[arg(long)]
        epoch_dir: Option<PathBuf>,
        #[arg(long)]
        sequential: bool,
    },
    /// Continue an Original with a generated Variation.
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        /// Original segment MIDI (second clock).
        #[arg(long)]
        primer: PathBuf,
        #[arg(long, default_value = "generated.mid")]
        out: PathBuf,
        #[arg(long, conflicts_with = "temperature")]
        greedy: bool,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long, default_value_t = 0, requires = "temperature")]
        top_k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 512)]
        max_new: usize,
    },
    /// Compare the features of an Original and a generated Variation.
    Evaluate {
        #[arg(long)]
        original: PathBuf,
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Serve the workbench HTTP API.
    Serve {
        #[command(flatten)]
        manifest: ManifestArg,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

/// Parses `args`, runs the command and returns the process exit code:
/// 0 on success, 1 on a runtime error, 2 on a usage error.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return if code == 0 { 0 } else { 2 };
        }
    };
    match run(cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            1
        }
    }
}

fn read_midi(path: &Path) -> Result<NoteSequence> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    parse_midi(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "segment".into())
}

/// A MIDI file's notes on the beat clock of its own tempo map.
fn beat_segment(path: &Path) -> Result<Segment> {
    let seq = read_midi(path)?;
    let notes = seq
        .notes
        .iter()
        .map(|n| {
            let on = seq.timing.beats_of(n.onset);
            varkit::NoteEvent { onset: on, duration: seq.timing.beats_of(n.end()) - on, ..*n }
        })
        .collect();
    Ok(Segment::new(stem(path), Clock::Beats, notes))
}

/// Writes `text` to `path`, or to `out` without one.
fn emit(path: Option<&Path>, text: &str, out: &mut dyn Write) -> Result<()> {
    match path {
        Some(p) => write_file(p, text),
        None => Ok(out.write_all(text.as_bytes())?),
    }
}

fn open(manifest: &ManifestArg) -> Result<CorpusStore> {
    CorpusStore::open(&manifest.manifest).with_context(|| format!("opening {}", manifest.manifest.display()))
}

pub fn run(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match command {
        Command::Init(m) => {
            if m.manifest.exists() {
                bail!("{} already exists", m.manifest.display());
            }
            CorpusStore::open_or_create(&m.manifest)?;
            writeln!(out, "created {}", m.manifest.display())?;
        }
        Command::Synth { out: dir, seed } => {
            let corpus = SyntheticCorpus::generate(seed);
            corpus.write_to(&dir)?;
            writeln!(
                out,
                "wrote {} standards and {} performances to {}",
                corpus.standards.len(),
                corpus.performances.len(),
                dir.display()
            )?;
        }
        Command::Segment { leadsheet, sections, out: dir, id, title, bars, keep_partial, boundaries, manifest } => {
            let id = id.unwrap_or_else(|| stem(&leadsheet));
            let title = title.unwrap_or_else(|| id.clone());
            let sheet = LeadSheet::from_midi(&id, &title, &read_midi(&leadsheet)?)?;
            let sections: Vec<Section> = match sections {
                Some(p) => serde_json::from_slice(&fs::read(&p).with_context(|| format!("reading {}", p.display()))?)
                    .with_context(|| format!("parsing {}", p.display()))?,
                None => vec![Section::new(SectionLabel::Refrain, 0, sheet.bars)],
            };
            let refrain = trim_to_refrain(&sheet, &sections)?;
            let opts = SegmentationOptions { bars_per_segment: Some(bars), keep_partial, boundaries };
            let segments = segment_leadsheet_with(&refrain, &opts)?;
            for seg in &segments {
                write_file(&dir.join(format!("{}.mid", seg.id)), write_midi(&seg.to_midi())?)?;
                writeln!(out, "{}", seg.id)?;
            }
            if let Some(path) = manifest {
                let mut store = CorpusStore::open_or_create(&path)?;
                if store.manifest().standard(&id).is_none() {
                    store.add_standard(&id, &title, sheet.key_hint)?;
                }
                store.add_segments(&segments)?;
            }
        }
        Command::AddPerformance { manifest, midi, id, standard, performer } => {
            let mut store = open(&manifest)?;
            let entry = store.add_performance(&id, &standard, &performer, &read_midi(&midi)?)?;
            writeln!(out, "{} {:.3} s", entry.id, entry.duration_s)?;
        }
        Command::Score { manifest, original, performance, start, end, top_k, transposition_invariant, csv } => {
            let store = open(&manifest)?;
            let orig = store.load_original(&original)?;
            let notes = store.load_performance(&performance)?.notes;
            let config = ScoreConfig { transposition_invariant, ..ScoreConfig::default() };
            let mut text = String::from("rank,start_s,end_s,value,melodic,harmonic,transposition\n");
            if let (Some(s), Some(e)) = (start, end) {
                let window = VariationSegment::cut(&performance, &notes, s, e)?;
                let sc = score_candidate_with(&orig, &window, &config)?;
                text += &format!("1,{s},{e},{:.6},{:.6},{:.6},{}\n", sc.value, sc.melodic, sc.harmonic, sc.transposition);
            } else {
                let duration = store.manifest().performance(&performance).expect("loaded above").duration_s;
                let ranked = scan_candidates(&orig, &notes, duration, &config, top_k, Execution::Parallel)?;
                for (i, c) in ranked.iter().enumerate() {
                    let sc = c.score;
                    text += &format!(
                        "{},{},{},{:.6},{:.6},{:.6},{}\n",
                        i + 1,
                        c.start_s,
                        c.end_s,
                        sc.value,
                        sc.melodic,
                        sc.harmonic,
                        sc.transposition
                    );
                }
            }
            emit(csv.as_deref(), &text, out)?;
        }
        Command::SavePair { manifest, original, performance, start, end, annotator } => {
            let mut store = open(&manifest)?;
            let record = store.pair_window(&original, &performance, start, end, &annotator, Utc::now())?;
            writeln!(out, "{} {} {}", record.id, record.original_id, record.variation_id)?;
        }
        Command::Stats { manifest, group, csv, summary } => {
            let store = open(&manifest)?;
            let m = store.manifest();
            let mut segments = Vec::new();
            let mut seen = std::collections::HashSet::new();
            match group {
                Group::Originals => {
                    for p in &m.pairs {
                        if seen.insert(p.original_id.clone()) {
                            segments.push(store.load_original(&p.original_id)?.rendered_segment());
                        }
                    }
                }
                Group::Variations => {
                    for p in &m.pairs {
                        if seen.insert(p.variation_id.clone()) {
                            segments.push(store.load_variation(&p.variation_id)?.segment());
                        }
                    }
                }
                Group::Segments => {
                    for s in &m.segments {
                        segments.push(store.load_original(&s.id)?.rendered_segment());
                    }
                }
            }
            let report = corpus_stats_with(&segments, Execution::Parallel)?;
            if let Some(p) = csv {
                write_file(&p, report.to_csv())?;
            }
            emit(summary.as_deref(), &report.summary_csv(), out)?;
        }
        Command::Align { manifest, pair, a, b, csv } => {
            let (ma, mb) = match (pair, a, b) {
                (Some(pair), _, _) => {
                    let path = manifest.ok_or_else(|| anyhow!("--pair needs --manifest or VARKIT_MANIFEST"))?;
                    let store = CorpusStore::open(&path)?;
                    let rec = store.manifest().pair(&pair).ok_or_else(|| anyhow!("pair {pair:?} not found"))?.clone();
                    let orig = store.load_original(&rec.original_id)?;
                    let var = store.load_variation(&rec.variation_id)?;
                    let review = review_pair(&orig, &var, &ScoreConfig::default())?;
                    writeln!(err, "beat period {:.4} s, similarity {:.4}", review.beat_period_s, review.score.value)?;
                    let a = extract_melody_skyline(&orig.melody_segment())?;
                    let b = varkit::corpus::variation_melody(&orig, &var)?.0;
                    (a, b)
                }
                (None, Some(a), Some(b)) => {
                    (extract_melody_skyline(&beat_segment(&a)?)?, extract_melody_skyline(&beat_segment(&b)?)?)
                }
                _ => bail!("give --pair or both --a and --b"),
            };
            let alignment = align_melodies(&ma, &mb)?;
            let report = average_deviation(&alignment, &ma, &mb)?;
            let mut text = String::from("a_index,b_index,a_pitch,b_pitch,pc_dev,dur_dev\n");
            let mut devs = report.per_note.iter();
            for &(i, j) in &alignment.pairs {
                let cell = |k: Option<usize>| k.map(|k| k.to_string()).unwrap_or_default();
                let pa = i.map(|i| ma.notes()[i].pitch.to_string()).unwrap_or_default();
                let pb = j.map(|j| mb.notes()[j].pitch.to_string()).unwrap_or_default();
                let (pc, dur) = match (i, j) {
                    (Some(_), Some(_)) => {
                        let d = devs.next().expect("one deviation per aligned pair");
                        (d.pc_dev.to_string(), format!("{:.6}", d.dur_dev))
                    }
                    _ => (String::new(), String::new()),
                };
                text += &format!("{},{},{pa},{pb},{pc},{dur}\n", cell(i), cell(j));
            }
            emit(csv.as_deref(), &text, out)?;
            writeln!(
                err,
                "average_deviation {:.6} over {} aligned notes (cost {:.4})",
                report.average_deviation, alignment.n_aligned, alignment.cost
            )?;
        }
        Command::Contour { midi, csv, svg } => {
            let seg = beat_segment(&midi)?;
            let points = contour(&extract_melody_skyline(&seg)?)?;
            emit(csv.as_deref(), &contour_csv(&points), out)?;
            if let Some(p) = svg {
                let series =
                    Series { name: seg.id.clone(), points: points.iter().map(|p| (p.onset_beats, p.pitch as f64)).collect() };
                write_file(&p, contour_svg(&seg.id, &[series]))?;
            }
        }
        Command::Rhythm { midi, csv, svg } => {
            let seg = beat_segment(&midi)?;
            let series = harmonic_rhythm(&seg)?;
            emit(csv.as_deref(), &harmonic_rhythm_csv(&series), out)?;
            if let Some(p) = svg {
                let line = Series {
                    name: seg.id.clone(),
                    points: series.chords_per_bar.iter().map(|&(b, c)| (b as f64, c as f64)).collect(),
                };
                write_file(&p, harmonic_rhythm_svg(&seg.id, &[line]))?;
            }
        }
        Command::Tokenize { midi, out: path, describe: names } => {
            let seq = read_midi(&midi)?;
            let tokens = encode(&Segment::new(stem(&midi), Clock::Seconds, seq.notes));
            let text = if names { describe(&tokens) + "\n" } else { serde_json::to_string(&tokens)? + "\n" };
            emit(path.as_deref(), &text, out)?;
        }
        Command::Train {
            manifest,
            out: path,
            steps,
            batch_size,
            lr,
            warmup,
            seed,
            split_seed,
            layers,
            heads,
            d_model,
            d_ff,
            max_len,
            rel_window,
            dropout,
            variation_only_loss,
            progress,
            epoch_dir,
            sequential,
        } => {
            let store = open(&manifest)?;
            let model_config = ModelConfig { layers, heads, d_model, d_ff, max_len, rel_window, dropout, seed, ..ModelConfig::default() };
            model_config.validate()?;
            let mut examples = Vec::new();
            for pair in &store.manifest().pairs {
                match example_from_pair(&store, pair, max_len) {
                    Ok(ex) => examples.push(ex),
                    Err(OverpaintError::PrimerTooLong { len, .. }) => {
                        writeln!(err, "skipping pair {}: primer of {len} tokens exceeds max_len", pair.id)?;
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            let parts = split(examples.len(), split_seed);
            let train_set: Vec<_> = parts.train.iter().map(|&i| examples[i].clone()).collect();
            let val_set: Vec<_> = parts.validation.iter().map(|&i| examples[i].clone()).collect();
            writeln!(err, "{} train / {} validation examples", train_set.len(), val_set.len())?;
            let config = TrainConfig {
                steps,
                batch_size,
                learning_rate: lr,
                warmup_steps: warmup,
                variation_only_loss,
                seed,
                ..TrainConfig::default()
            };
            let mut progress_file = match &progress {
                Some(p) => Some(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
                None => None,
            };
            let progress_sink: &mut dyn Write = match progress_file.as_mut() {
                Some(f) => f,
                None => out,
            };
            let mut epoch = 0usize;
            let mut save_epoch = |c: &Checkpoint| -> varkit::overpaint::Result<()> {
                if let Some(dir) = &epoch_dir {
                    fs::create_dir_all(dir)
                        .map_err(|source| OverpaintError::Io { path: dir.clone(), source })?;
                    c.save(&dir.join(format!("epoch-{epoch}.bin")))?;
                }
                epoch += 1;
                Ok(())
            };
            let hooks = TrainHooks { progress: Some(progress_sink), on_epoch: Some(&mut save_epoch) };
            let exec = if sequential { Execution::Sequential } else { Execution::Parallel };
            let ckpt = train(&train_set, &val_set, model_config, &config, exec, hooks)?;
            ckpt.save(&path)?;
            writeln!(err, "saved {} after {} steps", path.display(), ckpt.step)?;
        }
        Command::Generate { ckpt, primer, out: path, greedy: _, temperature, top_k, seed, max_new } => {
            let model = Checkpoint::load(&ckpt)?.model()?;
            let primer_notes = read_midi(&primer)?.notes;
            let sampling = match temperature {
                Some(t) => Sampling::Temperature { temperature: t, top_k },
                None => Sampling::Greedy,
            };
            let generation = generate_from_notes(&model, &primer_notes, &GenerateOptions { sampling, max_new, seed })?;
            if let Some(w) = generation.empty_warning() {
                writeln!(err, "warning: {w}")?;
            }
            let seq = NoteSequence::new(generation.decoded.notes.clone(), TimingMap::default());
            write_file(&path, write_midi(&seq)?)?;
            writeln!(
                out,
                "{} tokens, {} notes, {} repairs -> {}",
                generation.tokens.len(),
                generation.decoded.notes.len(),
                generation.decoded.warnings.len(),
                path.display()
            )?;
        }
        Command::Evaluate { original, generated, csv } => {
            let o = read_midi(&original)?;
            let g = read_midi(&generated)?;
            let report = evaluate_generation(
                &Segment::new(stem(&original), Clock::Seconds, o.notes),
                &Segment::new(stem(&generated), Clock::Seconds, g.notes),
            )?;
            emit(csv.as_deref(), &report.to_csv(), out)?;
        }
        Command::Serve { manifest, host, port } => {
            let store = open(&manifest)?;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(async {
                let listener = tokio::net::TcpListener::bind((host.as_str(), port)).await?;
                writeln!(err, "listening on http://{}", listener.local_addr()?)?;
                axum::serve(listener, crate::server::router(store)).await?;
                anyhow::Ok(())
            })?;
        }
    }
    Ok(())
}
