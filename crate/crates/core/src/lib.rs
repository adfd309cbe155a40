//! Toolkit for curating and modelling jazz piano variations of lead-sheet
//! segments.
//!
//! * [`midi`]: Standard MIDI File I/O and clock conversion.
//! * [`segment`]: the note container shared by the analysis and model code.
//! * [`corpus`]: lead sheets, 4-bar segmentation, candidate scoring and the
//!   on-disk manifest.
//! * [`analysis`]: pitch statistics, melody alignment and deviation,
//!   contours and harmonic rhythm.
//! * [`overpaint`]: event tokenizer and a relative-attention transformer
//!   trained to continue an original segment with a variation.
//!
//! Batch operations run on rayon when the `parallel` feature is enabled
//! (the default); see [`par`].

pub mod analysis;
pub mod corpus;
pub mod midi;
pub mod overpaint;
pub mod par;
pub mod segment;

pub use midi::{NoteEvent, NoteSequence, TimingMap};
pub use segment::{Clock, Segment};
