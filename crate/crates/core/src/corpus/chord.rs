use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::CorpusError;

const SHARP_NAMES: [&str; 12] = ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChordQuality {
    Major,
    Minor,
    Dominant7,
    Major7,
    Minor7,
    Diminished,
    Diminished7,
    HalfDiminished7,
    Augmented,
    Sus4,
    Major6,
    Minor6,
}

impl ChordQuality {
    pub const ALL: [ChordQuality; 12] = [
        ChordQuality::Major,
        ChordQuality::Minor,
        ChordQuality::Dominant7,
        ChordQuality::Major7,
        ChordQuality::Minor7,
        ChordQuality::Diminished,
        ChordQuality::Diminished7,
        ChordQuality::HalfDiminished7,
        ChordQuality::Augmented,
        ChordQuality::Sus4,
        ChordQuality::Major6,
        ChordQuality::Minor6,
    ];

    pub fn intervals(self) -> &'static [u8] {
        match self {
            ChordQuality::Major => &[0, 4, 7],
            ChordQuality::Minor => &[0, 3, 7],
            ChordQuality::Dominant7 => &[0, 4, 7, 10],
            ChordQuality::Major7 => &[0, 4, 7, 11],
            ChordQuality::Minor7 => &[0, 3, 7, 10],
            ChordQuality::Diminished => &[0, 3, 6],
            ChordQuality::Diminished7 => &[0, 3, 6, 9],
            ChordQuality::HalfDiminished7 => &[0, 3, 6, 10],
            ChordQuality::Augmented => &[0, 4, 8],
            ChordQuality::Sus4 => &[0, 5, 7],
            ChordQuality::Major6 => &[0, 4, 7, 9],
            ChordQuality::Minor6 => &[0, 3, 7, 9],
        }
    }

    fn suffix(self) -> &'static str {
        match self {
            ChordQuality::Major => "",
            ChordQuality::Minor => "m",
            ChordQuality::Dominant7 => "7",
            ChordQuality::Major7 => "maj7",
            ChordQuality::Minor7 => "m7",
            ChordQuality::Diminished => "dim",
            ChordQuality::Diminished7 => "dim7",
            ChordQuality::HalfDiminished7 => "m7b5",
            ChordQuality::Augmented => "aug",
            ChordQuality::Sus4 => "sus4",
            ChordQuality::Major6 => "6",
            ChordQuality::Minor6 => "m6",
        }
    }

    fn from_suffix(s: &str) -> Option<Self> {
        Some(match s {
            "" | "maj" | "M" => ChordQuality::Major,
            "m" | "min" | "-" => ChordQuality::Minor,
            "7" | "dom7" => ChordQuality::Dominant7,
            "maj7" | "M7" | "Δ" | "Δ7" => ChordQuality::Major7,
            "m7" | "min7" | "-7" => ChordQuality::Minor7,
            "dim" | "o" => ChordQuality::Diminished,
            "dim7" | "o7" => ChordQuality::Diminished7,
            "m7b5" | "ø" | "ø7" | "-7b5" => ChordQuality::HalfDiminished7,
            "aug" | "+" => ChordQuality::Augmented,
            "sus4" | "sus" => ChordQuality::Sus4,
            "6" => ChordQuality::Major6,
            "m6" | "-6" => ChordQuality::Minor6,
            _ => return None,
        })
    }
}

/// A lead-sheet chord symbol such as `Bbmaj7` or `F#m7b5`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ChordSymbol {
    pub root: u8,
    pub quality: ChordQuality,
}

impl ChordSymbol {
    pub fn new(root: u8, quality: ChordQuality) -> Self {
        ChordSymbol { root: root % 12, quality }
    }

    pub fn pitch_classes(&self) -> Vec<u8> {
        self.quality.intervals().iter().map(|i| (self.root + i) % 12).collect()
    }

    /// Close voicing with the root in the octave below middle C.
    pub fn voicing(&self) -> Vec<u8> {
        let base = 48 + self.root;
        self.quality.intervals().iter().map(|i| base + i).collect()
    }

    pub fn transposed(&self, semitones: i32) -> Self {
        ChordSymbol::new((self.root as i32 + semitones).rem_euclid(12) as u8, self.quality)
    }

    /// Names the chord formed by a set of sounding pitches.
    ///
    /// Candidates are ranked by pitch-class Jaccard similarity; ties prefer a
    /// root on the lowest sounding pitch, then the simpler quality.
    pub fn from_pitches(pitches: &[u8]) -> Option<Self> {
        let bass = *pitches.iter().min()? % 12;
        let set: u16 = pitches.iter().fold(0, |m, p| m | 1 << (p % 12));
        let mut best: Option<(f64, bool, usize, ChordSymbol)> = None;
        for root in 0..12u8 {
            for (rank, &quality) in ChordQuality::ALL.iter().enumerate() {
                let cand = ChordSymbol::new(root, quality);
                let tmpl: u16 = cand.pitch_classes().iter().fold(0, |m, p| m | 1 << p);
                let jaccard = (set & tmpl).count_ones() as f64 / (set | tmpl).count_ones() as f64;
                let key = (jaccard, root == bass, usize::MAX - rank, cand);
                let better = match &best {
                    None => true,
                    Some(b) => (key.0, key.1, key.2) > (b.0, b.1, b.2),
                };
                if better {
                    best = Some(key);
                }
            }
        }
        best.map(|b| b.3)
    }
}

impl fmt::Display for ChordSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", SHARP_NAMES[self.root as usize], self.quality.suffix())
    }
}

impl FromStr for ChordSymbol {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || CorpusError::BadChordSymbol(s.to_string());
        let body = s.trim().split('/').next().unwrap_or("");
        let mut chars = body.chars();
        let letter = chars.next().ok_or_else(bad)?;
        let mut root: i32 = match letter {
            'C' => 0,
            'D' => 2,
            'E' => 4,
            'F' => 5,
            'G' => 7,
            'A' => 9,
            'B' => 11,
            _ => return Err(bad()),
        };
        let mut rest = chars.as_str();
        if let Some(r) = rest.strip_prefix('#').or_else(|| rest.strip_prefix('♯')) {
            root += 1;
            rest = r;
        } else if let Some(r) = rest.strip_prefix('b').or_else(|| rest.strip_prefix('♭')) {
            root -= 1;
            rest = r;
        }
        let quality = ChordQuality::from_suffix(rest).ok_or_else(bad)?;
        Ok(ChordSymbol::new(root.rem_euclid(12) as u8, quality))
    }
}

impl TryFrom<String> for ChordSymbol {
    type Error = CorpusError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ChordSymbol> for String {
    fn from(c: ChordSymbol) -> String {
        c.to_string()
    }
}
