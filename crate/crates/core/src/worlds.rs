//! Synthetic pixel worlds: glyphs, word rendering on a torus, and the
//! enumeration or sampling of every distinct observation a world produces.
//!
//! A word is laid out left to right. Every glyph is trimmed to the width
//! of its own pixels and followed by exactly one blank column. The word is
//! then rotated as a rigid pixel set about cell `(0, 0)` and translated to
//! its origin, with all coordinates wrapped on the torus.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Side length of the square frame every glyph is drawn in.
pub const GLYPH_SIZE: usize = 5;

/// Enumerations larger than this are refused.
pub const ENUMERATION_LIMIT: u64 = 50_000_000;

const ALPHABET: [(char, [&str; GLYPH_SIZE]); 26] = [
    ('A', ["####.", "#..#.", "#..#.", "####.", "#..#."]),
    ('B', ["###..", "#..#.", "###..", "#..#.", "###.."]),
    ('C', ["####.", "#....", "#....", "#....", "####."]),
    ('D', ["###..", "#..#.", "#..#.", "#..#.", "###.."]),
    ('E', ["####.", "#....", "###..", "#....", "####."]),
    ('F', ["####.", "#....", "###..", "#....", "#...."]),
    ('G', [".###.", "#....", "#.##.", "#..#.", ".###."]),
    ('H', ["#..#.", "#..#.", "####.", "#..#.", "#..#."]),
    ('I', ["#....", "#....", "#....", "#....", "#...."]),
    ('J', [".###.", "...#.", "...#.", "#..#.", ".##.."]),
    ('K', ["#..#.", "#.#..", "##...", "#.#..", "#..#."]),
    ('L', ["#....", "#....", "#....", "#....", "####."]),
    ('M', ["#...#", "##.##", "#.#.#", "#...#", "#...#"]),
    ('N', ["#...#", "##..#", "#.#.#", "#..##", "#...#"]),
    ('O', [".###.", "#...#", "#...#", "#...#", ".###."]),
    ('P', ["###..", "#..#.", "###..", "#....", "#...."]),
    ('Q', [".###.", "#...#", "#.#.#", "#..#.", ".##.#"]),
    ('R', ["###..", "#..#.", "###..", "#.#..", "#..#."]),
    ('S', ["####.", "#....", "####.", "...#.", "####."]),
    ('T', ["#####", "..#..", "..#..", "..#..", "..#.."]),
    ('U', ["#...#", "#...#", "#...#", "#...#", ".###."]),
    ('V', ["#...#", "#...#", "#...#", ".#.#.", "..#.."]),
    ('W', ["#...#", "#...#", "#.#.#", "##.##", "#...#"]),
    ('X', ["#...#", ".#.#.", "..#..", ".#.#.", "#...#"]),
    ('Y', ["#...#", ".#.#.", "..#..", ".#...", "#...."]),
    ('Z', ["####.", "...#.", ".##..", "#....", "####."]),
];

/// Letters without any axial symmetry, used by the reduced-alphabet worlds.
pub const REDUCED_LETTERS: [char; 11] = ['F', 'G', 'J', 'L', 'N', 'P', 'Q', 'R', 'S', 'Y', 'Z'];

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("glyph '{0}' has no set pixel")]
    EmptyGlyph(char),
    #[error("glyph '{name}' is malformed: {reason}")]
    MalformedGlyph { name: char, reason: String },
    #[error("unknown letter '{0}'")]
    UnknownLetter(char),
    #[error("unknown world '{0}'")]
    UnknownWorld(String),
    #[error("expected {expected} letters per observation, got {got}")]
    LetterCount { expected: usize, got: usize },
    #[error("rotation requested but the world has no 90 degree rotations")]
    RotationNotAllowed,
    #[error("rotation step {0} out of range 0..4")]
    RotationOutOfRange(u8),
    #[error("individual letter offsets requested but the world has no individual shifts")]
    OffsetNotAllowed,
    #[error("expected {expected} letter offsets, got {got}")]
    OffsetCount { expected: usize, got: usize },
    #[error("color assignment given for a single-color world")]
    ColorNotAllowed,
    #[error("expected {expected} letter colors, got {got}")]
    ColorCount { expected: usize, got: usize },
    #[error("color {color} out of range for a {colors}-color world")]
    ColorOutOfRange { color: u8, colors: usize },
    #[error("enumeration infeasible: {count} combinations exceed the limit of {limit}")]
    EnumerationInfeasible { count: u128, limit: u64 },
    #[error("sample fraction {0} outside (0, 1]")]
    BadFraction(f64),
    #[error("requested {requested} observations but only {total} exist")]
    SampleTooLarge { requested: u128, total: u128 },
    #[error("world has rotations but is not square ({width}x{height})")]
    NonSquareRotation { width: usize, height: usize },
    #[error("malformed observation file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<WorldError> for std::io::Error {
    fn from(e: WorldError) -> Self {
        std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string())
    }
}

/// A letter drawn in a 5×5 binary frame.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "GlyphRepr", into = "GlyphRepr")]
pub struct Glyph {
    name: char,
    bitmap: [[bool; GLYPH_SIZE]; GLYPH_SIZE],
}

#[derive(Serialize, Deserialize)]
struct GlyphRepr {
    name: char,
    rows: Vec<String>,
}

impl TryFrom<GlyphRepr> for Glyph {
    type Error = WorldError;

    fn try_from(r: GlyphRepr) -> Result<Self, Self::Error> {
        let rows: Vec<&str> = r.rows.iter().map(String::as_str).collect();
        Glyph::from_rows(r.name, &rows)
    }
}

impl From<Glyph> for GlyphRepr {
    fn from(g: Glyph) -> Self {
        let rows = g
            .bitmap
            .iter()
            .map(|row| row.iter().map(|&b| if b { '#' } else { '.' }).collect())
            .collect();
        GlyphRepr { name: g.name, rows }
    }
}

impl Glyph {
    /// Parses a glyph from five rows of `#` (set) and `.` (clear).
    pub fn from_rows(name: char, rows: &[&str]) -> Result<Self, WorldError> {
        let malformed = |reason: &str| WorldError::MalformedGlyph {
            name,
            reason: reason.to_string(),
        };
        if rows.len() != GLYPH_SIZE {
            return Err(malformed("expected 5 rows"));
        }
        let mut bitmap = [[false; GLYPH_SIZE]; GLYPH_SIZE];
        for (y, row) in rows.iter().enumerate() {
            let cells: Vec<char> = row.chars().collect();
            if cells.len() != GLYPH_SIZE {
                return Err(malformed("expected 5 columns"));
            }
            for (x, c) in cells.into_iter().enumerate() {
                bitmap[y][x] = match c {
                    '#' => true,
                    '.' => false,
                    _ => return Err(malformed("cells must be '#' or '.'")),
                };
            }
        }
        if !bitmap.iter().flatten().any(|&b| b) {
            return Err(WorldError::EmptyGlyph(name));
        }
        Ok(Glyph { name, bitmap })
    }

    /// Looks up a letter of the built-in alphabet.
    pub fn letter(name: char) -> Result<Self, WorldError> {
        ALPHABET
            .iter()
            .find(|(c, _)| *c == name)
            .map(|(c, rows)| Glyph::from_rows(*c, rows).expect("built-in glyph"))
            .ok_or(WorldError::UnknownLetter(name))
    }

    pub fn name(&self) -> char {
        self.name
    }

    pub fn is_set(&self, x: usize, y: usize) -> bool {
        self.bitmap[y][x]
    }

    /// Width of the bounding box of the set pixels.
    pub fn width(&self) -> usize {
        let (lo, hi) = self.column_span();
        hi - lo + 1
    }

    fn column_span(&self) -> (usize, usize) {
        let cols: Vec<usize> = (0..GLYPH_SIZE)
            .filter(|&x| (0..GLYPH_SIZE).any(|y| self.bitmap[y][x]))
            .collect();
        (cols[0], cols[cols.len() - 1])
    }

    /// Set pixels as `(x, y)`, with `x` measured from the leftmost set column.
    pub fn trimmed_pixels(&self) -> Vec<(i64, i64)> {
        let (lo, _) = self.column_span();
        let mut out = Vec::new();
        for y in 0..GLYPH_SIZE {
            for x in 0..GLYPH_SIZE {
                if self.bitmap[y][x] {
                    out.push(((x - lo) as i64, y as i64));
                }
            }
        }
        out
    }
}

/// The full 26-letter alphabet.
pub fn full_alphabet() -> Vec<Glyph> {
    ALPHABET
        .iter()
        .map(|(c, rows)| Glyph::from_rows(*c, rows).expect("built-in glyph"))
        .collect()
}

/// The eleven letters without axial symmetry.
pub fn reduced_alphabet() -> Vec<Glyph> {
    REDUCED_LETTERS
        .iter()
        .map(|&c| Glyph::letter(c).expect("built-in glyph"))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Transform {
    GlobalTranslation,
    Rotation90Steps,
    ColorPermutation,
    IndividualVerticalShift,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WorldKind {
    T,
    TR1,
    TR2,
    TC,
    TL,
    Custom,
}

impl WorldKind {
    pub const NAMED: [WorldKind; 5] = [
        WorldKind::T,
        WorldKind::TR1,
        WorldKind::TR2,
        WorldKind::TC,
        WorldKind::TL,
    ];
}

impl fmt::Display for WorldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            WorldKind::T => "T",
            WorldKind::TR1 => "TR1",
            WorldKind::TR2 => "TR2",
            WorldKind::TC => "TC",
            WorldKind::TL => "TL",
            WorldKind::Custom => "Custom",
        };
        f.write_str(s)
    }
}

impl FromStr for WorldKind {
    type Err = WorldError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "T" => Ok(WorldKind::T),
            "TR1" => Ok(WorldKind::TR1),
            "TR2" => Ok(WorldKind::TR2),
            "TC" => Ok(WorldKind::TC),
            "TL" => Ok(WorldKind::TL),
            "CUSTOM" => Ok(WorldKind::Custom),
            _ => Err(WorldError::UnknownWorld(s.to_string())),
        }
    }
}

/// Parameters of a world: grid, alphabet and the letter transformations
/// observations are generated under.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub kind: WorldKind,
    pub width: usize,
    pub height: usize,
    pub alphabet: Vec<Glyph>,
    pub letters_per_observation: usize,
    pub transforms: BTreeSet<Transform>,
    pub colors: usize,
}

impl WorldSpec {
    pub fn named(kind: WorldKind) -> Self {
        use Transform::*;
        let (width, height, alphabet, letters, transforms, colors): (_, _, _, _, &[Transform], _) =
            match kind {
                WorldKind::T => (20, 10, full_alphabet(), 2, &[GlobalTranslation], 1),
                WorldKind::TR1 => (
                    15,
                    15,
                    full_alphabet(),
                    2,
                    &[GlobalTranslation, Rotation90Steps],
                    1,
                ),
                WorldKind::TR2 => (
                    15,
                    15,
                    reduced_alphabet(),
                    2,
                    &[GlobalTranslation, Rotation90Steps],
                    1,
                ),
                WorldKind::TC => (
                    13,
                    7,
                    reduced_alphabet(),
                    2,
                    &[GlobalTranslation, ColorPermutation],
                    3,
                ),
                WorldKind::TL => (
                    20,
                    20,
                    full_alphabet(),
                    3,
                    &[GlobalTranslation, Rotation90Steps, IndividualVerticalShift],
                    1,
                ),
                WorldKind::Custom => (1, 1, Vec::new(), 1, &[GlobalTranslation], 1),
            };
        WorldSpec {
            kind,
            width,
            height,
            alphabet,
            letters_per_observation: letters,
            transforms: transforms.iter().copied().collect(),
            colors,
        }
    }

    pub fn custom(
        width: usize,
        height: usize,
        alphabet: Vec<Glyph>,
        letters_per_observation: usize,
        transforms: impl IntoIterator<Item = Transform>,
        colors: usize,
    ) -> Result<Self, WorldError> {
        let transforms: BTreeSet<Transform> = transforms.into_iter().collect();
        if transforms.contains(&Transform::Rotation90Steps) && width != height {
            return Err(WorldError::NonSquareRotation { width, height });
        }
        Ok(WorldSpec {
            kind: WorldKind::Custom,
            width,
            height,
            alphabet,
            letters_per_observation,
            transforms,
            colors,
        })
    }

    pub fn has(&self, t: Transform) -> bool {
        self.transforms.contains(&t)
    }

    /// Number of features (nodes of the concurrence graph).
    pub fn feature_count(&self) -> usize {
        self.width * self.height * self.colors
    }

    fn rotation_steps(&self) -> u8 {
        if self.has(Transform::Rotation90Steps) {
            4
        } else {
            1
        }
    }

    fn colorings(&self) -> u128 {
        if self.has(Transform::ColorPermutation) {
            (self.colors as u128).pow(self.letters_per_observation as u32)
        } else {
            1
        }
    }

    fn offset_choices(&self) -> u128 {
        if self.has(Transform::IndividualVerticalShift) {
            (self.height as u128).pow(self.letters_per_observation.saturating_sub(1) as u32)
        } else {
            1
        }
    }

    /// Number of (letters, placement) combinations before deduplication.
    pub fn combination_count(&self) -> u128 {
        (self.alphabet.len() as u128).pow(self.letters_per_observation as u32)
            * self.colorings()
            * self.rotation_steps() as u128
            * (self.width * self.height) as u128
            * self.offset_choices()
    }
}

/// Number of letter transformations of a world: translations, times
/// rotations, times color permutations, times individual relative shifts.
pub fn letter_transformation_count(spec: &WorldSpec) -> u128 {
    let colors = if spec.has(Transform::ColorPermutation) {
        (1..=spec.colors as u128).product()
    } else {
        1
    };
    (spec.width * spec.height) as u128 * spec.rotation_steps() as u128 * colors * spec.offset_choices()
}

/// A binary pixel grid on a torus, one bit plane per color.
///
/// Bits are stored most-significant first so that the derived ordering is
/// the lexicographic order of the flat bit array.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BitImage {
    width: usize,
    height: usize,
    colors: usize,
    words: Vec<u64>,
}

impl BitImage {
    pub fn new(width: usize, height: usize, colors: usize) -> Self {
        let len = width * height * colors;
        BitImage {
            width,
            height,
            colors,
            words: vec![0; len.div_ceil(64)],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn colors(&self) -> usize {
        self.colors
    }

    pub fn len(&self) -> usize {
        self.width * self.height * self.colors
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.colors)
    }

    /// Flat index of `(x, y, c)`, wrapping `x` and `y` on the torus.
    pub fn index(&self, x: i64, y: i64, c: usize) -> usize {
        pixel_index(self.width, self.height, x, y, c)
    }

    pub fn decode(&self, i: usize) -> (usize, usize, usize) {
        let plane = self.width * self.height;
        (i % self.width, (i % plane) / self.width, i / plane)
    }

    pub fn bit(&self, i: usize) -> bool {
        self.words[i / 64] >> (63 - i % 64) & 1 == 1
    }

    pub fn set_bit(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (63 - i % 64);
    }

    pub fn get(&self, x: i64, y: i64, c: usize) -> bool {
        self.bit(self.index(x, y, c))
    }

    pub fn set(&mut self, x: i64, y: i64, c: usize) {
        let i = self.index(x, y, c);
        self.set_bit(i);
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Indices of the set bits in ascending order.
    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(k, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let lead = w.leading_zeros() as usize;
                w &= !(1u64 << (63 - lead));
                Some(k * 64 + lead)
            })
        })
    }

    /// The image obtained by moving the bit at `i` to `map(i)`.
    pub fn map_bits(&self, map: impl Fn(usize) -> usize) -> BitImage {
        let mut out = BitImage::new(self.width, self.height, self.colors);
        for i in self.ones() {
            out.set_bit(map(i));
        }
        out
    }

    /// Hex encoding of the flat bit array, first bit in the high nibble.
    pub fn to_hex(&self) -> String {
        let nibbles = self.len().div_ceil(4);
        let mut s = String::with_capacity(nibbles);
        for k in 0..nibbles {
            let word = self.words[k / 16];
            let nib = (word >> (60 - 4 * (k % 16))) & 0xf;
            s.push(char::from_digit(nib as u32, 16).unwrap());
        }
        s
    }

    pub fn from_hex(width: usize, height: usize, colors: usize, hex: &str) -> Result<Self, WorldError> {
        let mut img = BitImage::new(width, height, colors);
        let nibbles = img.len().div_ceil(4);
        if hex.len() != nibbles {
            return Err(WorldError::Format(format!(
                "expected {nibbles} hex digits, got {}",
                hex.len()
            )));
        }
        for (k, ch) in hex.chars().enumerate() {
            let nib = ch
                .to_digit(16)
                .ok_or_else(|| WorldError::Format(format!("bad hex digit '{ch}'")))? as u64;
            img.words[k / 16] |= nib << (60 - 4 * (k % 16));
        }
        let pad = img.words.len() * 64 - img.len();
        if pad > 0 && img.words.last().unwrap() & ((1u64 << pad) - 1) != 0 {
            return Err(WorldError::Format("padding bits set".into()));
        }
        Ok(img)
    }
}

pub fn pixel_index(width: usize, height: usize, x: i64, y: i64, c: usize) -> usize {
    let x = x.rem_euclid(width as i64) as usize;
    let y = y.rem_euclid(height as i64) as usize;
    c * width * height + y * width + x
}

/// Rotates `(x, y)` by `r` quarter turns counterclockwise (image
/// coordinates, `y` pointing down).
pub fn rotate(x: i64, y: i64, r: u8) -> (i64, i64) {
    match r % 4 {
        0 => (x, y),
        1 => (y, -x),
        2 => (-x, -y),
        _ => (-y, x),
    }
}

/// Where and how a word is drawn.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub origin: (i64, i64),
    pub rotation: u8,
    /// Shifts of letters 2.. relative to letter 1, perpendicular to the word axis.
    pub offsets: Vec<i64>,
    /// One color per letter; empty means color 0 throughout.
    pub colors: Vec<u8>,
}

impl Placement {
    pub fn at(x: i64, y: i64) -> Self {
        Placement {
            origin: (x, y),
            ..Placement::default()
        }
    }

    pub fn rotated(mut self, r: u8) -> Self {
        self.rotation = r;
        self
    }
}

/// Pixels `(x, y, color)` of a word before translation.
fn word_pixels(
    spec: &WorldSpec,
    letters: &[&Glyph],
    rotation: u8,
    offsets: &[i64],
    colors: &[u8],
) -> Result<Vec<(i64, i64, usize)>, WorldError> {
    if letters.len() != spec.letters_per_observation {
        return Err(WorldError::LetterCount {
            expected: spec.letters_per_observation,
            got: letters.len(),
        });
    }
    if rotation >= 4 {
        return Err(WorldError::RotationOutOfRange(rotation));
    }
    if rotation != 0 && !spec.has(Transform::Rotation90Steps) {
        return Err(WorldError::RotationNotAllowed);
    }
    if !offsets.is_empty() {
        if !spec.has(Transform::IndividualVerticalShift) {
            return Err(WorldError::OffsetNotAllowed);
        }
        if offsets.len() + 1 != letters.len() {
            return Err(WorldError::OffsetCount {
                expected: letters.len() - 1,
                got: offsets.len(),
            });
        }
    }
    if !colors.is_empty() {
        if spec.colors <= 1 {
            return Err(WorldError::ColorNotAllowed);
        }
        if colors.len() != letters.len() {
            return Err(WorldError::ColorCount {
                expected: letters.len(),
                got: colors.len(),
            });
        }
        if let Some(&color) = colors.iter().find(|&&c| c as usize >= spec.colors) {
            return Err(WorldError::ColorOutOfRange {
                color,
                colors: spec.colors,
            });
        }
    }

    let mut out = Vec::new();
    let mut left = 0i64;
    for (k, glyph) in letters.iter().enumerate() {
        let shift = if k == 0 { 0 } else { offsets.get(k - 1).copied().unwrap_or(0) };
        let color = colors.get(k).copied().unwrap_or(0) as usize;
        for (gx, gy) in glyph.trimmed_pixels() {
            let (x, y) = rotate(left + gx, gy + shift, rotation);
            out.push((x, y, color));
        }
        left += glyph.width() as i64 + 1;
    }
    Ok(out)
}

/// Draws a word of `letters` into a fresh image of the world's dimensions.
pub fn render_word(spec: &WorldSpec, letters: &[&Glyph], placement: &Placement) -> Result<BitImage, WorldError> {
    let pixels = word_pixels(
        spec,
        letters,
        placement.rotation,
        &placement.offsets,
        &placement.colors,
    )?;
    let mut img = BitImage::new(spec.width, spec.height, spec.colors);
    let (ox, oy) = placement.origin;
    for (x, y, c) in pixels {
        img.set(x + ox, y + oy, c);
    }
    Ok(img)
}

/// A deduplicated, canonically ordered set of observations.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSet {
    pub spec: WorldSpec,
    images: Vec<BitImage>,
}

impl ObservationSet {
    /// Builds a set from arbitrary images, sorting and deduplicating them.
    pub fn from_images(spec: WorldSpec, mut images: Vec<BitImage>) -> Self {
        images.par_sort_unstable();
        images.dedup();
        ObservationSet { spec, images }
    }

    pub fn images(&self) -> &[BitImage] {
        &self.images
    }

    pub fn total(&self) -> usize {
        self.images.len()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.spec.width, self.spec.height, self.spec.colors)
    }

    /// Writes the header line followed by one hex record per image.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(
            w,
            "graphsym-observations world={} width={} height={} colors={} total={}",
            self.spec.kind,
            self.spec.width,
            self.spec.height,
            self.spec.colors,
            self.total()
        )?;
        for img in &self.images {
            writeln!(w, "{}", img.to_hex())?;
        }
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self, WorldError> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| WorldError::Format("missing header".into()))??;
        let mut fields = header.split_whitespace();
        if fields.next() != Some("graphsym-observations") {
            return Err(WorldError::Format("bad magic".into()));
        }
        let (mut kind, mut width, mut height, mut colors, mut total) = (None, None, None, None, None);
        for field in fields {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| WorldError::Format(format!("bad header field '{field}'")))?;
            let num = || {
                value
                    .parse::<usize>()
                    .map_err(|_| WorldError::Format(format!("bad value for {key}")))
            };
            match key {
                "world" => kind = Some(value.parse::<WorldKind>()?),
                "width" => width = Some(num()?),
                "height" => height = Some(num()?),
                "colors" => colors = Some(num()?),
                "total" => total = Some(num()?),
                _ => {}
            }
        }
        let missing = |k: &str| WorldError::Format(format!("header lacks {k}"));
        let width = width.ok_or_else(|| missing("width"))?;
        let height = height.ok_or_else(|| missing("height"))?;
        let colors = colors.ok_or_else(|| missing("colors"))?;
        let total = total.ok_or_else(|| missing("total"))?;
        let spec = match kind {
            Some(k) if k != WorldKind::Custom => WorldSpec::named(k),
            _ => WorldSpec {
                kind: WorldKind::Custom,
                width,
                height,
                alphabet: Vec::new(),
                letters_per_observation: 0,
                transforms: BTreeSet::new(),
                colors,
            },
        };
        if (spec.width, spec.height, spec.colors) != (width, height, colors) {
            return Err(WorldError::Format("dimensions disagree with world".into()));
        }
        let mut images = Vec::with_capacity(total);
        for line in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            images.push(BitImage::from_hex(width, height, colors, line)?);
        }
        if images.len() != total {
            return Err(WorldError::Format(format!(
                "header announces {total} records, found {}",
                images.len()
            )));
        }
        let set = ObservationSet::from_images(spec, images);
        if set.total() != total {
            return Err(WorldError::Format("duplicate records".into()));
        }
        Ok(set)
    }
}

/// Iterates every tuple of `k` indices below `base` in lexicographic order.
fn index_tuples(base: usize, k: usize) -> impl Iterator<Item = Vec<usize>> {
    let count = base.pow(k as u32);
    (0..count).map(move |mut code| {
        let mut t = vec![0; k];
        for slot in t.iter_mut().rev() {
            *slot = code % base;
            code /= base;
        }
        t
    })
}

/// Renders every (letters × placement) combination and deduplicates.
pub fn enumerate_observations(spec: &WorldSpec) -> Result<ObservationSet, WorldError> {
    let count = spec.combination_count();
    if count > ENUMERATION_LIMIT as u128 {
        return Err(WorldError::EnumerationInfeasible {
            count,
            limit: ENUMERATION_LIMIT,
        });
    }
    let k = spec.letters_per_observation;
    let colorings: Vec<Vec<u8>> = if spec.has(Transform::ColorPermutation) {
        index_tuples(spec.colors, k)
            .map(|t| t.into_iter().map(|c| c as u8).collect())
            .collect()
    } else {
        vec![Vec::new()]
    };
    let offsets: Vec<Vec<i64>> = if spec.has(Transform::IndividualVerticalShift) {
        index_tuples(spec.height, k.saturating_sub(1))
            .map(|t| t.into_iter().map(|o| o as i64).collect())
            .collect()
    } else {
        vec![Vec::new()]
    };
    let words: Vec<Vec<usize>> = index_tuples(spec.alphabet.len(), k).collect();

    let images: Vec<BitImage> = words
        .par_iter()
        .map(|word| -> Result<Vec<BitImage>, WorldError> {
            let letters: Vec<&Glyph> = word.iter().map(|&i| &spec.alphabet[i]).collect();
            let mut out = Vec::new();
            for colors in &colorings {
                for rotation in 0..spec.rotation_steps() {
                    for offs in &offsets {
                        let pixels = word_pixels(spec, &letters, rotation, offs, colors)?;
                        for oy in 0..spec.height as i64 {
                            for ox in 0..spec.width as i64 {
                                let mut img = BitImage::new(spec.width, spec.height, spec.colors);
                                for &(x, y, c) in &pixels {
                                    img.set(x + ox, y + oy, c);
                                }
                                out.push(img);
                            }
                        }
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .flatten()
        .collect();
    Ok(ObservationSet::from_images(spec.clone(), images))
}

/// How many observations to draw.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSize {
    Fraction(f64),
    Count(usize),
}

impl SampleSize {
    fn resolve(self, total: u128) -> Result<u128, WorldError> {
        let n = match self {
            SampleSize::Fraction(f) => {
                if !(f > 0.0 && f <= 1.0) {
                    return Err(WorldError::BadFraction(f));
                }
                (f * total as f64).floor() as u128
            }
            SampleSize::Count(c) => c as u128,
        };
        if n > total {
            return Err(WorldError::SampleTooLarge { requested: n, total });
        }
        Ok(n)
    }
}

/// Combinations too numerous to enumerate are sampled by rejection instead.
pub fn is_enumerable(spec: &WorldSpec) -> bool {
    spec.combination_count() <= ENUMERATION_LIMIT as u128
}

/// Draws a reproducible subset of the world's distinct observations.
///
/// Enumerable worlds are sampled uniformly without replacement from the
/// full enumeration. Larger worlds draw random (letters, placement)
/// combinations until the requested number of distinct images is reached;
/// the analytic combination count stands in for the total.
pub fn sample_observations(spec: &WorldSpec, size: SampleSize, seed: u64) -> Result<ObservationSet, WorldError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if is_enumerable(spec) {
        let full = enumerate_observations(spec)?;
        let n = size.resolve(full.total() as u128)? as usize;
        if n == full.total() {
            return Ok(full);
        }
        let mut picked = index::sample(&mut rng, full.total(), n).into_vec();
        picked.sort_unstable();
        let images = picked.into_iter().map(|i| full.images[i].clone()).collect();
        return Ok(ObservationSet {
            spec: spec.clone(),
            images,
        });
    }

    let n = size.resolve(spec.combination_count())? as usize;
    let k = spec.letters_per_observation;
    let mut seen: HashSet<BitImage> = HashSet::with_capacity(n);
    while seen.len() < n {
        let letters: Vec<&Glyph> = (0..k)
            .map(|_| &spec.alphabet[rng.gen_range(0..spec.alphabet.len())])
            .collect();
        let colors: Vec<u8> = if spec.has(Transform::ColorPermutation) {
            (0..k).map(|_| rng.gen_range(0..spec.colors) as u8).collect()
        } else {
            Vec::new()
        };
        let offsets: Vec<i64> = if spec.has(Transform::IndividualVerticalShift) {
            (1..k).map(|_| rng.gen_range(0..spec.height) as i64).collect()
        } else {
            Vec::new()
        };
        let placement = Placement {
            origin: (
                rng.gen_range(0..spec.width) as i64,
                rng.gen_range(0..spec.height) as i64,
            ),
            rotation: rng.gen_range(0..spec.rotation_steps()),
            offsets,
            colors,
        };
        seen.insert(render_word(spec, &letters, &placement)?);
    }
    Ok(ObservationSet::from_images(spec.clone(), seen.into_iter().collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn glyphs(names: &str) -> Vec<Glyph> {
        names.chars().map(|c| Glyph::letter(c).unwrap()).collect()
    }

    fn refs(g: &[Glyph]) -> Vec<&Glyph> {
        g.iter().collect()
    }

    #[test]
    fn alphabets_have_expected_letters() {
        assert_eq!(full_alphabet().len(), 26);
        let reduced: String = reduced_alphabet().iter().map(Glyph::name).collect();
        assert_eq!(reduced, "FGJLNPQRSYZ");
        assert!(full_alphabet().iter().all(|g| !g.trimmed_pixels().is_empty()));
    }

    #[test]
    fn glyph_widths() {
        assert_eq!(Glyph::letter('I').unwrap().width(), 1);
        assert_eq!(Glyph::letter('A').unwrap().width(), 4);
        assert_eq!(Glyph::letter('W').unwrap().width(), 5);
    }

    #[test]
    fn empty_glyph_rejected() {
        let rows = [".....", ".....", ".....", ".....", "....."];
        assert!(matches!(Glyph::from_rows('?', &rows), Err(WorldError::EmptyGlyph('?'))));
    }

    #[test]
    fn ai_word_matches_reference_panel() {
        // Pixel rows 3..=7 of the "AI" example observation of world T.
        let expected = [
            "....................",
            "....................",
            "....................",
            ".......####.#.......",
            ".......#..#.#.......",
            ".......#..#.#.......",
            ".......####.#.......",
            ".......#..#.#.......",
            "....................",
            "....................",
        ];
        let spec = WorldSpec::named(WorldKind::T);
        let g = glyphs("AI");
        let img = render_word(&spec, &refs(&g), &Placement::at(7, 3)).unwrap();
        for (y, row) in expected.iter().enumerate() {
            for (x, c) in row.chars().enumerate() {
                assert_eq!(img.get(x as i64, y as i64, 0), c == '#', "pixel ({x},{y})");
            }
        }
    }

    #[test]
    fn wp_word_uses_proportional_spacing() {
        // W spans columns 10..=14 and P starts at 16 in the reference panel.
        let spec = WorldSpec::named(WorldKind::T);
        let g = glyphs("WP");
        let img = render_word(&spec, &refs(&g), &Placement::at(10, 8)).unwrap();
        assert!(img.get(14, 8, 0));
        assert!(!img.get(15, 8, 0) && !img.get(15, 9, 0));
        assert!(img.get(16, 8, 0));
        // P starts at y=8, so its middle bar wraps onto row 0
        assert!(img.get(16, 0, 0) && img.get(17, 0, 0) && img.get(18, 0, 0));
    }

    #[test]
    fn torus_wrap_identity() {
        for kind in [WorldKind::T, WorldKind::TR1, WorldKind::TC] {
            let spec = WorldSpec::named(kind);
            let g = glyphs("FG");
            let mut p = Placement::at(0, 0);
            if kind == WorldKind::TC {
                p.colors = vec![1, 2];
            }
            let a = render_word(&spec, &refs(&g), &p).unwrap();
            p.origin = (spec.width as i64, spec.height as i64);
            let b = render_word(&spec, &refs(&g), &p).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn rotated_render_equals_global_rotation() {
        let spec = WorldSpec::named(WorldKind::TR1);
        let g = glyphs("FG");
        let (w, h) = (spec.width, spec.height);
        for r in 0..4u8 {
            for &(px, py) in &[(0i64, 0i64), (3, 11), (14, 2)] {
                let upright = render_word(&spec, &refs(&g), &Placement::at(px, py)).unwrap();
                let (rx, ry) = rotate(px, py, r);
                let rotated = render_word(&spec, &refs(&g), &Placement::at(rx, ry).rotated(r)).unwrap();
                let mapped = upright.map_bits(|i| {
                    let (x, y, c) = upright.decode(i);
                    let (x2, y2) = rotate(x as i64, y as i64, r);
                    pixel_index(w, h, x2, y2, c)
                });
                assert_eq!(rotated, mapped, "r={r} p=({px},{py})");
            }
        }
    }

    #[test]
    fn render_errors() {
        let t = WorldSpec::named(WorldKind::T);
        let g = glyphs("AB");
        assert!(matches!(
            render_word(&t, &refs(&g), &Placement::at(0, 0).rotated(1)),
            Err(WorldError::RotationNotAllowed)
        ));
        let mut p = Placement::at(0, 0);
        p.offsets = vec![1];
        assert!(matches!(render_word(&t, &refs(&g), &p), Err(WorldError::OffsetNotAllowed)));
        let mut p = Placement::at(0, 0);
        p.colors = vec![0, 1];
        assert!(matches!(render_word(&t, &refs(&g), &p), Err(WorldError::ColorNotAllowed)));
        let g3 = glyphs("ABC");
        assert!(matches!(
            render_word(&t, &refs(&g3), &Placement::at(0, 0)),
            Err(WorldError::LetterCount { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn tl_offsets_shift_perpendicular_to_word_axis() {
        let spec = WorldSpec::named(WorldKind::TL);
        let g = glyphs("III");
        let mut p = Placement::at(0, 0);
        p.offsets = vec![2, 5];
        let img = render_word(&spec, &refs(&g), &p).unwrap();
        // upright: letters at x=0,2,4, shifted down by 0,2,5
        assert!(img.get(0, 0, 0) && img.get(2, 2, 0) && img.get(4, 5, 0));
        assert!(!img.get(2, 0, 0));
        p.rotation = 1;
        let img = render_word(&spec, &refs(&g), &p).unwrap();
        // a quarter turn maps (x, y) to (y, -x): the shifts become horizontal
        assert!(img.get(0, 0, 0) && img.get(2, -2, 0) && img.get(5, -4, 0));
    }

    #[test]
    fn index_round_trip() {
        let img = BitImage::new(13, 7, 3);
        for &(x, y, c) in &[(0i64, 0i64, 0usize), (12, 6, 2), (-1, -1, 1), (27, 15, 0)] {
            let (dx, dy, dc) = img.decode(img.index(x, y, c));
            assert_eq!((dx as i64, dy as i64, dc), (x.rem_euclid(13), y.rem_euclid(7), c));
        }
    }

    #[test]
    fn hex_round_trip_and_ordering() {
        let mut a = BitImage::new(5, 3, 1);
        a.set_bit(0);
        a.set_bit(14);
        assert_eq!(a.to_hex(), "8002");
        let b = BitImage::from_hex(5, 3, 1, "8002").unwrap();
        assert_eq!(a, b);
        assert!(BitImage::from_hex(5, 3, 1, "8003").is_err());
        let mut c = BitImage::new(5, 3, 1);
        c.set_bit(1);
        // bit 0 set sorts after bit 0 clear
        assert!(c < a);
        assert_eq!(a.ones().collect::<Vec<_>>(), vec![0, 14]);
    }

    #[test]
    fn transformation_counts() {
        let count = |k| letter_transformation_count(&WorldSpec::named(k));
        assert_eq!(count(WorldKind::T), 200);
        assert_eq!(count(WorldKind::TR1), 900);
        assert_eq!(count(WorldKind::TR2), 900);
        assert_eq!(count(WorldKind::TC), 546);
        assert_eq!(count(WorldKind::TL), 640_000);
        assert_eq!(WorldSpec::named(WorldKind::TL).combination_count(), 11_248_640_000);
    }

    #[test]
    fn tl_enumeration_refused() {
        assert!(matches!(
            enumerate_observations(&WorldSpec::named(WorldKind::TL)),
            Err(WorldError::EnumerationInfeasible { .. })
        ));
    }

    fn tiny_world() -> WorldSpec {
        WorldSpec::custom(
            12,
            12,
            glyphs("LIF"),
            2,
            [Transform::GlobalTranslation, Transform::Rotation90Steps],
            1,
        )
        .unwrap()
    }

    #[test]
    fn sampling_is_deterministic_and_full_fraction_is_enumeration() {
        let spec = tiny_world();
        let full = enumerate_observations(&spec).unwrap();
        let all = sample_observations(&spec, SampleSize::Fraction(1.0), 99).unwrap();
        assert_eq!(full, all);
        let a = sample_observations(&spec, SampleSize::Fraction(0.5), 1).unwrap();
        let b = sample_observations(&spec, SampleSize::Fraction(0.5), 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.total(), full.total() / 2);
        assert!(matches!(
            sample_observations(&spec, SampleSize::Count(full.total() + 1), 1),
            Err(WorldError::SampleTooLarge { .. })
        ));
        assert!(matches!(
            sample_observations(&spec, SampleSize::Fraction(0.0), 1),
            Err(WorldError::BadFraction(_))
        ));
    }

    #[test]
    fn observation_file_round_trip() {
        let spec = tiny_world();
        let set = sample_observations(&spec, SampleSize::Count(40), 5).unwrap();
        let mut buf = Vec::new();
        set.write_to(&mut buf).unwrap();
        let back = ObservationSet::read_from(&buf[..]).unwrap();
        assert_eq!(back.images(), set.images());
        assert_eq!(back.dims(), set.dims());
    }

    #[test]
    fn enumeration_closed_under_translation_and_rotation() {
        let spec = tiny_world();
        let full = enumerate_observations(&spec).unwrap();
        let set: HashSet<&BitImage> = full.images().iter().collect();
        let (w, h) = (spec.width, spec.height);
        for img in full.images() {
            let moved = img.map_bits(|i| {
                let (x, y, c) = img.decode(i);
                pixel_index(w, h, x as i64 + 5, y as i64 - 2, c)
            });
            assert!(set.contains(&moved));
            let turned = img.map_bits(|i| {
                let (x, y, c) = img.decode(i);
                let (x, y) = rotate(x as i64, y as i64, 1);
                pixel_index(w, h, x, y, c)
            });
            assert!(set.contains(&turned));
        }
    }
}
