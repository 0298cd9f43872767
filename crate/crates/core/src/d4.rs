//! The eight orientations of a 2D slice and their group algebra.
//!
//! Label semantics (corner grid `[[1,2],[3,4]]` of the canonical image):
//!
//! | label | operation                     | result          |
//! |-------|-------------------------------|-----------------|
//! | 0     | identity                      | `[[1,2],[3,4]]` |
//! | 1     | horizontal flip               | `[[2,1],[4,3]]` |
//! | 2     | vertical flip                 | `[[3,4],[1,2]]` |
//! | 3     | rotate 180°                   | `[[4,3],[2,1]]` |
//! | 4     | transpose (main diagonal)     | `[[1,3],[2,4]]` |
//! | 5     | rotate 90° clockwise          | `[[3,1],[4,2]]` |
//! | 6     | rotate 270° clockwise         | `[[2,4],[1,3]]` |
//! | 7     | anti-transpose                | `[[4,2],[3,1]]` |
//!
//! The composition and inverse tables are derived from [`coordinate_map`]
//! by probing an asymmetric grid, never typed in by hand. The
//! [`REFERENCE_COMPOSE`] and [`REFERENCE_INVERSE_ACTION`] fixtures are only
//! compared against.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the 8 orientation variants, `0` being the canonical pose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct OrientationLabel(u8);

impl OrientationLabel {
    pub const IDENTITY: OrientationLabel = OrientationLabel(0);
    pub const COUNT: usize = 8;

    pub fn new(value: u8) -> Result<Self> {
        if value < 8 {
            Ok(OrientationLabel(value))
        } else {
            Err(Error::Range(format!("orientation label {value} not in 0..=7")))
        }
    }

    /// Panics on values outside `0..8`; for indices that come from loops over 0..8.
    pub(crate) fn from_index(index: usize) -> Self {
        assert!(index < 8, "orientation index {index} out of range");
        OrientationLabel(index as u8)
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// Labels 4..=7 exchange the width and height of the image.
    pub fn swaps_axes(self) -> bool {
        self.0 >= 4
    }

    pub fn all() -> impl Iterator<Item = OrientationLabel> + Clone {
        (0..8u8).map(OrientationLabel)
    }

    pub fn describe(self) -> &'static str {
        match self.0 {
            0 => "identity",
            1 => "horizontal flip",
            2 => "vertical flip",
            3 => "rotate 180",
            4 => "transpose",
            5 => "rotate 90 clockwise",
            6 => "rotate 270 clockwise",
            _ => "anti-transpose",
        }
    }
}

impl TryFrom<u8> for OrientationLabel {
    type Error = Error;

    fn try_from(value: u8) -> Result<Self> {
        OrientationLabel::new(value)
    }
}

impl From<OrientationLabel> for u8 {
    fn from(label: OrientationLabel) -> u8 {
        label.0
    }
}

impl fmt::Display for OrientationLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for OrientationLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v: u8 = s
            .trim()
            .parse()
            .map_err(|_| Error::Range(format!("`{s}` is not an orientation label")))?;
        OrientationLabel::new(v)
    }
}

/// Output `(width, height)` of an `sx` × `sy` image after applying `label`.
pub fn output_dims(label: OrientationLabel, sx: usize, sy: usize) -> (usize, usize) {
    if label.swaps_axes() {
        (sy, sx)
    } else {
        (sx, sy)
    }
}

/// Source pixel `(x, y)` read by target pixel `(x, y)` when transforming an
/// image that is `sx` wide and `sy` high. Indices are 0-based, so a mirrored
/// coordinate is `(sx - 1) - x`.
pub fn coordinate_map(
    label: OrientationLabel,
    x: usize,
    y: usize,
    sx: usize,
    sy: usize,
) -> Result<(usize, usize)> {
    let (out_w, out_h) = output_dims(label, sx, sy);
    if x >= out_w || y >= out_h {
        return Err(Error::Range(format!(
            "target pixel ({x}, {y}) outside {out_w}x{out_h} output of label {label}"
        )));
    }
    Ok(map_unchecked(label, x, y, sx, sy))
}

#[inline]
pub(crate) fn map_unchecked(
    label: OrientationLabel,
    x: usize,
    y: usize,
    sx: usize,
    sy: usize,
) -> (usize, usize) {
    match label.0 {
        0 => (x, y),
        1 => (sx - 1 - x, y),
        2 => (x, sy - 1 - y),
        3 => (sx - 1 - x, sy - 1 - y),
        4 => (y, x),
        5 => (y, sy - 1 - x),
        6 => (sx - 1 - y, x),
        _ => (sx - 1 - y, sy - 1 - x),
    }
}

/// Composition matrix as printed in the reference material: `A[i][j] = k`
/// means applying `j` and then `i` equals applying `k`.
pub const REFERENCE_COMPOSE: [[u8; 8]; 8] = [
    [0, 1, 2, 3, 4, 5, 6, 7],
    [1, 0, 3, 2, 5, 4, 7, 6],
    [2, 3, 0, 1, 6, 7, 4, 5],
    [3, 2, 1, 0, 7, 6, 5, 4],
    [4, 6, 5, 7, 0, 2, 1, 3],
    [5, 7, 4, 6, 1, 3, 0, 2],
    [6, 4, 7, 5, 2, 0, 3, 1],
    [7, 5, 6, 4, 3, 1, 2, 0],
];

/// Inverse-action matrix from the reference material: `B[i][k] = j` means the
/// inverse of operator `i` maps `k` back to `j`.
pub const REFERENCE_INVERSE_ACTION: [[u8; 8]; 8] = [
    [0, 1, 2, 3, 4, 5, 6, 7],
    [1, 0, 3, 2, 5, 4, 7, 6],
    [2, 3, 0, 1, 6, 7, 4, 5],
    [3, 2, 1, 0, 7, 6, 5, 4],
    [4, 6, 5, 7, 0, 2, 1, 3],
    [6, 4, 7, 5, 2, 0, 3, 1],
    [5, 7, 4, 6, 1, 3, 0, 2],
    [7, 5, 6, 4, 3, 1, 2, 0],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableKind {
    Compose,
    InverseAction,
}

impl fmt::Display for TableKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TableKind::Compose => "compose",
            TableKind::InverseAction => "inverse_action",
        })
    }
}

/// One entry where a derived table disagrees with a reference fixture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableMismatch {
    pub table: TableKind,
    pub row: usize,
    pub col: usize,
    pub derived: u8,
    pub expected: u8,
}

impl fmt::Display for TableMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}[{}][{}]: derived {} expected {}",
            self.table, self.row, self.col, self.derived, self.expected
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransformTables {
    compose: [[OrientationLabel; 8]; 8],
    inverse_action: [[OrientationLabel; 8]; 8],
    inverse: [OrientationLabel; 8],
}

/// 4×4 grid of 16 distinct values; no non-identity transform fixes it.
fn probe_grid() -> Vec<u8> {
    (0..16).collect()
}

fn transform_grid(label: OrientationLabel, grid: &[u8], side: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(grid.len());
    for y in 0..side {
        for x in 0..side {
            let (sx, sy) = map_unchecked(label, x, y, side, side);
            out.push(grid[sy * side + sx]);
        }
    }
    out
}

impl TransformTables {
    /// Derives all tables from [`coordinate_map`] on a probe grid.
    pub fn derive() -> Self {
        let side = 4;
        let probe = probe_grid();
        let singles: Vec<Vec<u8>> = OrientationLabel::all()
            .map(|l| transform_grid(l, &probe, side))
            .collect();

        let mut compose = [[OrientationLabel::IDENTITY; 8]; 8];
        for i in OrientationLabel::all() {
            for j in OrientationLabel::all() {
                let composed = transform_grid(i, &singles[j.index()], side);
                let mut matches = singles
                    .iter()
                    .enumerate()
                    .filter(|(_, s)| **s == composed)
                    .map(|(k, _)| k);
                let k = matches
                    .next()
                    .expect("composition of two orientations left the group");
                assert!(
                    matches.next().is_none(),
                    "probe grid has a non-trivial symmetry"
                );
                compose[i.index()][j.index()] = OrientationLabel::from_index(k);
            }
        }

        let mut inverse_action = [[OrientationLabel::IDENTITY; 8]; 8];
        for i in 0..8 {
            for j in 0..8 {
                let k = compose[i][j].index();
                inverse_action[i][k] = OrientationLabel::from_index(j);
            }
        }
        let mut inverse = [OrientationLabel::IDENTITY; 8];
        for i in 0..8 {
            inverse[i] = inverse_action[i][0];
        }

        TransformTables {
            compose,
            inverse_action,
            inverse,
        }
    }

    /// Label equal to applying `j` first and then `i`.
    pub fn compose(&self, i: OrientationLabel, j: OrientationLabel) -> OrientationLabel {
        self.compose[i.index()][j.index()]
    }

    /// The `j` with `compose(i, j) == k`.
    pub fn invert_label(&self, i: OrientationLabel, k: OrientationLabel) -> OrientationLabel {
        self.inverse_action[i.index()][k.index()]
    }

    pub fn inverse(&self, i: OrientationLabel) -> OrientationLabel {
        self.inverse[i.index()]
    }

    pub fn compose_matrix(&self) -> [[u8; 8]; 8] {
        self.compose.map(|row| row.map(u8::from))
    }

    pub fn inverse_action_matrix(&self) -> [[u8; 8]; 8] {
        self.inverse_action.map(|row| row.map(u8::from))
    }

    pub fn inverse_vector(&self) -> [u8; 8] {
        self.inverse.map(u8::from)
    }

    /// Entry-wise comparison with the reference fixtures; empty when they agree.
    pub fn diff_against_reference(&self) -> Vec<TableMismatch> {
        self.diff_against(&REFERENCE_COMPOSE, &REFERENCE_INVERSE_ACTION)
    }

    pub fn diff_against(
        &self,
        compose: &[[u8; 8]; 8],
        inverse_action: &[[u8; 8]; 8],
    ) -> Vec<TableMismatch> {
        let mut out = Vec::new();
        let pairs = [
            (TableKind::Compose, self.compose_matrix(), compose),
            (TableKind::InverseAction, self.inverse_action_matrix(), inverse_action),
        ];
        for (table, derived, expected) in pairs {
            for row in 0..8 {
                for col in 0..8 {
                    if derived[row][col] != expected[row][col] {
                        out.push(TableMismatch {
                            table,
                            row,
                            col,
                            derived: derived[row][col],
                            expected: expected[row][col],
                        });
                    }
                }
            }
        }
        out
    }
}

/// Process-wide derived tables.
pub fn tables() -> &'static TransformTables {
    static TABLES: OnceLock<TransformTables> = OnceLock::new();
    TABLES.get_or_init(TransformTables::derive)
}

/// Renders an 8×8 table one row per line, entries separated by spaces.
pub fn format_matrix(m: &[[u8; 8]; 8]) -> String {
    m.iter()
        .map(|row| {
            row.iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect::<Vec<_>>()
        .join("\n")
}
