//! Phantom generation, file formats, dataset assembly and patient-level splits.

pub mod formats;
pub mod phantom;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::d4::OrientationLabel;
use crate::error::{Error, Result};
use crate::imgops::{apply_orientation, Modality, Slice};

pub use formats::{read_image, write_image};
pub use phantom::{detect_marker_orientation, generate_phantoms, PhantomSpec};

/// The slices of one patient in one modality, in acquisition order.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    slices: Vec<Slice>,
}

impl Volume {
    pub fn new(slices: Vec<Slice>) -> Result<Self> {
        let first = slices
            .first()
            .ok_or_else(|| Error::Argument("a volume needs at least one slice".into()))?;
        for s in &slices[1..] {
            if s.patient_id != first.patient_id || s.modality != first.modality {
                return Err(Error::Argument(format!(
                    "volume mixes {}/{} with {}/{}",
                    first.patient_id, first.modality, s.patient_id, s.modality
                )));
            }
            if (s.channels(), s.height(), s.width()) != (first.channels(), first.height(), first.width()) {
                return Err(Error::shape(
                    format!("volume {}", first.patient_id),
                    format!("{}x{}x{}", first.channels(), first.height(), first.width()),
                    format!("{}x{}x{}", s.channels(), s.height(), s.width()),
                ));
            }
        }
        Ok(Volume { slices })
    }

    pub fn slices(&self) -> &[Slice] {
        &self.slices
    }

    pub fn sz(&self) -> usize {
        self.slices.len()
    }

    pub fn patient_id(&self) -> &str {
        &self.slices[0].patient_id
    }

    pub fn modality(&self) -> Modality {
        self.slices[0].modality
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub slice: Slice,
    pub label: OrientationLabel,
    /// Position of the slice within its volume.
    pub slice_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub split: Split,
}

impl Dataset {
    /// Every slice of every volume, labelled with its stored orientation
    /// (0 when absent).
    pub fn from_volumes<'a>(volumes: impl IntoIterator<Item = &'a Volume>, split: Split) -> Self {
        let samples = volumes
            .into_iter()
            .flat_map(|v| {
                v.slices().iter().enumerate().map(|(i, s)| Sample {
                    slice: s.clone(),
                    label: s.true_orientation.unwrap_or(OrientationLabel::IDENTITY),
                    slice_index: i,
                })
            })
            .collect();
        Dataset { samples, split }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn patients(&self) -> BTreeSet<String> {
        self.samples.iter().map(|s| s.slice.patient_id.clone()).collect()
    }

    pub fn label_histogram(&self) -> [usize; 8] {
        let mut h = [0; 8];
        for s in &self.samples {
            h[s.label.index()] += 1;
        }
        h
    }

    /// Keeps only samples of one modality.
    pub fn filter_modality(&self, modality: Modality) -> Dataset {
        Dataset {
            samples: self.samples.iter().filter(|s| s.slice.modality == modality).cloned().collect(),
            split: self.split,
        }
    }
}

/// Patient counts per split: every nonzero ratio gets `max(1, floor(n·r))`
/// patients for validation and test, and training takes the remainder.
pub fn split_counts(n_patients: usize, ratios: [f64; 3]) -> Result<[usize; 3]> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(Error::Argument(format!("split ratios {ratios:?} outside [0, 1]")));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Argument(format!("split ratios sum to {sum}, expected 1")));
    }
    let nonzero = ratios.iter().filter(|&&r| r > 0.0).count();
    if n_patients < nonzero {
        return Err(Error::Argument(format!(
            "{n_patients} patients cannot fill {nonzero} nonempty splits"
        )));
    }
    let take = |r: f64| -> usize {
        if r > 0.0 {
            ((n_patients as f64 * r + 1e-9).floor() as usize).max(1)
        } else {
            0
        }
    };
    let val = take(ratios[1]);
    let test = take(ratios[2]);
    let train = n_patients
        .checked_sub(val + test)
        .filter(|&t| t > 0 || ratios[0] == 0.0)
        .ok_or_else(|| Error::Argument(format!("{n_patients} patients too few for ratios {ratios:?}")))?;
    Ok([train, val, test])
}

/// Shuffles patients with `seed` and partitions them; all volumes of a
/// patient (any modality) land in the same split.
pub fn split_by_patient(volumes: &[Volume], ratios: [f64; 3], seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let mut patients: Vec<String> = volumes
        .iter()
        .map(|v| v.patient_id().to_string())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let [n_train, n_val, _] = split_counts(patients.len(), ratios)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    patients.shuffle(&mut rng);

    let assignment: BTreeMap<&str, Split> = patients
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            (p.as_str(), split)
        })
        .collect();
    let pick = |split: Split| {
        Dataset::from_volumes(volumes.iter().filter(|v| assignment[v.patient_id()] == split), split)
    };
    Ok((pick(Split::Train), pick(Split::Val), pick(Split::Test)))
}

/// Replaces each canonical sample by its 8 oriented variants, labelled 0..7.
pub fn expand_orientations(ds: &Dataset) -> Result<Dataset> {
    let mut samples = Vec::with_capacity(ds.samples.len() * 8);
    for s in &ds.samples {
        if s.label != OrientationLabel::IDENTITY {
            return Err(Error::Argument(format!(
                "cannot expand sample of patient {} with label {}; expected 0",
                s.slice.patient_id, s.label
            )));
        }
        let base = s.slice.clone().with_orientation(OrientationLabel::IDENTITY);
        for label in OrientationLabel::all() {
            samples.push(Sample {
                slice: apply_orientation(&base, label),
                label,
                slice_index: s.slice_index,
            });
        }
    }
    Ok(Dataset { samples, split: ds.split })
}

pub const MANIFEST_NAME: &str = "manifest.tsv";

/// One manifest line: `relative-path<TAB>patient<TAB>modality<TAB>label`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub patient: String,
    pub modality: Modality,
    pub label: OrientationLabel,
}

pub fn format_manifest(entries: &[ManifestEntry]) -> String {
    entries
        .iter()
        .map(|e| {
            format!(
                "{}\t{}\t{}\t{}\n",
                e.path.to_string_lossy().replace('\\', "/"),
                e.patient,
                e.modality,
                e.label
            )
        })
        .collect()
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut offset = 0u64;
    let mut out = Vec::new();
    for line in text.split_inclusive('\n') {
        let at = offset;
        offset += line.len() as u64;
        let line = line.trim_end_matches(['\n', '\r']);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [path, patient, modality, label] = fields[..] else {
            return Err(Error::format(at, format!("manifest line has {} fields, expected 4", fields.len())));
        };
        out.push(ManifestEntry {
            path: PathBuf::from(path),
            patient: patient.to_string(),
            modality: modality.parse().map_err(|_| Error::format(at, format!("bad modality `{modality}`")))?,
            label: label.parse().map_err(|_| Error::format(at, format!("bad label `{label}`")))?,
        });
    }
    Ok(out)
}

/// Writes each slice as `<modality>/<patient>/slice_NNN.ori8` under `dir`
/// and appends to `dir/manifest.tsv`. Returns the entries written.
pub fn write_volumes(dir: impl AsRef<Path>, volumes: &[Volume]) -> Result<Vec<ManifestEntry>> {
    let dir = dir.as_ref();
    let mut entries = Vec::new();
    for v in volumes {
        for (i, s) in v.slices().iter().enumerate() {
            let rel = PathBuf::from(v.modality().as_str())
                .join(v.patient_id())
                .join(format!("slice_{i:03}.ori8"));
            write_image(s, dir.join(&rel))?;
            entries.push(ManifestEntry {
                path: rel,
                patient: v.patient_id().to_string(),
                modality: v.modality(),
                label: s.true_orientation.unwrap_or(OrientationLabel::IDENTITY),
            });
        }
    }
    let manifest = dir.join(MANIFEST_NAME);
    let mut text = match fs::read_to_string(&manifest) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(Error::io(&manifest, e)),
    };
    text.push_str(&format_manifest(&entries));
    fs::write(&manifest, text).map_err(|e| Error::io(&manifest, e))?;
    Ok(entries)
}

/// Loads the volumes listed in `dir/manifest.tsv`, optionally restricted to
/// one modality. Slices keep manifest order within each volume.
pub fn load_volumes(dir: impl AsRef<Path>, modality: Option<Modality>) -> Result<Vec<Volume>> {
    let dir = dir.as_ref();
    let manifest = dir.join(MANIFEST_NAME);
    let text = fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
    let mut groups: BTreeMap<(Modality, String), Vec<Slice>> = BTreeMap::new();
    for entry in parse_manifest(&text)? {
        if modality.is_some_and(|m| m != entry.modality) {
            continue;
        }
        let mut slice = read_image(dir.join(&entry.path))?;
        slice.patient_id = entry.patient.clone();
        slice.modality = entry.modality;
        slice.true_orientation = Some(entry.label);
        groups.entry((entry.modality, entry.patient)).or_default().push(slice);
    }
    groups.into_values().map(Volume::new).collect()
}
