//! Domain types for human-object-interaction (HOI) feature vectors.
//!
//! Every detected human-object pair in a video frame is described by one
//! [`HoiVector`]: per-class interaction probabilities, a one-hot object score
//! block (detector confidence in the hot slot) and the human bounding-box
//! size. [`BlockLayout`] fixes how those blocks concatenate into a flat
//! feature vector; [`Vocabulary`] names the interaction and object slots.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which semantic block a flat vector index belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Block {
    Interaction,
    Object,
    Box,
}

impl Block {
    pub const ALL: [Block; 3] = [Block::Interaction, Block::Object, Block::Box];

    /// Position of this block in the flat vector and in coarse heatmaps.
    pub fn index(self) -> usize {
        match self {
            Block::Interaction => 0,
            Block::Object => 1,
            Block::Box => 2,
        }
    }
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Block::Interaction => write!(f, "interaction"),
            Block::Object => write!(f, "object"),
            Block::Box => write!(f, "box"),
        }
    }
}

/// Sizes of the three blocks of a flat HOI vector, in concatenation order:
/// interactions, then objects, then box width/height.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockLayout {
    pub k_int: usize,
    pub k_obj: usize,
    pub k_box: usize,
}

impl Default for BlockLayout {
    /// The stock layout: 29 interaction classes, 81 object classes and the
    /// two box dimensions, 112 elements total.
    fn default() -> Self {
        BlockLayout {
            k_int: 29,
            k_obj: 81,
            k_box: 2,
        }
    }
}

impl BlockLayout {
    pub fn new(k_int: usize, k_obj: usize) -> Self {
        BlockLayout {
            k_int,
            k_obj,
            k_box: 2,
        }
    }

    /// Total flat dimension `D`.
    pub fn dim(&self) -> usize {
        self.k_int + self.k_obj + self.k_box
    }

    /// Maps a flat index to its semantic block.
    pub fn block_of(&self, index: usize) -> Result<Block> {
        if index < self.k_int {
            Ok(Block::Interaction)
        } else if index < self.k_int + self.k_obj {
            Ok(Block::Object)
        } else if index < self.dim() {
            Ok(Block::Box)
        } else {
            Err(Error::Dimension {
                context: "block_of",
                expected: self.dim(),
                actual: index,
            })
        }
    }

    /// Index range `[start, end)` of a block within the flat vector.
    pub fn block_range(&self, block: Block) -> std::ops::Range<usize> {
        match block {
            Block::Interaction => 0..self.k_int,
            Block::Object => self.k_int..self.k_int + self.k_obj,
            Block::Box => self.k_int + self.k_obj..self.dim(),
        }
    }
}

/// Ordered interaction and object class names; list order defines slot order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub interactions: Vec<String>,
    pub objects: Vec<String>,
}

impl Vocabulary {
    pub fn new(interactions: Vec<String>, objects: Vec<String>) -> Result<Self> {
        check_unique(&interactions, "interaction")?;
        check_unique(&objects, "object")?;
        Ok(Vocabulary {
            interactions,
            objects,
        })
    }

    /// Reads one class name per line; blank lines are rejected, surrounding
    /// whitespace is trimmed.
    pub fn names_from_file(path: &Path) -> Result<Vec<String>> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut names = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let name = line.trim();
            if name.is_empty() {
                return Err(Error::Malformed {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: "empty class name".to_string(),
                });
            }
            names.push(name.to_string());
        }
        Ok(names)
    }

    pub fn load(interactions_path: &Path, objects_path: &Path) -> Result<Self> {
        Vocabulary::new(
            Self::names_from_file(interactions_path)?,
            Self::names_from_file(objects_path)?,
        )
    }

    /// The layout these class lists describe.
    pub fn layout(&self) -> BlockLayout {
        BlockLayout::new(self.interactions.len(), self.objects.len())
    }

    pub fn matches_layout(&self, layout: &BlockLayout) -> bool {
        self.interactions.len() == layout.k_int && self.objects.len() == layout.k_obj
    }
}

fn check_unique(names: &[String], what: &str) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for name in names {
        if !seen.insert(name.as_str()) {
            return Err(Error::invalid(format!(
                "duplicate {what} class name {name:?}"
            )));
        }
    }
    Ok(())
}

/// One human-object pair's interpretable feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoiVector {
    /// Per-class interaction probabilities, each in `[0, 1]`.
    pub interactions: Vec<f64>,
    /// One-hot object class scores: at most one strictly positive entry,
    /// holding the detector confidence; each in `[0, 1]`.
    pub objects: Vec<f64>,
    /// Human bounding-box `(width, height)` in pixels, both strictly positive.
    #[serde(rename = "box")]
    pub box_size: (f64, f64),
}

impl HoiVector {
    pub fn new(interactions: Vec<f64>, objects: Vec<f64>, box_size: (f64, f64)) -> Result<Self> {
        let v = HoiVector {
            interactions,
            objects,
            box_size,
        };
        v.validate()?;
        Ok(v)
    }

    /// Checks the value invariants (block lengths are checked against a
    /// layout separately, by [`HoiVector::flatten`]).
    pub fn validate(&self) -> Result<()> {
        for (i, &p) in self.interactions.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!(
                    "interaction probability at slot {i} is {p}, outside [0, 1]"
                )));
            }
        }
        let mut hot = 0usize;
        for (i, &s) in self.objects.iter().enumerate() {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::invalid(format!(
                    "object score at slot {i} is {s}, outside [0, 1]"
                )));
            }
            if s > 0.0 {
                hot += 1;
            }
        }
        if hot > 1 {
            return Err(Error::invalid(format!(
                "object block has {hot} positive entries; one-hot encoding allows at most 1"
            )));
        }
        let (w, h) = self.box_size;
        if !(w > 0.0 && w.is_finite() && h > 0.0 && h.is_finite()) {
            return Err(Error::invalid(format!(
                "box size ({w}, {h}) must be finite and strictly positive"
            )));
        }
        Ok(())
    }

    pub fn conforms_to(&self, layout: &BlockLayout) -> bool {
        self.interactions.len() == layout.k_int && self.objects.len() == layout.k_obj
    }

    /// Concatenates the blocks into the flat vector
    /// `[interactions | objects | width, height]`.
    pub fn flatten(&self, layout: &BlockLayout) -> Result<Vec<f64>> {
        if self.interactions.len() != layout.k_int {
            return Err(Error::Dimension {
                context: "flatten interactions",
                expected: layout.k_int,
                actual: self.interactions.len(),
            });
        }
        if self.objects.len() != layout.k_obj {
            return Err(Error::Dimension {
                context: "flatten objects",
                expected: layout.k_obj,
                actual: self.objects.len(),
            });
        }
        let mut flat = Vec::with_capacity(layout.dim());
        flat.extend_from_slice(&self.interactions);
        flat.extend_from_slice(&self.objects);
        flat.push(self.box_size.0);
        flat.push(self.box_size.1);
        Ok(flat)
    }

    /// Inverse of [`HoiVector::flatten`]; validates the value invariants.
    pub fn unflatten(flat: &[f64], layout: &BlockLayout) -> Result<Self> {
        if flat.len() != layout.dim() {
            return Err(Error::Dimension {
                context: "unflatten",
                expected: layout.dim(),
                actual: flat.len(),
            });
        }
        let int_range = layout.block_range(Block::Interaction);
        let obj_range = layout.block_range(Block::Object);
        HoiVector::new(
            flat[int_range].to_vec(),
            flat[obj_range].to_vec(),
            (flat[layout.dim() - 2], flat[layout.dim() - 1]),
        )
    }

    /// Slot of the highest interaction probability, if the block is nonempty.
    pub fn top_interaction(&self) -> Option<usize> {
        argmax(&self.interactions)
    }

    /// Slot of the hot object entry; `None` when every score is zero.
    pub fn top_object(&self) -> Option<usize> {
        let idx = argmax(&self.objects)?;
        (self.objects[idx] > 0.0).then_some(idx)
    }
}

/// Index of the largest value, lowest index winning ties.
pub(crate) fn argmax(values: &[f64]) -> Option<usize> {
    values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
}

/// All HOI vectors of one video frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub video_id: String,
    pub frame_idx: u64,
    pub detections: Vec<HoiVector>,
}

impl FrameRecord {
    pub fn new(video_id: impl Into<String>, frame_idx: u64, detections: Vec<HoiVector>) -> Self {
        FrameRecord {
            video_id: video_id.into(),
            frame_idx,
            detections,
        }
    }

    pub fn key(&self) -> (String, u64) {
        (self.video_id.clone(), self.frame_idx)
    }
}
