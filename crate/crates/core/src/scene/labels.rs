use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{read_jtns, write_jtns, Stored};

/// Per-pixel integer ids, row-major; 0 marks unlabeled/background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelImage {
    pub width: usize,
    pub height: usize,
    pub ids: Vec<u32>,
}

impl LabelImage {
    pub fn new(width: usize, height: usize, ids: Vec<u32>) -> Result<Self> {
        if ids.len() != width * height {
            return Err(Error::invalid(format!("{} labels for {width}x{height}", ids.len())));
        }
        Ok(Self { width, height, ids })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            ids: vec![0; width * height],
        }
    }

    pub fn get(&self, u: usize, v: usize) -> u32 {
        self.ids[v * self.width + u]
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Sorted distinct non-zero ids.
    pub fn classes(&self) -> Vec<u32> {
        let mut c: Vec<u32> = self.ids.iter().copied().filter(|&i| i != 0).collect();
        c.sort_unstable();
        c.dedup();
        c
    }

    pub fn to_stored(&self) -> Stored {
        Stored::I64 {
            shape: vec![self.height, self.width],
            data: self.ids.iter().map(|&i| i as i64).collect(),
        }
    }

    pub fn from_stored(s: Stored) -> Result<Self> {
        let (shape, data) = s.into_i64()?;
        let [h, w] = shape[..] else {
            return Err(Error::invalid(format!("label map must be 2-D, got {shape:?}")));
        };
        let ids = data
            .into_iter()
            .map(|v| u32::try_from(v).map_err(|_| Error::invalid(format!("negative label {v}"))))
            .collect::<Result<_>>()?;
        Self::new(w, h, ids)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        write_jtns(std::io::BufWriter::new(f), &self.to_stored())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_stored(read_jtns(std::io::BufReader::new(f))?)
    }
}

/// Which ground-truth id a label map carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LabelMode {
    #[default]
    Semantic,
    Instance,
}

impl LabelMode {
    pub fn select<'a>(&self, view: &'a super::GtView) -> &'a LabelImage {
        match self {
            Self::Semantic => &view.semantic,
            Self::Instance => &view.instance,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Semantic => "semantic",
            Self::Instance => "instance",
        }
    }
}

impl std::str::FromStr for LabelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "semantic" => Ok(Self::Semantic),
            "instance" => Ok(Self::Instance),
            _ => Err(Error::invalid(format!("unknown label mode `{s}` (semantic | instance)"))),
        }
    }
}
