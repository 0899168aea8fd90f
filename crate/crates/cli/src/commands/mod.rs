pub mod bench;
pub mod data;
pub mod eval;
pub mod infer;
pub mod inspect;
pub mod train;

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use slidenet::train::read_dataset;
use slidenet::{ArchKind, Tensor, WeightStore};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Arch {
    Toy,
    Fast,
    Accurate,
}

impl Arch {
    pub fn kind(self) -> ArchKind {
        match self {
            Arch::Toy => ArchKind::Toy,
            Arch::Fast => ArchKind::Fast,
            Arch::Accurate => ArchKind::Accurate,
        }
    }
}

pub fn load_weights(path: &Path) -> CliResult<WeightStore> {
    WeightStore::load(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// `(image id, image)` for each `--image` file, or every image of a dataset directory.
pub fn load_images(images: &[PathBuf], data: Option<&Path>) -> CliResult<Vec<(String, Tensor)>> {
    let mut out = Vec::new();
    if let Some(dir) = data {
        out.extend(read_dataset(dir)?.into_iter().map(|s| (s.id, s.image)));
    }
    for path in images {
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or_else(|| CliError::Usage(format!("no file name in {}", path.display())))?;
        out.push((id, slidenet::image::read_ppm(path)?));
    }
    if out.is_empty() {
        return Err(CliError::Usage("give --image or --data".into()));
    }
    Ok(out)
}
