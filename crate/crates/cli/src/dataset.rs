//! Datasets on disk: `DIR/images/NAME.pgm` with the matching mask at
//! `DIR/masks/NAME.pgm`.

use std::fs;
use std::path::Path;

use bdseg_core::raster::{load_mask, load_pgm, save_mask, save_pgm};
use bdseg_core::tps::LabeledImage;
use bdseg_core::Error;

use crate::CliResult;

#[derive(Debug, Clone, PartialEq)]
pub struct Named {
    pub name: String,
    pub item: LabeledImage,
}

pub fn numbered(items: Vec<LabeledImage>, first: usize) -> Vec<Named> {
    items
        .into_iter()
        .enumerate()
        .map(|(i, item)| Named {
            name: format!("{:05}", first + i),
            item,
        })
        .collect()
}

fn mkdir(p: &Path) -> CliResult<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e).into())
}

pub fn write_dataset(dir: &Path, items: &[Named]) -> CliResult<()> {
    let (img_dir, mask_dir) = (dir.join("images"), dir.join("masks"));
    mkdir(&img_dir)?;
    mkdir(&mask_dir)?;
    for n in items {
        save_pgm(&n.item.image, img_dir.join(format!("{}.pgm", n.name)))?;
        save_mask(&n.item.mask, mask_dir.join(format!("{}.pgm", n.name)))?;
    }
    Ok(())
}

/// Names of the `.pgm` files in `dir`, sorted.
pub fn pgm_names(dir: &Path) -> CliResult<Vec<String>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::new();
    for e in entries {
        let path = e.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x == "pgm") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                names.push(stem.to_string());
            }
        }
    }
    names.sort();
    Ok(names)
}

pub fn read_dataset(dir: &Path) -> CliResult<Vec<Named>> {
    let (img_dir, mask_dir) = (dir.join("images"), dir.join("masks"));
    let names = pgm_names(&img_dir)?;
    if names.is_empty() {
        return Err(Error::Domain(format!("no images in {}", img_dir.display())).into());
    }
    names
        .into_iter()
        .map(|name| {
            let image = load_pgm(img_dir.join(format!("{name}.pgm")))?;
            let mask = load_mask(mask_dir.join(format!("{name}.pgm")))?;
            Ok(Named {
                item: LabeledImage::new(image, mask)?,
                name,
            })
        })
        .collect()
}
