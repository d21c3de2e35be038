//! `root/<domain>/<class_name>/<image>` datasets.

use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use serde::{Deserialize, Serialize};

use super::{apply_split, ClassSplit, Dataset, Domain, DomainPool, Image};
use crate::error::{Result, RosError};

const EXTENSIONS: &[&str] = &["png", "jpg", "jpeg"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FolderSpec {
    pub root: PathBuf,
    pub source_domain: String,
    pub target_domain: String,
    /// Number of known classes taken from the head of the ordered class list.
    /// When absent, a class-list file is required and all its entries are known.
    pub n_known: Option<usize>,
    pub class_list: Option<PathBuf>,
    /// Images are resized to `image_size × image_size`.
    pub image_size: usize,
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| RosError::io(dir, e))?
        .map(|entry| entry.map(|e| e.path()).map_err(|e| RosError::io(dir, e)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

/// Class directory names of a domain in case-sensitive lexicographic order.
fn class_dirs(domain_dir: &Path) -> Result<Vec<String>> {
    Ok(sorted_entries(domain_dir)?
        .into_iter()
        .filter(|p| p.is_dir())
        .filter_map(|p| p.file_name().and_then(|n| n.to_str()).map(str::to_owned))
        .collect())
}

/// One class name per line; blank lines and surrounding whitespace are ignored.
pub fn read_class_list(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| RosError::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect())
}

fn load_image(path: &Path, size: usize) -> Result<Image> {
    let decoded = image::open(path).map_err(|e| RosError::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let rgb = if decoded.width() as usize == size && decoded.height() as usize == size {
        decoded.to_rgb8()
    } else {
        decoded
            .resize_exact(size as u32, size as u32, FilterType::Triangle)
            .to_rgb8()
    };
    let data = rgb.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
    Image::new(size, size, 3, data)
}

fn load_pool(dir: &Path, domain: Domain, classes: &[String], size: usize) -> Result<DomainPool> {
    if !dir.is_dir() {
        return Err(RosError::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "missing domain directory"),
        ));
    }
    let mut items = Vec::new();
    for (class_idx, name) in classes.iter().enumerate() {
        let class_dir = dir.join(name);
        if !class_dir.is_dir() {
            continue;
        }
        for path in sorted_entries(&class_dir)? {
            if is_image(&path) {
                items.push((class_idx, load_image(&path, size)?));
            }
        }
    }
    Ok(DomainPool {
        domain,
        classes: classes.to_vec(),
        items,
    })
}

/// Resolves the ordered class list and the known/unknown split for a folder dataset.
pub fn folder_split(spec: &FolderSpec) -> Result<ClassSplit> {
    let target_dir = spec.root.join(&spec.target_domain);
    if !target_dir.is_dir() {
        return Err(RosError::io(
            &target_dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "missing domain directory"),
        ));
    }
    let discovered = class_dirs(&target_dir)?;
    match (&spec.class_list, spec.n_known) {
        (Some(list_path), n_known) => {
            let listed = read_class_list(list_path)?;
            let n_known = n_known.unwrap_or(listed.len());
            if n_known == 0 || n_known > listed.len() {
                return Err(RosError::validation(format!(
                    "n_known={n_known} but the class list has {} entries",
                    listed.len()
                )));
            }
            let mut unknown: Vec<String> = listed[n_known..].to_vec();
            unknown.extend(discovered.into_iter().filter(|c| !listed.contains(c)));
            ClassSplit::new(listed[..n_known].to_vec(), unknown)
        }
        (None, Some(n_known)) => ClassSplit::from_ordered(&discovered, n_known),
        (None, None) => Err(RosError::validation(
            "folder dataset needs n_known or a class-list file",
        )),
    }
}

/// Loads source and target domains. The source keeps only known classes relabeled
/// in split order; the target keeps every class with its ground truth for evaluation.
pub fn load_image_folder(spec: &FolderSpec) -> Result<(Dataset, Dataset, ClassSplit)> {
    let split = folder_split(spec)?;
    let classes: Vec<String> = split.known.iter().chain(&split.unknown).cloned().collect();
    let source = load_pool(
        &spec.root.join(&spec.source_domain),
        Domain::Source,
        &classes,
        spec.image_size,
    )?;
    let target = load_pool(
        &spec.root.join(&spec.target_domain),
        Domain::Target,
        &classes,
        spec.image_size,
    )?;
    let (source_set, target_set) = apply_split(&source, &target, &split)?;
    Ok((source_set, target_set, split))
}

/// Both domains with every class, ordered by the class-list file when given
/// (unlisted classes appended in lexicographic order), else lexicographically.
pub fn load_folder_pools(spec: &FolderSpec) -> Result<(DomainPool, DomainPool)> {
    let target_dir = spec.root.join(&spec.target_domain);
    if !target_dir.is_dir() {
        return Err(RosError::io(
            &target_dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "missing domain directory"),
        ));
    }
    let discovered = class_dirs(&target_dir)?;
    let classes = match &spec.class_list {
        Some(list_path) => {
            let mut listed = read_class_list(list_path)?;
            let extra: Vec<String> = discovered.into_iter().filter(|c| !listed.contains(c)).collect();
            listed.extend(extra);
            listed
        }
        None => discovered,
    };
    let source = load_pool(
        &spec.root.join(&spec.source_domain),
        Domain::Source,
        &classes,
        spec.image_size,
    )?;
    let target = load_pool(&target_dir, Domain::Target, &classes, spec.image_size)?;
    Ok((source, target))
}

fn write_pool(dir: &Path, pool: &DomainPool) -> Result<()> {
    let mut counters = vec![0usize; pool.classes.len()];
    for (class_idx, img) in &pool.items {
        let class_dir = dir.join(&pool.classes[*class_idx]);
        fs::create_dir_all(&class_dir).map_err(|e| RosError::io(&class_dir, e))?;
        let path = class_dir.join(format!("{:05}.png", counters[*class_idx]));
        counters[*class_idx] += 1;
        let bytes: Vec<u8> = img
            .data()
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let buffer = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, bytes)
            .ok_or_else(|| RosError::shape("export supports 3-channel images only"))?;
        buffer.save(&path).map_err(|e| RosError::Image {
            path: path.clone(),
            reason: e.to_string(),
        })?;
    }
    Ok(())
}

/// Writes a pair of pools in the folder layout plus `classes.txt` with the class order.
pub fn export_folder(
    root: &Path,
    source: &DomainPool,
    target: &DomainPool,
    source_name: &str,
    target_name: &str,
) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| RosError::io(root, e))?;
    write_pool(&root.join(source_name), source)?;
    write_pool(&root.join(target_name), target)?;
    let list_path = root.join("classes.txt");
    let mut list = target.classes.join("\n");
    list.push('\n');
    fs::write(&list_path, list).map_err(|e| RosError::io(&list_path, e))
}
