#![allow(dead_code)]

use std::path::{Path, PathBuf};

use ringforge::synth::{build_dataset, write_phantoms, DatasetManifest, MaskParams};

/// Phantoms plus ringed pairs under `root/<name>`; returns the manifest path.
pub fn make_dataset(root: &Path, name: &str, size: usize, n_clean: usize, n_masks: usize, seed: u64) -> PathBuf {
    let clean = root.join(format!("{name}_clean"));
    write_phantoms(&clean, n_clean, size, size, seed).unwrap();
    let mut params = MaskParams::for_size(size, size);
    params.seed = seed;
    let out = root.join(name);
    build_dataset(&clean, n_masks, &params, 0.7, &out).unwrap();
    out.join(DatasetManifest::FILE_NAME)
}

pub fn read_tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}
