//! Parametric ring masks and paired dataset generation.
//!
//! A mask is a white canvas carrying partial or full concentric annuli. Each
//! ring is described by five features: radius, thickness, gray level, and the
//! start/end of its angular extent. Masks are alpha-blended onto clean slices
//! to form `(ringed, clean)` training pairs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::image::Image;
use crate::io::{create_dir, load_pgm, read_json, save_pgm, write_json};
use crate::par;
use crate::prng::Prng;

/// Closed real interval, serialized as `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub const fn point(v: f64) -> Self {
        Interval { lo: v, hi: v }
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    fn check(&self, name: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi) {
            return Err(invalid!("{name} range [{}, {}] is empty or not finite", self.lo, self.hi));
        }
        Ok(())
    }
}

impl From<[f64; 2]> for Interval {
    fn from([lo, hi]: [f64; 2]) -> Self {
        Interval { lo, hi }
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.lo, i.hi]
    }
}

/// One annulus (or arc of an annulus) of a ring mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RingSpec {
    /// Pixels from the frame center to the ring midline.
    pub radius: f64,
    pub thickness: f64,
    /// Gray level in `[0, 255]`.
    pub color: f64,
    /// Degrees in `[0, 360)`, counter-clockwise from the +column axis.
    pub theta_start: f64,
    /// Degrees in `(theta_start, theta_start + 360]`.
    pub theta_end: f64,
}

impl RingSpec {
    pub fn full(radius: f64, thickness: f64, color: f64) -> Self {
        RingSpec {
            radius,
            thickness,
            color,
            theta_start: 0.0,
            theta_end: 360.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.radius > 0.0
            && self.thickness > 0.0
            && self.thickness <= self.radius
            && (0.0..=255.0).contains(&self.color)
            && (0.0..360.0).contains(&self.theta_start)
            && self.theta_end > self.theta_start
            && self.theta_end <= self.theta_start + 360.0;
        if ok {
            Ok(())
        } else {
            Err(invalid!("invalid ring {self:?}"))
        }
    }

    fn covers_angle(&self, angle: f64) -> bool {
        let a = if angle < self.theta_start { angle + 360.0 } else { angle };
        a < self.theta_end
    }
}

/// Sampling ranges for the ring features of one mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskParams {
    /// Inclusive `[min, max]` ring count.
    pub num_rings: [usize; 2],
    pub radius: Interval,
    pub thickness: Interval,
    /// Dark gray-level band, `[0, 255]` scale.
    pub color: Interval,
    /// Optional second (bright) band; a single draw picks uniformly over the
    /// union of both bands.
    pub bright_color: Option<Interval>,
    pub theta_start: Interval,
    pub theta_span: Interval,
    pub seed: u64,
}

impl MaskParams {
    /// Defaults scaled to a `height x width` frame.
    pub fn for_size(height: usize, width: usize) -> Self {
        let half = height.min(width) as f64 / 2.0;
        MaskParams {
            num_rings: [1, 8],
            radius: Interval::new(4.0, (half - 2.0).max(4.0)),
            thickness: Interval::new(1.0, 4.0),
            color: Interval::new(0.0, 0.4 * 255.0),
            bright_color: None,
            theta_start: Interval::new(0.0, 360.0),
            theta_span: Interval::new(90.0, 360.0),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_rings[0] > self.num_rings[1] {
            return Err(invalid!("ring count range {:?} is empty", self.num_rings));
        }
        self.radius.check("radius")?;
        self.thickness.check("thickness")?;
        self.color.check("color")?;
        self.theta_start.check("theta_start")?;
        self.theta_span.check("theta_span")?;
        if self.radius.lo <= 0.0 || self.thickness.lo <= 0.0 {
            return Err(invalid!("radius and thickness must be positive"));
        }
        if self.thickness.hi > self.radius.lo {
            return Err(invalid!(
                "thickness up to {} could exceed radius down to {}",
                self.thickness.hi,
                self.radius.lo
            ));
        }
        let bands = std::iter::once(self.color).chain(self.bright_color);
        for band in bands {
            band.check("color")?;
            if band.lo < 0.0 || band.hi > 255.0 {
                return Err(invalid!("color band [{}, {}] outside [0, 255]", band.lo, band.hi));
            }
        }
        if self.theta_start.lo < 0.0 || self.theta_start.hi > 360.0 {
            return Err(invalid!("theta_start must lie in [0, 360]"));
        }
        if self.theta_span.lo <= 0.0 || self.theta_span.hi > 360.0 {
            return Err(invalid!("theta_span must lie in (0, 360]"));
        }
        Ok(())
    }

    fn draw_color(&self, g: &mut Prng) -> Result<f64> {
        match self.bright_color {
            None => g.uniform(self.color.lo, self.color.hi),
            Some(bright) => {
                let total = self.color.len() + bright.len();
                let t = g.uniform(0.0, total)?;
                Ok(if t < self.color.len() {
                    self.color.lo + t
                } else {
                    (bright.lo + t - self.color.len()).min(bright.hi)
                })
            }
        }
    }
}

impl Default for MaskParams {
    fn default() -> Self {
        MaskParams::for_size(64, 64)
    }
}

/// Draws one mask's rings. The ring count is drawn first, then each ring's
/// fields in the order radius, thickness, color, start angle, span.
pub fn sample_rings(params: &MaskParams, g: &mut Prng) -> Result<Vec<RingSpec>> {
    params.validate()?;
    let count = g.uniform_int(params.num_rings[0], params.num_rings[1])?;
    let mut rings = Vec::with_capacity(count);
    for _ in 0..count {
        let radius = g.uniform(params.radius.lo, params.radius.hi)?;
        let thickness = g.uniform(params.thickness.lo, params.thickness.hi)?.min(radius);
        let color = params.draw_color(g)?;
        let mut theta_start = g.uniform(params.theta_start.lo, params.theta_start.hi)?;
        if theta_start >= 360.0 {
            theta_start -= 360.0;
        }
        let span = g.uniform(params.theta_span.lo, params.theta_span.hi)?;
        rings.push(RingSpec {
            radius,
            thickness,
            color,
            theta_start,
            theta_end: theta_start + span,
        });
    }
    Ok(rings)
}

/// Polar angle of pixel `(row, col)` about `center`, in degrees `[0, 360)`.
/// Rows grow downwards, so "up" is 90 degrees.
pub fn pixel_angle(row: f64, col: f64, center: (f64, f64)) -> f64 {
    let deg = (center.0 - row).atan2(col - center.1).to_degrees();
    if deg < 0.0 {
        (deg + 360.0) % 360.0
    } else {
        deg
    }
}

pub fn frame_center(height: usize, width: usize) -> (f64, f64) {
    ((height as f64 - 1.0) / 2.0, (width as f64 - 1.0) / 2.0)
}

/// Rasterizes rings onto a white canvas. Membership is a hard predicate;
/// later rings overwrite earlier ones.
pub fn render_mask(rings: &[RingSpec], height: usize, width: usize) -> Image {
    let center = frame_center(height, width);
    Image::from_fn(height, width, |r, c| {
        let (dr, dc) = (r as f64 - center.0, c as f64 - center.1);
        let dist = dr.hypot(dc);
        let angle = pixel_angle(r as f64, c as f64, center);
        rings
            .iter()
            .rev()
            .find(|ring| (dist - ring.radius).abs() < ring.thickness / 2.0 && ring.covers_angle(angle))
            .map_or(1.0, |ring| ring.color / 255.0)
    })
}

/// Blends the mask's ring pixels (value < 1) onto `clean`.
pub fn superimpose(clean: &Image, mask: &Image, alpha: f64) -> Result<Image> {
    if !clean.same_dims(mask) {
        return Err(shape_err!(
            "clean {}x{} vs mask {}x{}",
            clean.height(),
            clean.width(),
            mask.height(),
            mask.width()
        ));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(invalid!("alpha {alpha} outside [0, 1]"));
    }
    let data = clean
        .data()
        .iter()
        .zip(mask.data())
        .map(|(&x, &m)| if m < 1.0 { (1.0 - alpha) * x + alpha * m } else { x })
        .collect();
    Image::new(clean.height(), clean.width(), clean.channels(), data)
}

/// Smooth stand-in for a region-of-interest micro-CT slice inside a bamboo
/// stick: a fibrous matrix with slow density drift, fine granular texture and
/// vascular bundles (bright fiber sheaths around dark vessel pores). The
/// texture fills the whole frame.
pub fn phantom(height: usize, width: usize, g: &mut Prng) -> Image {
    use std::f64::consts::TAU;
    let s = height.min(width) as f64;
    let base = 0.45 + 0.1 * g.next_f64();

    // (k_row, k_col, phase, amplitude)
    let mut waves: Vec<(f64, f64, f64, f64)> = Vec::new();
    for _ in 0..3 {
        let (angle, period) = (g.next_f64() * TAU, s * (0.6 + 0.8 * g.next_f64()));
        let k = TAU / period;
        waves.push((k * angle.sin(), k * angle.cos(), g.next_f64() * TAU, 0.04 + 0.03 * g.next_f64()));
    }
    for _ in 0..6 {
        let (angle, period) = (g.next_f64() * TAU, 5.0 + 6.0 * g.next_f64());
        let k = TAU / period;
        waves.push((k * angle.sin(), k * angle.cos(), g.next_f64() * TAU, 0.015 + 0.015 * g.next_f64()));
    }

    // (row, col, sigma, amplitude); sheaths positive, pores negative
    let mut blobs: Vec<(f64, f64, f64, f64)> = Vec::new();
    let n_bundles = ((s / 64.0).powi(2) * (8.0 + 6.0 * g.next_f64())).round().max(1.0) as usize;
    for _ in 0..n_bundles {
        let row = g.next_f64() * height as f64;
        let col = g.next_f64() * width as f64;
        let size = s / 64.0 * (2.0 + 1.5 * g.next_f64());
        blobs.push((row, col, size, 0.2 + 0.1 * g.next_f64()));
        let pores = 1 + (g.next_f64() * 2.0) as usize;
        for _ in 0..pores {
            let phi = g.next_f64() * TAU;
            let off = 0.5 * size * g.next_f64();
            blobs.push((
                row + off * phi.sin(),
                col + off * phi.cos(),
                size * (0.35 + 0.15 * g.next_f64()),
                -(0.35 + 0.15 * g.next_f64()),
            ));
        }
    }

    Image::from_fn(height, width, |r, c| {
        let (rf, cf) = (r as f64, c as f64);
        let mut v = base;
        for &(kr, kc, phase, amp) in &waves {
            v += amp * (kr * rf + kc * cf + phase).cos();
        }
        for &(br, bc, sigma, amp) in &blobs {
            let d2 = (rf - br).powi(2) + (cf - bc).powi(2);
            v += amp * (-d2 / (2.0 * sigma * sigma)).exp();
        }
        v
    })
}

/// One `(ringed, clean)` pair of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    pub input: String,
    pub target: String,
    pub mask_id: usize,
    pub clean_id: usize,
}

/// Dataset index. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub alpha: f64,
    pub n_masks: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<TestVariant>,
    pub params: MaskParams,
    pub pairs: Vec<PairEntry>,
    #[serde(skip)]
    root: PathBuf,
}

impl DatasetManifest {
    pub const FILE_NAME: &'static str = "manifest.json";

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut m: DatasetManifest = read_json(path)?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn input_path(&self, pair: &PairEntry) -> PathBuf {
        self.root.join(&pair.input)
    }

    pub fn target_path(&self, pair: &PairEntry) -> PathBuf {
        self.root.join(&pair.target)
    }

    pub fn load_pair(&self, pair: &PairEntry) -> Result<(Image, Image)> {
        Ok((load_pgm(self.input_path(pair))?, load_pgm(self.target_path(pair))?))
    }

    /// Keeps only the listed pair indices (used for train/validation splits).
    pub fn subset(&self, indices: &[usize]) -> DatasetManifest {
        let mut m = self.clone();
        m.pairs = indices.iter().map(|&i| self.pairs[i].clone()).collect();
        m
    }
}

/// Sorted `*.pgm` files of a directory.
pub fn list_pgm(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn load_clean_set(clean_dir: &Path) -> Result<Vec<Image>> {
    let files = list_pgm(clean_dir)?;
    if files.is_empty() {
        return Err(invalid!("no PGM images in {}", clean_dir.display()));
    }
    let images = files.iter().map(load_pgm).collect::<Result<Vec<_>>>()?;
    let first = &images[0];
    if let Some(bad) = images.iter().position(|im| !im.same_dims(first)) {
        return Err(shape_err!(
            "{} differs in size from {}",
            files[bad].display(),
            files[0].display()
        ));
    }
    Ok(images)
}

/// Renders `n_masks` masks (mask `k` seeded with `seed + k`), blends each with
/// every clean image and writes the tree:
///
/// ```text
/// out_dir/manifest.json
/// out_dir/clean/c000.pgm
/// out_dir/masks/m000.pgm
/// out_dir/inputs/m000_c000.pgm
/// ```
pub fn build_dataset(
    clean_dir: impl AsRef<Path>,
    n_masks: usize,
    params: &MaskParams,
    alpha: f64,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    build_dataset_inner(clean_dir.as_ref(), n_masks, params, alpha, out_dir.as_ref(), None)
}

fn build_dataset_inner(
    clean_dir: &Path,
    n_masks: usize,
    params: &MaskParams,
    alpha: f64,
    out_dir: &Path,
    variant: Option<TestVariant>,
) -> Result<DatasetManifest> {
    params.validate()?;
    if n_masks == 0 {
        return Err(invalid!("n_masks must be at least 1"));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(invalid!("alpha {alpha} outside [0, 1]"));
    }
    let clean = load_clean_set(clean_dir)?;
    let (h, w) = (clean[0].height(), clean[0].width());

    let masks = par::map_range(n_masks, |k| {
        let mut g = Prng::new(params.seed.wrapping_add(k as u64));
        sample_rings(params, &mut g).map(|rings| render_mask(&rings, h, w))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    for sub in ["clean", "masks", "inputs"] {
        create_dir(out_dir.join(sub))?;
    }
    for (i, img) in clean.iter().enumerate() {
        save_pgm(img, out_dir.join(format!("clean/c{i:03}.pgm")))?;
    }
    for (k, mask) in masks.iter().enumerate() {
        save_pgm(mask, out_dir.join(format!("masks/m{k:03}.pgm")))?;
    }

    let jobs: Vec<(usize, usize)> = (0..n_masks)
        .flat_map(|k| (0..clean.len()).map(move |i| (k, i)))
        .collect();
    let blended = par::map_slice(&jobs, |&(k, i)| superimpose(&clean[i], &masks[k], alpha));
    let mut pairs = Vec::with_capacity(jobs.len());
    for (&(k, i), img) in jobs.iter().zip(blended) {
        let input = format!("inputs/m{k:03}_c{i:03}.pgm");
        save_pgm(&img?, out_dir.join(&input))?;
        pairs.push(PairEntry {
            input,
            target: format!("clean/c{i:03}.pgm"),
            mask_id: k,
            clean_id: i,
        });
    }

    let manifest = DatasetManifest {
        seed: params.seed,
        alpha,
        n_masks,
        variant,
        params: params.clone(),
        pairs,
        root: out_dir.to_path_buf(),
    };
    write_json(&manifest, out_dir.join(DatasetManifest::FILE_NAME))?;
    Ok(manifest)
}

/// Which ring features vary in a test dataset; all others are pinned to the
/// midpoint of their range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestVariant {
    Radius,
    RadiusThickness,
    RadiusCount,
}

impl TestVariant {
    pub const ALL: [TestVariant; 3] = [
        TestVariant::Radius,
        TestVariant::RadiusThickness,
        TestVariant::RadiusCount,
    ];

    pub fn label(self) -> &'static str {
        match self {
            TestVariant::Radius => "radius",
            TestVariant::RadiusThickness => "radius+thickness",
            TestVariant::RadiusCount => "radius+count",
        }
    }

    pub fn dir_name(self) -> &'static str {
        match self {
            TestVariant::Radius => "radius",
            TestVariant::RadiusThickness => "radius_thickness",
            TestVariant::RadiusCount => "radius_count",
        }
    }

    /// Collapses every range this variant does not vary to its midpoint.
    pub fn pin(self, params: &MaskParams) -> MaskParams {
        let mut p = params.clone();
        let count_mid = (params.num_rings[0] + params.num_rings[1]) / 2;
        if self != TestVariant::RadiusCount {
            p.num_rings = [count_mid, count_mid];
        }
        if self != TestVariant::RadiusThickness {
            p.thickness = Interval::point(params.thickness.mid());
        }
        p.color = Interval::point(params.color.mid());
        p.bright_color = None;
        p.theta_start = Interval::point(params.theta_start.mid() % 360.0);
        p.theta_span = Interval::point(params.theta_span.mid());
        p
    }
}

impl std::str::FromStr for TestVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TestVariant::ALL
            .into_iter()
            .find(|v| v.label() == s || v.dir_name() == s)
            .ok_or_else(|| invalid!("unknown test variant {s:?}"))
    }
}

pub fn build_test_variant(
    clean_dir: impl AsRef<Path>,
    variant: TestVariant,
    n_masks: usize,
    params: &MaskParams,
    alpha: f64,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    build_dataset_inner(
        clean_dir.as_ref(),
        n_masks,
        &variant.pin(params),
        alpha,
        out_dir.as_ref(),
        Some(variant),
    )
}

/// Writes `count` phantom slices as `clean_dir/p000.pgm, ...`.
pub fn write_phantoms(dir: impl AsRef<Path>, count: usize, height: usize, width: usize, seed: u64) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    create_dir(dir)?;
    let images = par::map_range(count, |i| {
        phantom(height, width, &mut Prng::new(seed.wrapping_add(i as u64)))
    });
    let mut paths = Vec::with_capacity(count);
    for (i, img) in images.iter().enumerate() {
        let path = dir.join(format!("p{i:03}.pgm"));
        save_pgm(img, &path)?;
        paths.push(path);
    }
    Ok(paths)
}
