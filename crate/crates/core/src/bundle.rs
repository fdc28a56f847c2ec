//! On-disk bundle: a `manifest.json` plus one binary file per grid per view.
//!
//! Every grid file starts with a 12-byte header:
//!
//! | bytes | content                                      |
//! |-------|----------------------------------------------|
//! | 0..4  | magic `4DKG`                                 |
//! | 4..8  | `0x01020304` as little-endian u32 (bytes `04 03 02 01`) |
//! | 8     | element type: 1 = f32, 2 = u8                |
//! | 9     | channels                                     |
//! | 10..12| zero                                         |
//!
//! followed by `H × W × C` little-endian elements, row-major, channels
//! interleaved. Float grids store NaN at invalid pixels; the companion `u8`
//! mask (0/1) is authoritative. Shapes come from the manifest only.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Intrinsics, MetricScale, Pose, RayDepthMap, RayMap, SceneFlowField, Vec2, Vec3};
use crate::grid::Grid;
use crate::motion::{DopplerMap, OpticalFlowField};
use crate::sequence::{MotionRepr, SceneSequence, SequenceKind, ViewBundle};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_NAME: &str = "fourdkit-bundle";
pub const FORMAT_VERSION: u32 = 1;
pub const CONVENTION: &str = "xr-yd-zf, world=view0, ray-depth";
pub const MAGIC: [u8; 4] = *b"4DKG";
pub const ENDIAN_PROBE: u32 = 0x0102_0304;
pub const HEADER_LEN: usize = 12;
/// Allowed deviation of a stored ray from unit length.
pub const RAY_NORM_TOL: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 1,
    U8 = 2,
}

impl DType {
    fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::U8 => 1,
        }
    }
}

/// File names of one view's grids, relative to the bundle directory. Optional
/// grids are absent when the view does not carry them.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ViewFiles {
    pub rays: String,
    pub ray_depth: String,
    pub valid: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_flow: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_flow_valid: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doppler: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doppler_valid: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motion_mask: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optical_flow: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optical_flow_valid: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewEntry {
    /// `[qw, qx, qy, qz, tx, ty, tz]`, camera to world, translation scale-normalized.
    pub pose: [f64; 7],
    pub intrinsics: Intrinsics,
    pub files: ViewFiles,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub convention: String,
    pub kind: SequenceKind,
    pub motion_repr: MotionRepr,
    pub num_views: usize,
    pub height: usize,
    pub width: usize,
    /// Meters per stored length unit.
    pub scale: f64,
    pub views: Vec<ViewEntry>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingFile(path.clone())
            } else {
                Error::io(&path, e)
            }
        })?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        m.check()?;
        Ok(m)
    }

    fn check(&self) -> Result<()> {
        if self.format != FORMAT_NAME {
            return Err(Error::Manifest(format!("unknown format `{}`", self.format)));
        }
        if self.version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: self.version,
                expected: FORMAT_VERSION,
            });
        }
        if self.views.len() != self.num_views || self.num_views == 0 {
            return Err(Error::Manifest(format!(
                "num_views is {} but {} view entries are listed",
                self.num_views,
                self.views.len()
            )));
        }
        let first = Pose::from_array(self.views[0].pose)?;
        let deviation = first.deviation_from_identity();
        if deviation > 1e-9 {
            return Err(Error::NonIdentityFirstPose { deviation });
        }
        MetricScale::new(self.scale)?;
        for v in &self.views {
            v.intrinsics.validate()?;
            if (v.intrinsics.width, v.intrinsics.height) != (self.width, self.height) {
                return Err(Error::ShapeMismatch {
                    expected: (self.width, self.height),
                    found: (v.intrinsics.width, v.intrinsics.height),
                });
            }
        }
        Ok(())
    }
}

fn header(dtype: DType, channels: u8) -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    h[..4].copy_from_slice(&MAGIC);
    h[4..8].copy_from_slice(&ENDIAN_PROBE.to_le_bytes());
    h[8] = dtype as u8;
    h[9] = channels;
    h
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_f32(path: &Path, channels: u8, values: impl Iterator<Item = f64>) -> Result<()> {
    let mut buf = header(DType::F32, channels).to_vec();
    for v in values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    write_file(path, &buf)
}

fn write_mask(path: &Path, mask: &Grid<bool>) -> Result<()> {
    let mut buf = header(DType::U8, 1).to_vec();
    buf.extend(mask.iter().map(|&b| b as u8));
    write_file(path, &buf)
}

fn vec3_values(g: &Grid<Vec3>) -> impl Iterator<Item = f64> + '_ {
    g.iter().flat_map(|v| [v.x, v.y, v.z])
}

/// Writes `seq` into `dir` (created if needed) and returns the manifest.
pub fn write_bundle(seq: &SceneSequence, dir: &Path) -> Result<Manifest> {
    seq.check()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (w, h) = seq.shape();
    let mut entries = Vec::with_capacity(seq.len());
    for (i, view) in seq.views.iter().enumerate() {
        let name = |grid: &str, ext: &str| format!("view{i:03}_{grid}.{ext}");
        let mut files = ViewFiles {
            rays: name("rays", "f32"),
            ray_depth: name("ray_depth", "f32"),
            valid: name("valid", "u8"),
            ..ViewFiles::default()
        };
        write_f32(&dir.join(&files.rays), 3, vec3_values(&view.rays.dirs))?;
        write_f32(&dir.join(&files.ray_depth), 1, view.ray_depth.depth.iter().copied())?;
        write_mask(&dir.join(&files.valid), &view.ray_depth.valid)?;
        if let Some(f) = &view.scene_flow {
            let (a, b) = (name("scene_flow", "f32"), name("scene_flow_valid", "u8"));
            write_f32(&dir.join(&a), 3, vec3_values(&f.flow))?;
            write_mask(&dir.join(&b), &f.valid)?;
            files.scene_flow = Some(a);
            files.scene_flow_valid = Some(b);
        }
        if let Some(d) = &view.doppler {
            let (a, b) = (name("doppler", "f32"), name("doppler_valid", "u8"));
            write_f32(&dir.join(&a), 1, d.vr.iter().copied())?;
            write_mask(&dir.join(&b), &d.valid)?;
            files.doppler = Some(a);
            files.doppler_valid = Some(b);
        }
        if let Some(m) = &view.motion_mask {
            let a = name("motion_mask", "u8");
            write_mask(&dir.join(&a), m)?;
            files.motion_mask = Some(a);
        }
        if let Some(o) = &view.optical_flow {
            let (a, b) = (name("optical_flow", "f32"), name("optical_flow_valid", "u8"));
            write_f32(&dir.join(&a), 2, o.uv.iter().flat_map(|v| [v.x, v.y]))?;
            write_mask(&dir.join(&b), &o.valid)?;
            files.optical_flow = Some(a);
            files.optical_flow_valid = Some(b);
        }
        if let Some(c) = &view.confidence {
            let a = name("confidence", "f32");
            write_f32(&dir.join(&a), 1, c.iter().copied())?;
            files.confidence = Some(a);
        }
        entries.push(ViewEntry {
            pose: view.pose.to_array(),
            intrinsics: view.intrinsics,
            files,
        });
    }
    let manifest = Manifest {
        format: FORMAT_NAME.to_string(),
        version: FORMAT_VERSION,
        convention: CONVENTION.to_string(),
        kind: seq.kind,
        motion_repr: seq.motion_repr,
        num_views: seq.len(),
        height: h,
        width: w,
        scale: seq.scale.value(),
        views: entries,
    };
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Manifest(e.to_string()))?;
    text.push('\n');
    write_file(&dir.join(MANIFEST_FILE), text.as_bytes())?;
    Ok(manifest)
}

/// Grid contents exactly as stored, before any interpretation.
#[derive(Clone, Debug, PartialEq)]
pub enum RawGrid {
    F32 { channels: usize, data: Vec<f32> },
    U8(Vec<u8>),
}

/// A bundle read into memory without validation of grid contents.
#[derive(Clone, Debug, PartialEq)]
pub struct RawBundle {
    pub manifest: Manifest,
    /// Per view, grid name to contents.
    pub views: Vec<BTreeMap<&'static str, RawGrid>>,
}

fn read_grid(dir: &Path, file: &str, dtype: DType, channels: usize, pixels: usize) -> Result<RawGrid> {
    let path = dir.join(file);
    let bytes = fs::read(&path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.clone())
        } else {
            Error::io(&path, e)
        }
    })?;
    let expected = (HEADER_LEN + pixels * channels * dtype.size()) as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            path,
            expected,
            actual: bytes.len() as u64,
        });
    }
    let bad = |reason: String| Error::BadHeader {
        path: path.clone(),
        reason,
    };
    if bytes[..4] != MAGIC {
        return Err(bad(format!("magic {:02x?}", &bytes[..4])));
    }
    if bytes[4..8] != ENDIAN_PROBE.to_le_bytes() {
        return Err(bad("byte-order marker is not little-endian".into()));
    }
    if bytes[8] != dtype as u8 {
        return Err(bad(format!("element type {} where {} was expected", bytes[8], dtype as u8)));
    }
    if bytes[9] as usize != channels {
        return Err(bad(format!("{} channels where {channels} were expected", bytes[9])));
    }
    let body = &bytes[HEADER_LEN..];
    Ok(match dtype {
        DType::F32 => RawGrid::F32 {
            channels,
            data: body
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        },
        DType::U8 => RawGrid::U8(body.to_vec()),
    })
}

/// `(name, dtype, channels)` of every grid a view entry lists, in file order.
fn listed_grids(files: &ViewFiles) -> Vec<(&'static str, &str, DType, usize)> {
    let mut out = vec![
        ("rays", files.rays.as_str(), DType::F32, 3),
        ("ray_depth", files.ray_depth.as_str(), DType::F32, 1),
        ("valid", files.valid.as_str(), DType::U8, 1),
    ];
    let optional: [(&'static str, &Option<String>, DType, usize); 8] = [
        ("scene_flow", &files.scene_flow, DType::F32, 3),
        ("scene_flow_valid", &files.scene_flow_valid, DType::U8, 1),
        ("doppler", &files.doppler, DType::F32, 1),
        ("doppler_valid", &files.doppler_valid, DType::U8, 1),
        ("motion_mask", &files.motion_mask, DType::U8, 1),
        ("optical_flow", &files.optical_flow, DType::F32, 2),
        ("optical_flow_valid", &files.optical_flow_valid, DType::U8, 1),
        ("confidence", &files.confidence, DType::F32, 1),
    ];
    for (name, file, dtype, c) in optional {
        if let Some(f) = file {
            out.push((name, f.as_str(), dtype, c));
        }
    }
    out
}

pub fn read_bundle_raw(dir: &Path) -> Result<RawBundle> {
    let manifest = Manifest::load(dir)?;
    let pixels = manifest.width * manifest.height;
    let views = manifest
        .views
        .iter()
        .map(|entry| {
            listed_grids(&entry.files)
                .into_iter()
                .map(|(name, file, dtype, c)| Ok((name, read_grid(dir, file, dtype, c, pixels)?)))
                .collect::<Result<BTreeMap<_, _>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RawBundle { manifest, views })
}

struct ViewReader<'a> {
    grids: &'a BTreeMap<&'static str, RawGrid>,
    view: usize,
    w: usize,
    h: usize,
}

impl ViewReader<'_> {
    fn floats(&self, name: &'static str) -> Result<Option<(usize, &[f32])>> {
        match self.grids.get(name) {
            Some(RawGrid::F32 { channels, data }) => Ok(Some((*channels, data))),
            Some(RawGrid::U8(_)) => unreachable!("dtype checked on read"),
            None => Ok(None),
        }
    }

    fn mask(&self, name: &'static str) -> Result<Option<Grid<bool>>> {
        match self.grids.get(name) {
            Some(RawGrid::U8(data)) => Ok(Some(Grid::from_vec(self.w, self.h, data.iter().map(|&b| b != 0).collect())?)),
            Some(RawGrid::F32 { .. }) => unreachable!("dtype checked on read"),
            None => Ok(None),
        }
    }

    fn required_mask(&self, name: &'static str) -> Result<Grid<bool>> {
        self.mask(name)?.ok_or(Error::MissingGrid { view: self.view, grid: name })
    }

    fn vec3(&self, name: &'static str) -> Result<Option<Grid<Vec3>>> {
        self.floats(name)?
            .map(|(_, d)| {
                Grid::from_vec(
                    self.w,
                    self.h,
                    d.chunks_exact(3)
                        .map(|c| Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64))
                        .collect(),
                )
            })
            .transpose()
    }

    fn scalar(&self, name: &'static str) -> Result<Option<Grid<f64>>> {
        self.floats(name)?
            .map(|(_, d)| Grid::from_vec(self.w, self.h, d.iter().map(|&x| x as f64).collect()))
            .transpose()
    }
}

/// Reads a bundle into a [`SceneSequence`]; floats are widened to f64.
pub fn read_bundle(dir: &Path) -> Result<SceneSequence> {
    let raw = read_bundle_raw(dir)?;
    let m = &raw.manifest;
    let (w, h) = (m.width, m.height);
    let views = raw
        .views
        .iter()
        .zip(&m.views)
        .enumerate()
        .map(|(i, (grids, entry))| -> Result<ViewBundle> {
            let r = ViewReader { grids, view: i, w, h };
            let rays = RayMap {
                dirs: r.vec3("rays")?.ok_or(Error::MissingGrid { view: i, grid: "rays" })?,
            };
            let depth = RayDepthMap::new(
                r.scalar("ray_depth")?.ok_or(Error::MissingGrid {
                    view: i,
                    grid: "ray_depth",
                })?,
                r.required_mask("valid")?,
            )?;
            let mut view = ViewBundle::new(entry.intrinsics, Pose::from_array(entry.pose)?, rays, depth);
            if let Some(flow) = r.vec3("scene_flow")? {
                view.scene_flow = Some(SceneFlowField::new(flow, r.required_mask("scene_flow_valid")?)?);
            }
            if let Some(vr) = r.scalar("doppler")? {
                let valid = r.required_mask("doppler_valid")?;
                let vr = vr.zip_map(&valid, |x, ok| if *ok { *x } else { f64::NAN })?;
                view.doppler = Some(DopplerMap { vr, valid });
            }
            view.motion_mask = r.mask("motion_mask")?;
            if let Some((_, d)) = r.floats("optical_flow")? {
                let uv = Grid::from_vec(
                    w,
                    h,
                    d.chunks_exact(2).map(|c| Vec2::new(c[0] as f64, c[1] as f64)).collect(),
                )?;
                view.optical_flow = Some(OpticalFlowField::new(uv, r.required_mask("optical_flow_valid")?)?);
            }
            view.confidence = r.scalar("confidence")?;
            Ok(view)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SceneSequence::new(views, MetricScale::new(m.scale)?, m.kind)?.with_motion_repr(m.motion_repr))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    /// The bundle could not be read at all.
    Unreadable,
    /// A ray whose length differs from 1 by more than the tolerance.
    RayNorm,
    /// A valid pixel whose stored value is NaN or infinite.
    NonFinite,
    /// An invalid pixel whose stored value is not NaN.
    MaskNanMismatch,
    NonPositiveDepth,
    /// A mask byte other than 0 or 1.
    MaskByte,
    ConfidenceRange,
    /// A companion validity mask is listed without its data grid, or vice versa.
    MissingCompanion,
}

/// All violations of one kind in one grid of one view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub view: Option<usize>,
    pub grid: String,
    pub kind: DiagnosticKind,
    pub count: usize,
    /// First offending pixel `(u, v)` in row-major order.
    pub first: Option<(usize, usize)>,
    pub detail: String,
}

/// Checks a bundle against the storage invariants. The list is empty iff the
/// bundle is valid; violations are grouped per view, grid and kind.
pub fn validate_bundle(dir: &Path) -> Vec<Diagnostic> {
    let raw = match read_bundle_raw(dir) {
        Ok(r) => r,
        Err(e) => {
            return vec![Diagnostic {
                view: None,
                grid: MANIFEST_FILE.to_string(),
                kind: DiagnosticKind::Unreadable,
                count: 1,
                first: None,
                detail: e.to_string(),
            }]
        }
    };
    let w = raw.manifest.width;
    let mut out = Vec::new();
    for (i, grids) in raw.views.iter().enumerate() {
        let mut found: BTreeMap<(&'static str, DiagnosticKind), (usize, usize)> = BTreeMap::new();
        let mut flag = |grid: &'static str, kind, px: usize| {
            found.entry((grid, kind)).and_modify(|e| e.1 += 1).or_insert((px, 1));
        };
        let mask = |name: &str| match grids.get(name) {
            Some(RawGrid::U8(d)) => Some(d.as_slice()),
            _ => None,
        };
        let floats = |name: &str| match grids.get(name) {
            Some(RawGrid::F32 { channels, data }) => Some((*channels, data.as_slice())),
            _ => None,
        };

        for name in ["valid", "scene_flow_valid", "doppler_valid", "optical_flow_valid", "motion_mask"] {
            if let Some(m) = mask(name) {
                let name: &'static str = grid_name(name);
                for (px, &b) in m.iter().enumerate() {
                    if b > 1 {
                        flag(name, DiagnosticKind::MaskByte, px);
                    }
                }
            }
        }

        if let Some((_, rays)) = floats("rays") {
            let valid = mask("valid");
            for (px, r) in rays.chunks_exact(3).enumerate() {
                let r = [r[0] as f64, r[1] as f64, r[2] as f64];
                if r.iter().any(|c| !c.is_finite()) {
                    // rays of invalid pixels may be undefined
                    if valid.is_none_or(|m| m[px] != 0) {
                        flag("rays", DiagnosticKind::NonFinite, px);
                    }
                } else if ((r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt() - 1.0).abs() > RAY_NORM_TOL {
                    flag("rays", DiagnosticKind::RayNorm, px);
                }
            }
        }

        let pairs = [
            ("ray_depth", "valid"),
            ("scene_flow", "scene_flow_valid"),
            ("doppler", "doppler_valid"),
            ("optical_flow", "optical_flow_valid"),
        ];
        for (data_name, mask_name) in pairs {
            let data_name: &'static str = grid_name(data_name);
            match (floats(data_name), mask(mask_name)) {
                (Some((c, data)), Some(m)) => {
                    for (px, (vals, &b)) in data.chunks_exact(c).zip(m).enumerate() {
                        let valid = b != 0;
                        let finite = vals.iter().all(|x| x.is_finite());
                        let nan = vals.iter().all(|x| x.is_nan());
                        if valid && !finite {
                            flag(data_name, DiagnosticKind::NonFinite, px);
                        } else if !valid && !nan {
                            flag(data_name, DiagnosticKind::MaskNanMismatch, px);
                        } else if valid && data_name == "ray_depth" && !(vals[0] > 0.0) {
                            flag(data_name, DiagnosticKind::NonPositiveDepth, px);
                        }
                    }
                }
                (None, None) => {}
                _ => flag(data_name, DiagnosticKind::MissingCompanion, 0),
            }
        }

        if let Some((_, conf)) = floats("confidence") {
            for (px, &c) in conf.iter().enumerate() {
                if !(0.0..=1.0).contains(&c) {
                    flag("confidence", DiagnosticKind::ConfidenceRange, px);
                }
            }
        }

        for ((grid, kind), (px, count)) in found {
            out.push(Diagnostic {
                view: Some(i),
                grid: grid.to_string(),
                kind,
                count,
                first: (kind != DiagnosticKind::MissingCompanion).then_some((px % w, px / w)),
                detail: describe(kind),
            });
        }
    }
    out
}

fn grid_name(name: &str) -> &'static str {
    const NAMES: [&str; 11] = [
        "rays",
        "ray_depth",
        "valid",
        "scene_flow",
        "scene_flow_valid",
        "doppler",
        "doppler_valid",
        "motion_mask",
        "optical_flow",
        "optical_flow_valid",
        "confidence",
    ];
    NAMES.into_iter().find(|n| *n == name).expect("known grid name")
}

fn describe(kind: DiagnosticKind) -> String {
    match kind {
        DiagnosticKind::Unreadable => "bundle could not be read",
        DiagnosticKind::RayNorm => "ray direction is not unit length",
        DiagnosticKind::NonFinite => "valid pixel holds a non-finite value",
        DiagnosticKind::MaskNanMismatch => "invalid pixel does not hold NaN",
        DiagnosticKind::NonPositiveDepth => "valid pixel has nonpositive depth",
        DiagnosticKind::MaskByte => "mask byte is neither 0 nor 1",
        DiagnosticKind::ConfidenceRange => "confidence outside [0, 1]",
        DiagnosticKind::MissingCompanion => "data grid and validity mask must come together",
    }
    .to_string()
}

/// Path of the grid file `grid` of view `view`, as listed in the manifest.
pub fn grid_path(dir: &Path, manifest: &Manifest, view: usize, grid: &str) -> Option<PathBuf> {
    let files = &manifest.views.get(view)?.files;
    listed_grids(files)
        .into_iter()
        .find(|(name, ..)| *name == grid)
        .map(|(_, file, ..)| dir.join(file))
}
