//! Procedural echo-like videos with analytic ejection-fraction labels.
//!
//! A bright elliptical "ventricle" pulses inside a fan-shaped imaging cone.
//! Its area follows a periodic waveform between end-diastole (ED) and
//! end-systole (ES), with `EF = 100 (A_ED - A_ES) / A_ED`. Each identity
//! carries a frozen multiplicative speckle texture plus its own geometry.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use echosyn_nn::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, CoreError, Result};
use crate::hash::short_hash;
use crate::{par, rng, video};

const SUPERSAMPLE: usize = 4;
const CENTER: (f64, f64) = (19.0, 16.0);
const VENTRICLE: f64 = 0.85;
const TISSUE: f64 = 0.35;
const SPECKLE_GRID: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EchoToyConfig {
    pub height: usize,
    pub width: usize,
    pub frames_min: usize,
    pub frames_max: usize,
    pub fps: f64,
    pub ef_min: f64,
    pub ef_max: f64,
    pub period_min: usize,
    pub period_max: usize,
    /// Standard deviation scale of the multiplicative identity texture.
    pub speckle_contrast: f64,
    /// Standard deviation of the per-frame additive noise.
    pub noise_std: f64,
    pub cone_half_angle_deg: f64,
    pub cone_radius: f64,
    pub seed: u64,
}

impl Default for EchoToyConfig {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            frames_min: 16,
            frames_max: 32,
            fps: 32.0,
            ef_min: 10.0,
            ef_max: 80.0,
            period_min: 8,
            period_max: 14,
            speckle_contrast: 0.15,
            noise_std: 0.05,
            cone_half_angle_deg: 40.0,
            cone_radius: 32.0,
            seed: 0,
        }
    }
}

impl EchoToyConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(
            self.height >= 8 && self.width >= 8 && self.height.is_multiple_of(8) && self.width.is_multiple_of(8),
            || format!("resolution {}x{} must be a positive multiple of 8", self.height, self.width),
        )?;
        ensure(0.0 <= self.ef_min && self.ef_min <= self.ef_max && self.ef_max < 100.0, || {
            format!("EF range [{}, {}] must lie in [0, 100)", self.ef_min, self.ef_max)
        })?;
        ensure(self.period_min >= 4 && self.period_min <= self.period_max, || {
            format!("period range [{}, {}] must start at 4 frames or more", self.period_min, self.period_max)
        })?;
        ensure(self.frames_min >= 1 && self.frames_min <= self.frames_max, || {
            format!("frame range [{}, {}] is empty", self.frames_min, self.frames_max)
        })?;
        ensure(self.speckle_contrast >= 0.0 && self.noise_std >= 0.0 && self.fps > 0.0, || {
            "speckle contrast, noise and frame rate must be nonnegative".into()
        })?;
        ensure(
            self.cone_half_angle_deg > 0.0 && self.cone_half_angle_deg < 90.0 && self.cone_radius > 0.0,
            || "cone geometry out of range".into(),
        )
    }

    /// Stable key=value rendering used for hashing and reports.
    pub fn canonical(&self) -> String {
        format!(
            "height={}\nwidth={}\nframes_min={}\nframes_max={}\nfps={}\nef_min={}\nef_max={}\nperiod_min={}\nperiod_max={}\nspeckle_contrast={}\nnoise_std={}\ncone_half_angle_deg={}\ncone_radius={}\nseed={}\n",
            self.height,
            self.width,
            self.frames_min,
            self.frames_max,
            self.fps,
            self.ef_min,
            self.ef_max,
            self.period_min,
            self.period_max,
            self.speckle_contrast,
            self.noise_std,
            self.cone_half_angle_deg,
            self.cone_radius,
            self.seed
        )
    }

    pub fn hash(&self) -> String {
        short_hash(self.canonical().as_bytes())
    }

    /// Geometry scale relative to the 32x32 reference frame.
    fn scale(&self) -> (f64, f64) {
        (self.height as f64 / 32.0, self.width as f64 / 32.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum View {
    A4c,
    Psax,
}

impl View {
    pub fn as_str(self) -> &'static str {
        match self {
            View::A4c => "a4c",
            View::Psax => "psax",
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for View {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a4c" => Ok(View::A4c),
            "psax" => Ok(View::Psax),
            _ => Err(CoreError::InvalidArgument(format!("unknown view `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(CoreError::InvalidArgument(format!("unknown split `{s}`"))),
        }
    }
}

/// Identity-level appearance, fixed across all frames of a video.
#[derive(Clone, Debug, PartialEq)]
pub struct Identity {
    pub seed: u64,
    pub view: View,
    /// End-diastolic semi-axes (vertical, horizontal) in pixels.
    pub radii: (f64, f64),
    pub center: (f64, f64),
    pub tilt: f64,
    pub texture: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EchoSample {
    pub id: String,
    pub identity: u64,
    pub video: Tensor<f32>,
    pub ef: f64,
    pub period: usize,
    pub split: Split,
    pub view: View,
}

pub fn cone_mask(cfg: &EchoToyConfig) -> Vec<bool> {
    let (sy, sx) = cfg.scale();
    let apex_x = (cfg.width as f64 - 1.0) / 2.0;
    let tan = cfg.cone_half_angle_deg.to_radians().tan();
    let radius = cfg.cone_radius * sy.max(sx);
    let mut mask = Vec::with_capacity(cfg.height * cfg.width);
    for y in 0..cfg.height {
        for x in 0..cfg.width {
            let (dy, dx) = (y as f64 + 0.5, x as f64 - apex_x);
            mask.push(dx.abs() <= dy * tan && (dy * dy + dx * dx).sqrt() <= radius);
        }
    }
    mask
}

fn inside_cone(cfg: &EchoToyConfig, y: f64, x: f64) -> bool {
    let (sy, sx) = cfg.scale();
    let apex_x = (cfg.width as f64 - 1.0) / 2.0;
    let tan = cfg.cone_half_angle_deg.to_radians().tan();
    let (dy, dx) = (y + 0.5, x - apex_x);
    dy > 0.0 && dx.abs() <= dy * tan && (dy * dy + dx * dx).sqrt() <= cfg.cone_radius * sy.max(sx)
}

pub fn make_identity(cfg: &EchoToyConfig, seed: u64) -> Identity {
    let (sy, sx) = cfg.scale();
    let mut r = rng::stream(seed, rng::domain::DATASET, u64::MAX);
    let view = if r.random::<bool>() { View::A4c } else { View::Psax };
    let radii = match view {
        View::A4c => (r.random_range(8.0..9.5) * sy, r.random_range(5.5..6.5) * sx),
        View::Psax => {
            let rad = r.random_range(6.5..7.5);
            (rad * sy, rad * r.random_range(0.95..1.05) * sx)
        }
    };
    let center = ((CENTER.0 + r.random_range(-1.0..1.0)) * sy, (CENTER.1 + r.random_range(-1.0..1.0)) * sx - 0.5);
    let tilt = r.random_range(-0.2..0.2);
    let (h, w) = (cfg.height, cfg.width);
    let (gh, gw) = (h / SPECKLE_GRID + 2, w / SPECKLE_GRID + 2);
    let coarse: Vec<f64> = (0..gh * gw).map(|_| rng::standard_normal(&mut r)).collect();
    let mut texture = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let fy = y as f64 / SPECKLE_GRID as f64;
            let fx = x as f64 / SPECKLE_GRID as f64;
            let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
            let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
            let g = |yy: usize, xx: usize| coarse[yy * gw + xx];
            let c = g(y0, x0) * (1.0 - ty) * (1.0 - tx) + g(y0, x0 + 1) * (1.0 - ty) * tx + g(y0 + 1, x0) * ty * (1.0 - tx) + g(y0 + 1, x0 + 1) * ty * tx;
            let fine = rng::standard_normal(&mut r);
            let m = 1.0 + cfg.speckle_contrast * (0.8 * c + 0.6 * fine);
            texture.push(m.clamp(0.2, 2.0) as f32);
        }
    }
    Identity {
        seed,
        view,
        radii,
        center,
        tilt,
        texture,
    }
}

/// Area scale factor (relative to end-diastole) at frame `f`.
pub fn area_fraction(f: usize, period: usize, ef: f64) -> f64 {
    let es = 1.0 - ef / 100.0;
    let systole = period / 2;
    let p = f % period;
    let w = if p <= systole {
        (1.0 + (std::f64::consts::PI * p as f64 / systole as f64).cos()) / 2.0
    } else {
        let q = (p - systole) as f64 / (period - systole) as f64;
        (1.0 - (std::f64::consts::PI * q).cos()) / 2.0
    };
    es + (1.0 - es) * w
}

fn check_geometry(cfg: &EchoToyConfig, id: &Identity) -> Result<()> {
    let (ry, rx) = id.radii;
    for i in 0..64 {
        let phi = i as f64 * std::f64::consts::TAU / 64.0;
        let (ey, ex) = (ry * phi.cos(), rx * phi.sin());
        let y = id.center.0 + ey * id.tilt.cos() - ex * id.tilt.sin();
        let x = id.center.1 + ey * id.tilt.sin() + ex * id.tilt.cos();
        if !inside_cone(cfg, y, x) {
            return Err(CoreError::InvalidArgument(format!(
                "ventricle of identity {} leaves the imaging cone near ({y:.1}, {x:.1})",
                id.seed
            )));
        }
    }
    Ok(())
}

/// Fraction of pixel (y, x) covered by the ventricle at the given area scale.
fn coverage(id: &Identity, y: usize, x: usize, area_scale: f64) -> f64 {
    let s = area_scale.sqrt();
    let (ry, rx) = (id.radii.0 * s, id.radii.1 * s);
    if ry <= 0.0 || rx <= 0.0 {
        return 0.0;
    }
    let (cs, sn) = (id.tilt.cos(), id.tilt.sin());
    let mut hit = 0usize;
    for sy in 0..SUPERSAMPLE {
        for sx in 0..SUPERSAMPLE {
            let py = y as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64 - 0.5 - id.center.0;
            let px = x as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64 - 0.5 - id.center.1;
            let u = py * cs + px * sn;
            let v = -py * sn + px * cs;
            if (u / ry).powi(2) + (v / rx).powi(2) <= 1.0 {
                hit += 1;
            }
        }
    }
    hit as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64
}

/// Render one video. The identity fixes view, geometry and texture; `ef`
/// and `period` fix the motion; frame 0 is end-diastole.
pub fn generate_sample(cfg: &EchoToyConfig, identity_seed: u64, ef: f64, period: usize, frames: usize) -> Result<EchoSample> {
    cfg.validate()?;
    ensure(ef >= cfg.ef_min && ef <= cfg.ef_max, || {
        format!("EF {ef} outside the configured range [{}, {}]", cfg.ef_min, cfg.ef_max)
    })?;
    ensure(period >= cfg.period_min && period <= cfg.period_max, || {
        format!("period {period} outside [{}, {}]", cfg.period_min, cfg.period_max)
    })?;
    ensure(frames >= 1, || "a video needs at least one frame".into())?;
    let id = make_identity(cfg, identity_seed);
    check_geometry(cfg, &id)?;
    let mask = cone_mask(cfg);
    let (h, w) = (cfg.height, cfg.width);
    let rendered = par::map_range(frames, |f| {
        let scale = area_fraction(f, period, ef);
        let motion_key = identity_seed ^ ef.to_bits().rotate_left(17) ^ (period as u64).rotate_left(50);
        let mut r = rng::stream(motion_key, rng::domain::DATASET, f as u64);
        let mut out = vec![0f32; h * w];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let noise = cfg.noise_std * rng::standard_normal(&mut r);
                if !mask[i] {
                    continue;
                }
                let cov = coverage(&id, y, x, scale);
                let base = TISSUE + (VENTRICLE - TISSUE) * cov;
                out[i] = (base * id.texture[i] as f64 + noise).clamp(0.0, 1.0) as f32;
            }
        }
        out
    });
    let data = rendered.concat();
    Ok(EchoSample {
        id: format!("id{identity_seed:016x}"),
        identity: identity_seed,
        video: Tensor::from_vec(&[frames, 1, h, w], data)?,
        ef,
        period,
        split: Split::Train,
        view: id.view,
    })
}

/// Noise-free ventricle area in pixels at frame `f`, from the same
/// supersampled coverage the renderer uses.
pub fn ventricle_area(cfg: &EchoToyConfig, identity_seed: u64, ef: f64, period: usize, f: usize) -> f64 {
    let id = make_identity(cfg, identity_seed);
    let scale = area_fraction(f, period, ef);
    let mut a = 0.0;
    for y in 0..cfg.height {
        for x in 0..cfg.width {
            a += coverage(&id, y, x, scale);
        }
    }
    a
}

/// Guess the view tag of a (1, H, W) or (H, W) frame from the aspect ratio
/// of its bright region: elongated ventricles are apical, round ones
/// short-axis. Used to tag videos that have no generating identity.
pub fn estimate_view(frame: &Tensor<f32>, cfg: &EchoToyConfig) -> Result<View> {
    let (h, w) = (cfg.height, cfg.width);
    ensure(frame.numel() == h * w, || format!("expected a {h}x{w} frame, got {:?}", frame.shape()))?;
    let mask = cone_mask(cfg);
    let blurred = crate::downstream::box_blur(frame.data(), h, w, 1);
    let inside: Vec<f32> = blurred.iter().zip(&mask).filter(|(_, m)| **m).map(|(v, _)| *v).collect();
    let th = crate::downstream::otsu_threshold(&inside);
    let pts: Vec<(f64, f64)> = (0..h * w)
        .filter(|&i| mask[i] && blurred[i] as f64 > th)
        .map(|i| ((i / w) as f64, (i % w) as f64))
        .collect();
    if pts.len() < 3 {
        return Ok(View::Psax);
    }
    let n = pts.len() as f64;
    let (my, mx) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let (mut syy, mut sxx, mut sxy) = (0.0, 0.0, 0.0);
    for (y, x) in &pts {
        syy += (y - my).powi(2);
        sxx += (x - mx).powi(2);
        sxy += (y - my) * (x - mx);
    }
    let (a, b, c) = (syy / n, sxx / n, sxy / n);
    let disc = ((a - b).powi(2) / 4.0 + c * c).sqrt();
    let (l1, l2) = ((a + b) / 2.0 + disc, ((a + b) / 2.0 - disc).max(1e-9));
    Ok(if (l1 / l2).sqrt() > VIEW_ASPECT { View::A4c } else { View::Psax })
}

/// Semi-axis ratio separating the two view tags.
const VIEW_ASPECT: f64 = 1.2;

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRecord {
    pub id: String,
    pub path: PathBuf,
    pub ef: f64,
    pub split: Split,
    pub num_frames: usize,
    pub view: View,
}

/// A named list of labeled videos on disk. Paths are relative to `root`.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub name: String,
    pub config_hash: String,
    pub seed: u64,
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

pub const MANIFEST_COLUMNS: &str = "id,path,ef,split,num_frames,view";

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn resolve(&self, rec: &ManifestRecord) -> PathBuf {
        self.root.join(&rec.path)
    }

    pub fn load_video(&self, rec: &ManifestRecord) -> Result<Tensor<f32>> {
        let v = video::load(&self.resolve(rec))?;
        if v.shape()[0] != rec.num_frames {
            return Err(CoreError::format(
                self.resolve(rec),
                format!("manifest says {} frames, file has {}", rec.num_frames, v.shape()[0]),
            ));
        }
        Ok(v)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "# name={}\n# config_hash={}\n# seed={}\n{MANIFEST_COLUMNS}\n",
            self.name, self.config_hash, self.seed
        );
        for r in &self.records {
            s.push_str(&format!("{},{},{},{},{},{}\n", r.id, r.path.display(), r.ef, r.split, r.num_frames, r.view));
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
        f.write_all(self.to_text().as_bytes()).map_err(|e| CoreError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| CoreError::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let bad = |line: usize, d: String| CoreError::format(path, format!("line {line}: {d}"));
        let (mut name, mut config_hash, mut seed) = (None, None, None);
        let mut records = Vec::new();
        let mut saw_columns = false;
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| CoreError::io(path, e))?;
            let n = i + 1;
            if let Some(kv) = line.strip_prefix('#') {
                let (k, v) = kv.trim().split_once('=').ok_or_else(|| bad(n, "header needs key=value".into()))?;
                match k {
                    "name" => name = Some(v.to_string()),
                    "config_hash" => config_hash = Some(v.to_string()),
                    "seed" => seed = Some(v.parse::<u64>().map_err(|e| bad(n, e.to_string()))?),
                    _ => {}
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            if !saw_columns {
                if line != MANIFEST_COLUMNS {
                    return Err(bad(n, format!("expected column line `{MANIFEST_COLUMNS}`")));
                }
                saw_columns = true;
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad(n, format!("expected 6 fields, found {}", f.len())));
            }
            let ef: f64 = f[2].parse().map_err(|_| bad(n, format!("bad ef `{}`", f[2])))?;
            if !ef.is_finite() {
                return Err(bad(n, "ef must be finite".into()));
            }
            records.push(ManifestRecord {
                id: f[0].to_string(),
                path: PathBuf::from(f[1]),
                ef,
                split: f[3].parse().map_err(|e: CoreError| bad(n, e.to_string()))?,
                num_frames: f[4].parse().map_err(|_| bad(n, format!("bad frame count `{}`", f[4])))?,
                view: f[5].parse().map_err(|e: CoreError| bad(n, e.to_string()))?,
            });
        }
        let missing = |what: &str| CoreError::format(path, format!("missing `{what}` header"));
        let m = Self {
            name: name.ok_or_else(|| missing("name"))?,
            config_hash: config_hash.ok_or_else(|| missing("config_hash"))?,
            seed: seed.ok_or_else(|| missing("seed"))?,
            root,
            records,
        };
        m.check_unique_ids().map_err(|d| CoreError::format(path, d))?;
        Ok(m)
    }

    fn check_unique_ids(&self) -> std::result::Result<(), String> {
        let mut ids: Vec<&str> = self.records.iter().map(|r| r.id.as_str()).collect();
        ids.sort_unstable();
        match ids.windows(2).find(|w| w[0] == w[1]) {
            Some(w) => Err(format!("duplicate id `{}`", w[0])),
            None => Ok(()),
        }
    }
}

/// Split sizes for `n` items, assigned in index order by rounding the
/// cumulative fractions.
pub fn split_counts(n: usize, fractions: [f64; 3]) -> Result<[usize; 3]> {
    ensure(
        fractions.iter().all(|f| *f >= 0.0) && (fractions.iter().sum::<f64>() - 1.0).abs() < 1e-9,
        || format!("split fractions {fractions:?} must be nonnegative and sum to 1"),
    )?;
    let a = (n as f64 * fractions[0]).round() as usize;
    let b = ((n as f64 * (fractions[0] + fractions[1])).round() as usize).max(a).min(n);
    Ok([a, b - a, n - b])
}

/// Per-video draws for dataset index `i`: (identity seed, ef, period, frames).
pub fn draw_params(cfg: &EchoToyConfig, i: usize) -> (u64, f64, usize, usize) {
    let mut r = rng::stream(cfg.seed, rng::domain::DATASET, i as u64);
    let identity = r.random::<u64>();
    let ef = if cfg.ef_max > cfg.ef_min {
        r.random_range(cfg.ef_min..cfg.ef_max)
    } else {
        cfg.ef_min
    };
    let period = r.random_range(cfg.period_min..=cfg.period_max);
    let frames = r.random_range(cfg.frames_min..=cfg.frames_max);
    (identity, ef, period, frames)
}

/// Generate `n` videos in memory, with splits assigned in index order.
pub fn generate_samples(cfg: &EchoToyConfig, n: usize, fractions: [f64; 3]) -> Result<Vec<EchoSample>> {
    cfg.validate()?;
    let counts = split_counts(n, fractions)?;
    par::try_map_range(n, |i| {
        let (identity, ef, period, frames) = draw_params(cfg, i);
        let mut s = generate_sample(cfg, identity, ef, period, frames)?;
        s.id = format!("real-{i:05}");
        s.split = if i < counts[0] {
            Split::Train
        } else if i < counts[0] + counts[1] {
            Split::Val
        } else {
            Split::Test
        };
        Ok(s)
    })
}

/// Write samples as EVT1 files under `dir/videos` plus `dir/manifest.csv`.
pub fn write_dataset(dir: &Path, name: &str, config_hash: &str, seed: u64, samples: &[EchoSample]) -> Result<DatasetManifest> {
    let vdir = dir.join("videos");
    fs::create_dir_all(&vdir).map_err(|e| CoreError::io(&vdir, e))?;
    let mut records = Vec::with_capacity(samples.len());
    for s in samples {
        let rel = PathBuf::from("videos").join(format!("{}.evt", s.id));
        video::save(&dir.join(&rel), &s.video)?;
        records.push(ManifestRecord {
            id: s.id.clone(),
            path: rel,
            ef: s.ef,
            split: s.split,
            num_frames: s.video.shape()[0],
            view: s.view,
        });
    }
    let m = DatasetManifest {
        name: name.to_string(),
        config_hash: config_hash.to_string(),
        seed,
        root: dir.to_path_buf(),
        records,
    };
    m.check_unique_ids().map_err(|d| CoreError::format(dir, d))?;
    m.save(&dir.join("manifest.csv"))?;
    Ok(m)
}

pub fn generate_dataset(cfg: &EchoToyConfig, n: usize, fractions: [f64; 3], dir: &Path) -> Result<DatasetManifest> {
    ensure(n >= 10, || format!("a dataset needs at least 10 videos, got {n}"))?;
    let samples = generate_samples(cfg, n, fractions)?;
    write_dataset(dir, "echotoy", &cfg.hash(), cfg.seed, &samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ef_arithmetic() {
        let (ed, es) = (400.0, 300.0);
        assert_eq!(100.0 * (ed - es) / ed, 25.0);
        assert_eq!(area_fraction(0, 10, 25.0), 1.0);
        assert!((area_fraction(5, 10, 25.0) - 0.75).abs() < 1e-12);
        assert!((area_fraction(10, 10, 25.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn range_checks() {
        let cfg = EchoToyConfig::default();
        assert!(generate_sample(&cfg, 1, 0.0, 10, 4).is_err());
        assert!(generate_sample(&cfg, 1, 50.0, 3, 4).is_err());
        assert!(generate_sample(&cfg, 1, 50.0, 10, 0).is_err());
    }

    #[test]
    fn zero_ef_is_static() {
        let cfg = EchoToyConfig {
            ef_min: 0.0,
            noise_std: 0.0,
            ..Default::default()
        };
        let s = generate_sample(&cfg, 3, 0.0, 8, 12).unwrap();
        let first = s.video.row(0).to_vec();
        for f in 1..12 {
            assert_eq!(s.video.row(f), &first[..]);
        }
    }

    #[test]
    fn oversized_ventricle_is_rejected() {
        let cfg = EchoToyConfig {
            cone_half_angle_deg: 10.0,
            ..Default::default()
        };
        assert!(generate_sample(&cfg, 3, 50.0, 8, 4).is_err());
    }

    #[test]
    fn split_sizes() {
        assert_eq!(split_counts(100, [0.8, 0.1, 0.1]).unwrap(), [80, 10, 10]);
        assert_eq!(split_counts(500, [0.8, 0.1, 0.1]).unwrap(), [400, 50, 50]);
        assert!(split_counts(10, [0.5, 0.1, 0.1]).is_err());
    }

    #[test]
    fn manifest_text_round_trip() {
        let m = DatasetManifest {
            name: "x".into(),
            config_hash: "abc".into(),
            seed: 9,
            root: PathBuf::new(),
            records: vec![ManifestRecord {
                id: "a".into(),
                path: "videos/a.evt".into(),
                ef: 33.3,
                split: Split::Val,
                num_frames: 24,
                view: View::Psax,
            }],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        m.save(&p).unwrap();
        let back = DatasetManifest::load(&p).unwrap();
        assert_eq!(back.records, m.records);
        assert_eq!(back.seed, 9);
    }
}
