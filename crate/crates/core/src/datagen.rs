//! Deterministic synthetic event scenes: a textured background under camera
//! motion plus independently moving objects, rendered in log brightness at
//! 1 kHz and converted to labelled events with a per-pixel DVS model.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{trigger_event, Event, EventStream, Label};
use crate::io::{save_events, write_pgm, EventFormat};
use crate::loss::GroundTruth;
use crate::metrics::SegMask;

/// Multi-octave value noise in log-brightness units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextureSpec {
    pub octaves: u32,
    /// Lattice spacing of the coarsest octave, in pixels.
    pub scale_px: f64,
    /// Peak amplitude of the noise.
    pub contrast: f64,
    /// Constant added to the noise.
    pub offset: f64,
    pub seed: u64,
}

impl Default for TextureSpec {
    fn default() -> Self {
        TextureSpec {
            octaves: 3,
            scale_px: 8.0,
            contrast: 1.0,
            offset: 0.0,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Disk,
    Rectangle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectSpec {
    pub shape: Shape,
    /// Diameter of a disk, width of a rectangle (pixels).
    pub size_px: f64,
    /// Height over width for rectangles.
    pub aspect: f64,
    /// Centre at t = 0 (pixels).
    pub start: [f64; 2],
    /// Pixels per second; the object bounces off the frame edges.
    pub velocity: [f64; 2],
    pub texture: TextureSpec,
}

impl Default for ObjectSpec {
    fn default() -> Self {
        ObjectSpec {
            shape: Shape::Disk,
            size_px: 16.0,
            aspect: 1.0,
            start: [20.0, 28.0],
            velocity: [70.0, 45.0],
            texture: TextureSpec {
                octaves: 2,
                scale_px: 4.0,
                contrast: 0.6,
                offset: 1.0,
                seed: 2,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub width: u16,
    pub height: u16,
    pub duration_ms: u64,
    /// Brightness rendering rate; at least 1 kHz and a whole number of frames per ms.
    pub frame_rate_hz: u64,
    pub window_ms: u64,
    pub background: TextureSpec,
    /// Pixels per second.
    pub camera_velocity: [f64; 2],
    pub objects: Vec<ObjectSpec>,
    pub trigger_threshold: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            width: 64,
            height: 64,
            duration_ms: 2000,
            frame_rate_hz: 1000,
            window_ms: 10,
            background: TextureSpec {
                contrast: 0.5,
                ..TextureSpec::default()
            },
            camera_velocity: [25.0, -15.0],
            objects: vec![ObjectSpec::default()],
            trigger_threshold: 0.15,
            seed: 7,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.width == 0 || self.height == 0 {
            return bad("scene dimensions must be positive".into());
        }
        if self.frame_rate_hz < 1000 || self.frame_rate_hz % 1000 != 0 {
            return bad(format!(
                "frame_rate_hz must be a positive multiple of 1000, got {}",
                self.frame_rate_hz
            ));
        }
        if self.window_ms == 0 || self.duration_ms == 0 || self.duration_ms % self.window_ms != 0 {
            return bad(format!(
                "duration_ms {} must be a positive multiple of window_ms {}",
                self.duration_ms, self.window_ms
            ));
        }
        if !(self.trigger_threshold > 0.0) || !self.trigger_threshold.is_finite() {
            return bad(format!("trigger_threshold must be > 0, got {}", self.trigger_threshold));
        }
        for v in self.camera_velocity {
            if !v.is_finite() {
                return bad("camera velocity must be finite".into());
            }
        }
        for tex in std::iter::once(&self.background).chain(self.objects.iter().map(|o| &o.texture)) {
            if tex.octaves == 0 || !(tex.scale_px > 0.0) || !tex.contrast.is_finite() || tex.contrast < 0.0 {
                return bad("texture needs octaves >= 1, scale_px > 0, contrast >= 0".into());
            }
            if !tex.offset.is_finite() {
                return bad("texture offset must be finite".into());
            }
        }
        let dim = f64::from(self.width.min(self.height));
        for (i, o) in self.objects.iter().enumerate() {
            let (hw, hh) = o.half_extent();
            if !(o.size_px > 0.0) || !(o.aspect > 0.0) || 2.0 * hw >= f64::from(self.width) || 2.0 * hh >= f64::from(self.height) {
                return bad(format!("object {i} of size {} does not fit a {dim} px frame", o.size_px));
            }
            if !o.velocity.iter().chain(&o.start).all(|v| v.is_finite()) {
                return bad(format!("object {i} has non-finite motion"));
            }
        }
        Ok(())
    }

    pub fn frames_per_ms(&self) -> u64 {
        self.frame_rate_hz / 1000
    }

    pub fn window_count(&self) -> usize {
        (self.duration_ms / self.window_ms) as usize
    }

    /// Whether the scene contains any brightness structure at all.
    pub fn has_contrast(&self) -> bool {
        self.background.contrast > 0.0
            || self
                .objects
                .iter()
                .any(|o| o.texture.contrast > 0.0 || o.texture.offset != self.background.offset)
    }

    /// A held-out variant: fresh textures, start positions and headings drawn
    /// from `seed`, with object sizes and speeds preserved.
    pub fn variant(&self, seed: u64) -> SceneConfig {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cfg = self.clone();
        cfg.seed = seed;
        cfg.background.seed = rng.gen();
        let cam = self.camera_velocity[0].hypot(self.camera_velocity[1]);
        let heading: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        cfg.camera_velocity = [cam * heading.cos(), cam * heading.sin()];
        for o in cfg.objects.iter_mut() {
            o.texture.seed = rng.gen();
            let (hw, hh) = o.half_extent();
            o.start = [
                rng.gen_range(hw..f64::from(self.width) - hw),
                rng.gen_range(hh..f64::from(self.height) - hh),
            ];
            let speed = o.velocity[0].hypot(o.velocity[1]);
            let heading: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            o.velocity = [speed * heading.cos(), speed * heading.sin()];
        }
        cfg
    }
}

/// Periodic lattice noise with one random table per octave.
#[derive(Debug, Clone)]
struct Texture {
    spec: TextureSpec,
    tables: Vec<Vec<f64>>,
}

const LATTICE: usize = 64;

impl Texture {
    fn new(spec: &TextureSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let tables = (0..spec.octaves)
            .map(|_| (0..LATTICE * LATTICE).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        Texture {
            spec: spec.clone(),
            tables,
        }
    }

    fn sample(&self, x: f64, y: f64) -> f64 {
        let mut sum = 0.0;
        let mut norm = 0.0;
        let mut amp = 1.0;
        let mut scale = self.spec.scale_px;
        for table in &self.tables {
            sum += amp * lattice_value(table, x / scale, y / scale);
            norm += amp;
            amp *= 0.5;
            scale *= 0.5;
        }
        self.spec.offset + self.spec.contrast * sum / norm
    }
}

fn lattice_value(table: &[f64], x: f64, y: f64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (tx, ty) = (smooth(x - fx), smooth(y - fy));
    let wrap = |v: f64| v.rem_euclid(LATTICE as f64) as usize;
    let (x0, y0) = (wrap(fx), wrap(fy));
    let (x1, y1) = ((x0 + 1) % LATTICE, (y0 + 1) % LATTICE);
    let at = |x: usize, y: usize| table[y * LATTICE + x];
    let top = at(x0, y0) + tx * (at(x1, y0) - at(x0, y0));
    let bottom = at(x0, y1) + tx * (at(x1, y1) - at(x0, y1));
    top + ty * (bottom - top)
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

impl ObjectSpec {
    fn half_extent(&self) -> (f64, f64) {
        match self.shape {
            Shape::Disk => (self.size_px / 2.0, self.size_px / 2.0),
            Shape::Rectangle => (self.size_px / 2.0, self.size_px * self.aspect / 2.0),
        }
    }

    /// Centre at time `t_s`, reflecting off the frame edges.
    fn centre(&self, t_s: f64, width: u16, height: u16) -> (f64, f64) {
        let (hw, hh) = self.half_extent();
        let bounce = |start: f64, v: f64, lo: f64, hi: f64| {
            let span = hi - lo;
            let p = (start - lo + v * t_s).rem_euclid(2.0 * span);
            lo + if p <= span { p } else { 2.0 * span - p }
        };
        (
            bounce(self.start[0], self.velocity[0], hw, f64::from(width) - hw),
            bounce(self.start[1], self.velocity[1], hh, f64::from(height) - hh),
        )
    }

    fn contains(&self, centre: (f64, f64), x: f64, y: f64) -> bool {
        let (dx, dy) = (x - centre.0, y - centre.1);
        let (hw, hh) = self.half_extent();
        match self.shape {
            Shape::Disk => dx * dx + dy * dy <= hw * hw,
            Shape::Rectangle => dx.abs() <= hw && dy.abs() <= hh,
        }
    }
}

/// Ready-to-render scene with textures materialised.
struct Renderer<'a> {
    cfg: &'a SceneConfig,
    background: Texture,
    objects: Vec<Texture>,
}

impl<'a> Renderer<'a> {
    fn new(cfg: &'a SceneConfig) -> Self {
        Renderer {
            cfg,
            background: Texture::new(&cfg.background),
            objects: cfg.objects.iter().map(|o| Texture::new(&o.texture)).collect(),
        }
    }

    fn frame_time_s(&self, frame: u64) -> f64 {
        frame as f64 / self.cfg.frame_rate_hz as f64
    }

    fn centres(&self, frame: u64) -> Vec<(f64, f64)> {
        let t = self.frame_time_s(frame);
        self.cfg
            .objects
            .iter()
            .map(|o| o.centre(t, self.cfg.width, self.cfg.height))
            .collect()
    }

    /// Log brightness of one row; later objects occlude earlier ones.
    fn render_row(&self, frame: u64, y: usize, centres: &[(f64, f64)], out: &mut [f64]) {
        let t = self.frame_time_s(frame);
        let cam = (self.cfg.camera_velocity[0] * t, self.cfg.camera_velocity[1] * t);
        let py = y as f64 + 0.5;
        for (x, v) in out.iter_mut().enumerate() {
            let px = x as f64 + 0.5;
            let mut value = self.background.sample(px + cam.0, py + cam.1);
            for ((obj, tex), &c) in self.cfg.objects.iter().zip(&self.objects).zip(centres) {
                if obj.contains(c, px, py) {
                    value = tex.sample(px - c.0, py - c.1);
                }
            }
            *v = value;
        }
    }

    fn silhouette(&self, frame: u64) -> Vec<bool> {
        let (w, h) = (self.cfg.width as usize, self.cfg.height as usize);
        let centres = self.centres(frame);
        let mut mask = vec![false; w * h];
        for (i, m) in mask.iter_mut().enumerate() {
            let (px, py) = ((i % w) as f64 + 0.5, (i / w) as f64 + 0.5);
            *m = self.cfg.objects.iter().zip(&centres).any(|(o, &c)| o.contains(c, px, py));
        }
        mask
    }
}

/// Union of object silhouettes over every frame that bounds an interval
/// overlapping `[t0_us, t1_us)`.
pub fn swept_mask(cfg: &SceneConfig, t0_us: u64, t1_us: u64) -> SegMask {
    let r = Renderer::new(cfg);
    swept_with(&r, t0_us, t1_us)
}

fn swept_with(r: &Renderer, t0_us: u64, t1_us: u64) -> SegMask {
    let cfg = r.cfg;
    let (w, h) = (cfg.width as usize, cfg.height as usize);
    let mut mask = SegMask::empty(h, w);
    if t1_us <= t0_us {
        return mask;
    }
    let frame_us = 1_000_000 / cfg.frame_rate_hz;
    let last = cfg.duration_ms * cfg.frames_per_ms();
    let first = t0_us / frame_us;
    let end = (t1_us.div_ceil(frame_us)).min(last);
    for f in first..=end {
        for (m, s) in mask.pixels.iter_mut().zip(r.silhouette(f)) {
            *m |= s;
        }
    }
    mask
}

#[derive(Debug, Clone)]
pub struct GeneratedScene {
    pub stream: EventStream,
    /// Swept silhouette of every `window_ms` window.
    pub window_masks: Vec<SegMask>,
}

/// Render the scene and emit labelled events. An event is foreground when
/// its pixel lies inside an object at either end of the frame interval that
/// produced it.
pub fn generate(cfg: &SceneConfig) -> Result<GeneratedScene> {
    cfg.validate()?;
    let (w, h) = (cfg.width as usize, cfg.height as usize);
    let frames = cfg.duration_ms * cfg.frames_per_ms();
    let frame_us = 1_000_000 / cfg.frame_rate_hz;
    let t_end = cfg.duration_ms * 1000;
    let r = Renderer::new(cfg);
    let window_masks = (0..cfg.window_count() as u64)
        .map(|k| swept_with(&r, k * cfg.window_ms * 1000, (k + 1) * cfg.window_ms * 1000))
        .collect();
    if !cfg.has_contrast() {
        log::warn!("scene has no brightness contrast; emitting an empty stream");
        return Ok(GeneratedScene {
            stream: EventStream::new(cfg.width, cfg.height, 0, t_end),
            window_masks,
        });
    }

    let render = |f: u64| -> Vec<f64> {
        let centres = r.centres(f);
        let mut img = vec![0.0; w * h];
        img.par_chunks_mut(w)
            .enumerate()
            .for_each(|(y, row)| r.render_row(f, y, &centres, row));
        img
    };
    let mut reference = render(0);
    let mut prev = reference.clone();
    let mut prev_sil = r.silhouette(0);
    let thr = cfg.trigger_threshold;
    let mut events = Vec::new();
    for f in 1..=frames {
        let curr = render(f);
        let sil = r.silhouette(f);
        let t0 = (f - 1) * frame_us;
        let rows: Vec<Result<Vec<Event>>> = reference
            .par_chunks_mut(w)
            .enumerate()
            .map(|(y, refs)| {
                let mut out = Vec::new();
                for (x, rf) in refs.iter_mut().enumerate() {
                    let i = y * w + x;
                    let (from, to) = (prev[i], curr[i]);
                    let fg = prev_sil[i] || sil[i];
                    while let Some(p) = trigger_event(*rf, to, thr)? {
                        *rf += thr * f64::from(p.as_i8());
                        // time at which the linear ramp crossed the new level
                        let frac = if to != from { ((*rf - from) / (to - from)).clamp(0.0, 1.0) } else { 0.0 };
                        let dt = ((frac * frame_us as f64) as u64).min(frame_us - 1);
                        let label = if fg { Label::Foreground } else { Label::Background };
                        out.push(Event::new(x as u16, y as u16, t0 + dt, p).with_label(label));
                    }
                }
                Ok(out)
            })
            .collect();
        for row in rows {
            events.extend(row?);
        }
        prev = curr;
        prev_sil = sil;
    }
    events.sort_by_key(|e| (e.t, e.y, e.x, e.p.as_i8()));
    let stream = EventStream {
        events,
        width: cfg.width,
        height: cfg.height,
        t_start: 0,
        t_end,
    };
    stream.validate()?;
    Ok(GeneratedScene { stream, window_masks })
}

/// Consecutive half-open windows with ground truth built from the event labels.
pub fn split_windows(stream: &EventStream, window_ms: u64) -> Result<Vec<(EventStream, GroundTruth)>> {
    if window_ms == 0 {
        return Err(Error::InvalidParam("window_ms must be positive".into()));
    }
    let width = window_ms * 1000;
    let mut out = Vec::new();
    let mut t = stream.t_start;
    while t < stream.t_end {
        let win = stream.slice(t, (t + width).min(stream.t_end));
        let gt = GroundTruth::from_window(&win, 1000, None)?;
        out.push((win, gt));
        t += width;
    }
    Ok(out)
}

/// Dataset of independently seeded training and validation sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub scene: SceneConfig,
    pub train_sequences: usize,
    pub val_sequences: usize,
    pub val_duration_ms: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            scene: SceneConfig::default(),
            train_sequences: 1,
            val_sequences: 1,
            val_duration_ms: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceEntry {
    pub name: String,
    pub split: Split,
    pub events_file: String,
    pub mask_dir: String,
    pub windows: usize,
    pub events: usize,
    pub scene: SceneConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub seed: u64,
    pub config: DatasetConfig,
    pub sequences: Vec<SequenceEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        if self.train_sequences == 0 {
            return Err(Error::Config("need at least one training sequence".into()));
        }
        if self.val_sequences > 0
            && (self.val_duration_ms == 0 || self.val_duration_ms % self.scene.window_ms != 0)
        {
            return Err(Error::Config(format!(
                "val_duration_ms {} must be a positive multiple of window_ms {}",
                self.val_duration_ms, self.scene.window_ms
            )));
        }
        Ok(())
    }

    /// Scene of every sequence. The first training sequence uses the scene as
    /// configured; the others are seeded variants.
    pub fn sequences(&self, seed: u64) -> Vec<(String, Split, SceneConfig)> {
        let mut out = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in 0..self.train_sequences {
            let variant_seed: u64 = rng.gen();
            let scene = if i == 0 {
                SceneConfig {
                    seed,
                    ..self.scene.clone()
                }
            } else {
                self.scene.variant(variant_seed)
            };
            out.push((format!("train_{i:03}"), Split::Train, scene));
        }
        for i in 0..self.val_sequences {
            let variant_seed: u64 = rng.gen();
            let mut scene = self.scene.variant(variant_seed);
            scene.duration_ms = self.val_duration_ms;
            out.push((format!("val_{i:03}"), Split::Val, scene));
        }
        out
    }
}

/// Generate every sequence, then write streams, per-window masks and the
/// manifest. The configuration is fully validated before anything is written.
pub fn write_dataset(cfg: &DatasetConfig, seed: u64, dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let plan = cfg.sequences(seed);
    for (_, _, scene) in &plan {
        scene.validate()?;
    }
    let generated = plan
        .iter()
        .map(|(_, _, scene)| generate(scene))
        .collect::<Result<Vec<_>>>()?;

    let mkdir = |p: &Path| fs::create_dir_all(p).map_err(|e| Error::io(p, e));
    mkdir(&dir.join("sequences"))?;
    let mut sequences = Vec::new();
    for ((name, split, scene), gen) in plan.into_iter().zip(generated) {
        let events_file = format!("sequences/{name}.evt");
        save_events(&gen.stream, &dir.join(&events_file), EventFormat::Binary)?;
        let mask_dir = format!("masks/{name}");
        mkdir(&dir.join(&mask_dir))?;
        for (k, m) in gen.window_masks.iter().enumerate() {
            let p: PathBuf = dir.join(&mask_dir).join(format!("w{k:04}.pgm"));
            write_pgm(&p, m.width, m.height, 255, &m.to_pgm_pixels())?;
        }
        sequences.push(SequenceEntry {
            name,
            split,
            events_file,
            mask_dir,
            windows: gen.window_masks.len(),
            events: gen.stream.len(),
            scene,
        });
    }
    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        seed,
        config: cfg.clone(),
        sequences,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::parse(path.display().to_string(), format!("line {}", e.line()), e.to_string()))?;
    if m.format_version != MANIFEST_VERSION {
        return Err(Error::Config(format!(
            "manifest version {} unsupported (expected {MANIFEST_VERSION})",
            m.format_version
        )));
    }
    Ok(m)
}
