//! Space-time conditioning volumes and the training corpus.
//!
//! A window stacks the color, correspondence and gaze renders of `N_w`
//! consecutive frames, oldest first, as planar `f32` channels in `[-1, 1]`.
//! Within a frame the channel order is color RGB, correspondence RGB, gaze
//! RGB, so the current frame occupies the last nine channels.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::face_model::{FaceBasis, FaceParameters};
use crate::image_formation::{render_conditioning, CameraIntrinsics, ColorSpace, ConditioningFrame, RasterImage};

pub const DEFAULT_WINDOW: usize = 11;
pub const CHANNELS_PER_FRAME: usize = 9;
pub const CORPUS_MAGIC: &[u8; 4] = b"DVPC";
pub const CORPUS_VERSION: u32 = 1;

/// Planar stack of `9 N_w` normalized channels.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditioningWindow {
    pub width: usize,
    pub height: usize,
    pub window_size: usize,
    /// Channel-major: `data[(c * height + y) * width + x]`.
    pub data: Vec<f32>,
}

impl ConditioningWindow {
    pub fn channels(&self) -> usize {
        CHANNELS_PER_FRAME * self.window_size
    }

    pub fn plane(&self) -> usize {
        self.width * self.height
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.plane();
        &self.data[c * n..(c + 1) * n]
    }

    /// The nine channels of window slot `k` (0 is the oldest).
    pub fn slot(&self, k: usize) -> &[f32] {
        let n = CHANNELS_PER_FRAME * self.plane();
        &self.data[k * n..(k + 1) * n]
    }

    pub fn current(&self) -> &[f32] {
        self.slot(self.window_size - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_size == 0 {
            return Err(Error::InvalidArgument("window size must be positive".into()));
        }
        let expected = self.channels() * self.plane();
        if self.data.len() != expected {
            return Err(Error::length("window data", expected, self.data.len()));
        }
        if let Some(&v) = self.data.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::OutOfRange {
                value: v as f64,
                lo: -1.0,
                hi: 1.0,
            });
        }
        Ok(())
    }
}

/// Normalized image as planar `f32` channels.
pub fn image_planes(img: &RasterImage) -> Result<Vec<f32>> {
    if img.space != ColorSpace::Normalized {
        return Err(Error::InvalidArgument("conditioning images must be normalized".into()));
    }
    let n = img.width * img.height;
    let mut out = vec![0f32; 3 * n];
    for (i, px) in img.data.chunks_exact(3).enumerate() {
        for c in 0..3 {
            out[c * n + i] = px[c] as f32;
        }
    }
    Ok(out)
}

/// Inverse of [`image_planes`].
pub fn planes_to_image(width: usize, height: usize, planes: &[f32]) -> Result<RasterImage> {
    let n = width * height;
    if planes.len() != 3 * n {
        return Err(Error::length("image planes", 3 * n, planes.len()));
    }
    let data = (0..n)
        .flat_map(|i| (0..3).map(move |c| planes[c * n + i] as f64))
        .collect();
    RasterImage::from_data(width, height, ColorSpace::Normalized, data)
}

pub fn normalize_frame(frame: &ConditioningFrame) -> Result<ConditioningFrame> {
    ConditioningFrame::new(
        frame.color.normalized()?,
        frame.correspondence.normalized()?,
        frame.gaze.normalized()?,
    )
}

/// Conditioning images of one parameter vector, normalized.
pub fn render_normalized(
    basis: &FaceBasis,
    params: &FaceParameters,
    cam: &CameraIntrinsics,
) -> Result<ConditioningFrame> {
    normalize_frame(&render_conditioning(basis, params, cam)?)
}

/// Stacks normalized frames, oldest first.
pub fn assemble_window(frames: &[&ConditioningFrame]) -> Result<ConditioningWindow> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidArgument("window needs at least one frame".into()))?;
    let (w, h) = (first.width(), first.height());
    let mut data = Vec::with_capacity(frames.len() * CHANNELS_PER_FRAME * w * h);
    for f in frames {
        for img in f.images() {
            img.same_size(&first.color)?;
            data.extend(image_planes(img)?);
        }
    }
    let win = ConditioningWindow {
        width: w,
        height: h,
        window_size: frames.len(),
        data,
    };
    win.validate()?;
    Ok(win)
}

/// How windows are formed for the first `N_w - 1` frames.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Missing history repeats frame 1, so every frame gets a window.
    #[default]
    Replicate,
    /// Only frames with full history get a window.
    None,
}

/// Number of windows a sequence of `n` frames produces.
pub fn window_count(n: usize, window: usize, padding: Padding) -> usize {
    match padding {
        Padding::Replicate => n,
        Padding::None => (n + 1).saturating_sub(window),
    }
}

/// Frame index of the newest slot of output window `o`.
pub fn window_frame(o: usize, window: usize, padding: Padding) -> usize {
    match padding {
        Padding::Replicate => o,
        Padding::None => o + window - 1,
    }
}

/// Lazily rendered sliding windows; each parameter frame is rendered once.
pub struct WindowStream<'a> {
    params: &'a [FaceParameters],
    basis: &'a FaceBasis,
    cam: CameraIntrinsics,
    window: usize,
    padding: Padding,
    next: usize,
    /// Rendered frames `base..base + ring.len()`.
    ring: VecDeque<ConditioningFrame>,
    base: usize,
}

impl<'a> WindowStream<'a> {
    pub fn len(&self) -> usize {
        window_count(self.params.len(), self.window, self.padding)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn ensure(&mut self, f: usize) -> Result<()> {
        let lo = f.saturating_sub(self.window - 1);
        while self.base + self.ring.len() <= f {
            let idx = self.base + self.ring.len();
            self.ring
                .push_back(render_normalized(self.basis, &self.params[idx], &self.cam)?);
        }
        while self.base < lo {
            self.ring.pop_front();
            self.base += 1;
        }
        Ok(())
    }
}

impl Iterator for WindowStream<'_> {
    type Item = Result<ConditioningWindow>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.len() {
            return None;
        }
        let f = window_frame(self.next, self.window, self.padding);
        self.next += 1;
        if let Err(e) = self.ensure(f) {
            self.next = usize::MAX;
            return Some(Err(e));
        }
        let slots: Vec<&ConditioningFrame> = (0..self.window)
            .map(|k| {
                let idx = (f + k + 1).saturating_sub(self.window);
                &self.ring[idx - self.base]
            })
            .collect();
        Some(assemble_window(&slots))
    }
}

pub fn sliding_windows<'a>(
    params: &'a [FaceParameters],
    basis: &'a FaceBasis,
    cam: &CameraIntrinsics,
    window: usize,
    padding: Padding,
) -> Result<WindowStream<'a>> {
    if params.is_empty() {
        return Err(Error::InvalidArgument("empty parameter sequence".into()));
    }
    if window == 0 {
        return Err(Error::InvalidArgument("window size must be positive".into()));
    }
    Ok(WindowStream {
        params,
        basis,
        cam: *cam,
        window,
        padding,
        next: 0,
        ring: VecDeque::new(),
        base: 0,
    })
}

/// Conditioning window and the normalized ground-truth frame it should
/// produce, as planar `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub window: ConditioningWindow,
    pub ground_truth: Vec<f32>,
}

impl TrainingPair {
    pub fn ground_truth_image(&self) -> Result<RasterImage> {
        planes_to_image(self.window.width, self.window.height, &self.ground_truth)
    }
}

fn normalized_truth(img: &RasterImage) -> Result<Vec<f32>> {
    match img.space {
        ColorSpace::Raw => image_planes(&img.normalized()?),
        ColorSpace::Normalized => image_planes(img),
    }
}

/// Training pairs built on demand from a tracked sequence and its video.
pub struct Corpus<'a> {
    params: &'a [FaceParameters],
    frames: &'a [RasterImage],
    basis: &'a FaceBasis,
    cam: CameraIntrinsics,
    window: usize,
    padding: Padding,
    cache: Option<PathBuf>,
}

pub fn build_corpus<'a>(
    params: &'a [FaceParameters],
    frames: &'a [RasterImage],
    basis: &'a FaceBasis,
    cam: &CameraIntrinsics,
    window: usize,
    padding: Padding,
) -> Result<Corpus<'a>> {
    if params.len() != frames.len() {
        return Err(Error::length("video frames", params.len(), frames.len()));
    }
    if window == 0 {
        return Err(Error::InvalidArgument("window size must be positive".into()));
    }
    if params.is_empty() || (padding == Padding::None && params.len() < window) {
        return Err(Error::SequenceTooShort {
            len: params.len(),
            window,
        });
    }
    for f in frames {
        if f.width != cam.width() || f.height != cam.height() {
            return Err(Error::ImageSizeMismatch(f.width, f.height, cam.width(), cam.height()));
        }
    }
    Ok(Corpus {
        params,
        frames,
        basis,
        cam: *cam,
        window,
        padding,
        cache: None,
    })
}

impl<'a> Corpus<'a> {
    /// Caches pairs as `dir/pair_%06d.dvpc`, validated by content hash.
    pub fn with_cache(mut self, dir: impl Into<PathBuf>) -> Self {
        self.cache = Some(dir.into());
        self
    }

    pub fn len(&self) -> usize {
        window_count(self.params.len(), self.window, self.padding)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn window_size(&self) -> usize {
        self.window
    }

    /// Index of the video frame that pair `i` reproduces.
    pub fn frame_of(&self, i: usize) -> usize {
        window_frame(i, self.window, self.padding)
    }

    /// Content hash of everything that determines pair `i`.
    pub fn pair_key(&self, i: usize) -> [u8; 32] {
        let f = self.frame_of(i);
        let mut h = Sha256::new();
        h.update(b"conditioning-pair-v1");
        let d = self.basis.dims();
        for v in [
            self.basis.seed,
            self.basis.vertex_count as u64,
            d.alpha as u64,
            d.beta as u64,
            d.delta as u64,
        ] {
            h.update(v.to_le_bytes());
        }
        for v in [
            self.cam.focal_length_px,
            self.cam.principal_point[0],
            self.cam.principal_point[1],
        ] {
            h.update(v.to_le_bytes());
        }
        h.update((self.cam.width() as u64).to_le_bytes());
        h.update((self.cam.height() as u64).to_le_bytes());
        h.update((self.window as u64).to_le_bytes());
        for k in 0..self.window {
            let idx = (f + k + 1).saturating_sub(self.window);
            h.update(serde_json::to_vec(&self.params[idx]).unwrap_or_default());
        }
        for v in &self.frames[f].data {
            h.update(v.to_le_bytes());
        }
        h.finalize().into()
    }

    fn render_pair(&self, i: usize) -> Result<TrainingPair> {
        let f = self.frame_of(i);
        let lo = (f + 1).saturating_sub(self.window);
        let rendered = (lo..=f)
            .map(|k| render_normalized(self.basis, &self.params[k], &self.cam))
            .collect::<Result<Vec<_>>>()?;
        let slots: Vec<&ConditioningFrame> = (0..self.window)
            .map(|k| &rendered[(f + k + 1).saturating_sub(self.window) - lo])
            .collect();
        Ok(TrainingPair {
            window: assemble_window(&slots)?,
            ground_truth: normalized_truth(&self.frames[f])?,
        })
    }

    pub fn pair(&self, i: usize) -> Result<TrainingPair> {
        if i >= self.len() {
            return Err(Error::InvalidArgument(format!(
                "pair {i} out of range ({})",
                self.len()
            )));
        }
        let Some(dir) = &self.cache else {
            return self.render_pair(i);
        };
        let path = dir.join(format!("pair_{i:06}.dvpc"));
        let key = self.pair_key(i);
        if path.exists() {
            match read_pair(&path) {
                Ok((k, pair)) if k == key => return Ok(pair),
                Ok(_) => log::debug!("stale cache entry {}", path.display()),
                Err(e) => log::warn!("ignoring unreadable cache entry {}: {e}", path.display()),
            }
        }
        let pair = self.render_pair(i)?;
        std::fs::create_dir_all(dir)?;
        write_pair(&path, &pair, &key)?;
        Ok(pair)
    }

    /// All pairs in order, rendering every parameter frame once.
    pub fn materialize(&self) -> Result<Vec<TrainingPair>> {
        let stream = sliding_windows(self.params, self.basis, &self.cam, self.window, self.padding)?;
        stream
            .enumerate()
            .map(|(i, w)| {
                Ok(TrainingPair {
                    window: w?,
                    ground_truth: normalized_truth(&self.frames[self.frame_of(i)])?,
                })
            })
            .collect()
    }
}

/// Writes one pair: magic, version, W, H, N_w, 32-byte key, then the volume
/// and the ground truth as little-endian `f32`.
pub fn write_pair(path: impl AsRef<Path>, pair: &TrainingPair, key: &[u8; 32]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CORPUS_MAGIC)?;
    w.write_u32::<LE>(CORPUS_VERSION)?;
    for v in [pair.window.width, pair.window.height, pair.window.window_size] {
        w.write_u32::<LE>(v as u32)?;
    }
    w.write_all(key)?;
    for &v in pair.window.data.iter().chain(&pair.ground_truth) {
        w.write_f32::<LE>(v)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pair(path: impl AsRef<Path>) -> Result<([u8; 32], TrainingPair)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CORPUS_MAGIC {
        return Err(Error::Format("not a corpus pair file (bad magic)".into()));
    }
    let version = r.read_u32::<LE>()?;
    if version != CORPUS_VERSION {
        return Err(Error::Format(format!("unsupported corpus version {version}")));
    }
    let width = r.read_u32::<LE>()? as usize;
    let height = r.read_u32::<LE>()? as usize;
    let window_size = r.read_u32::<LE>()? as usize;
    if width * height * window_size > 1 << 26 || window_size == 0 {
        return Err(Error::Format("corpus header out of range".into()));
    }
    let mut key = [0u8; 32];
    r.read_exact(&mut key)?;
    let mut data = vec![0f32; CHANNELS_PER_FRAME * window_size * width * height];
    r.read_f32_into::<LE>(&mut data)?;
    let mut ground_truth = vec![0f32; 3 * width * height];
    r.read_f32_into::<LE>(&mut ground_truth)?;
    let window = ConditioningWindow {
        width,
        height,
        window_size,
        data,
    };
    window.validate()?;
    Ok((key, TrainingPair { window, ground_truth }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn black_frame(w: usize, h: usize) -> ConditioningFrame {
        let b = RasterImage::black(w, h, ColorSpace::Normalized);
        ConditioningFrame::new(b.clone(), b.clone(), b).unwrap()
    }

    #[test]
    fn default_window_has_99_channels() {
        let f = black_frame(4, 3);
        let slots = vec![&f; DEFAULT_WINDOW];
        let w = assemble_window(&slots).unwrap();
        assert_eq!(w.channels(), 99);
        assert_eq!(w.data.len(), 99 * 12);
        assert!(w.data.iter().all(|v| *v == -1.0));
    }

    #[test]
    fn raw_frames_rejected() {
        let b = RasterImage::black(2, 2, ColorSpace::Raw);
        let f = ConditioningFrame::new(b.clone(), b.clone(), b).unwrap();
        assert!(assemble_window(&[&f]).is_err());
    }

    #[test]
    fn size_mismatch_rejected() {
        let a = black_frame(4, 4);
        let b = black_frame(4, 5);
        assert!(assemble_window(&[&a, &b]).is_err());
    }

    #[test]
    fn counts() {
        assert_eq!(window_count(2000, 11, Padding::None), 1990);
        assert_eq!(window_count(11, 11, Padding::None), 1);
        assert_eq!(window_count(5, 11, Padding::None), 0);
        assert_eq!(window_count(5, 11, Padding::Replicate), 5);
    }

    #[test]
    fn planes_round_trip() {
        let mut img = RasterImage::black(3, 2, ColorSpace::Normalized);
        img.set_pixel(1, 1, [0.5, -0.25, 1.0]);
        let p = image_planes(&img).unwrap();
        assert_eq!(p[4], 0.5);
        assert_eq!(p[6 + 4], -0.25);
        assert_eq!(planes_to_image(3, 2, &p).unwrap(), img);
    }
}
