//! Clip directories on disk, bicubic resampling for data preparation, and
//! the binary weight-file format.
//!
//! A clip directory holds `frame_00000.png .. frame_NNNNN.png`, 8-bit RGB,
//! contiguous zero-based numbering, uniform dimensions. Pixels map to
//! floats as `v / 255`; saving rounds half away from zero back to u8.
//!
//! The resampler is a separable Keys cubic (a = -0.5) with pixel centers
//! at `(i + 0.5) / n`. When downscaling, the kernel support widens by the
//! scale factor (antialiasing); out-of-range taps clamp to the edge pixel
//! and weights are normalized to sum to one.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use image::RgbImage;

use crate::error::{Error, Result, WeightFileError};
use crate::network::{expected_tensor_layout, params_from_flat, Mode, NetConfig, NetParams};
use crate::tensor::{Scalar, Tensor4};

pub const WEIGHT_MAGIC: &[u8; 4] = b"RVSR";
pub const WEIGHT_VERSION: u16 = 1;

// ---------------------------------------------------------------------------
// clip directories

fn frame_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("frame_{index:05}.png"))
}

fn count_frames(dir: &Path) -> Result<usize> {
    if !dir.is_dir() {
        return Err(Error::ClipDir(format!("{} is not a directory", dir.display())));
    }
    let mut indices = Vec::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name();
        let name = name.to_string_lossy();
        if let Some(stem) = name.strip_prefix("frame_").and_then(|s| s.strip_suffix(".png")) {
            if stem.len() == 5 && stem.chars().all(|c| c.is_ascii_digit()) {
                indices.push(stem.parse::<usize>().unwrap());
            }
        }
    }
    if indices.is_empty() {
        return Err(Error::ClipDir(format!(
            "{} contains no frame_XXXXX.png files",
            dir.display()
        )));
    }
    indices.sort_unstable();
    for (want, &got) in indices.iter().enumerate().map(|(i, g)| (i, g)) {
        if want != got {
            return Err(Error::ClipDir(format!(
                "frame numbering not contiguous: missing frame {want:05}"
            )));
        }
    }
    Ok(indices.len())
}

/// Load a clip directory as a `(1, 3T, h, w)` tensor in [0, 1].
pub fn load_clip<T: Scalar>(dir: &Path) -> Result<Tensor4<T>> {
    let frames = count_frames(dir)?;
    let mut dims: Option<(usize, usize)> = None;
    let mut data: Vec<T> = Vec::new();
    let max = T::from_f64_lossy(255.0);
    for f in 0..frames {
        let path = frame_path(dir, f);
        let img = image::open(&path)?;
        let rgb = match img {
            image::DynamicImage::ImageRgb8(rgb) => rgb,
            other => {
                return Err(Error::ClipDir(format!(
                    "{} is not 8-bit RGB (got {:?})",
                    path.display(),
                    other.color()
                )))
            }
        };
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        match dims {
            None => dims = Some((h, w)),
            Some(d) if d != (h, w) => {
                return Err(Error::ClipDir(format!(
                    "frame {f:05} is {h}x{w}, expected {}x{}",
                    d.0, d.1
                )))
            }
            _ => {}
        }
        // planar RGB per frame: channel index 3f + c
        let raw = rgb.as_raw();
        for c in 0..3 {
            data.extend(
                raw.chunks_exact(3)
                    .map(|px| T::from_u8(px[c]).unwrap() / max),
            );
        }
    }
    let (h, w) = dims.unwrap();
    Tensor4::new([1, 3 * frames, h, w], data)
}

/// Save a `(1, 3T, h, w)` tensor as a clip directory (inverse of
/// [`load_clip`]).
pub fn save_clip<T: Scalar>(dir: &Path, clip: &Tensor4<T>) -> Result<()> {
    let [n, c, h, w] = clip.dims();
    if n != 1 || c % 3 != 0 || c == 0 {
        return Err(Error::Shape(format!(
            "save_clip expects (1, 3T, h, w), got {:?}",
            clip.dims()
        )));
    }
    fs::create_dir_all(dir)?;
    let frames = c / 3;
    let plane = h * w;
    for f in 0..frames {
        let mut img = RgbImage::new(w as u32, h as u32);
        for (i, px) in img.pixels_mut().enumerate() {
            for ch in 0..3 {
                let v = clip.data()[(3 * f + ch) * plane + i].to_f64().unwrap();
                px.0[ch] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
        img.save(frame_path(dir, f))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// bicubic resampling

/// Keys cubic convolution kernel, a = -0.5.
pub fn keys_kernel(x: f64) -> f64 {
    const A: f64 = -0.5;
    let t = x.abs();
    if t <= 1.0 {
        (A + 2.0) * t * t * t - (A + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        A * (t * t * t - 5.0 * t * t + 8.0 * t - 4.0)
    } else {
        0.0
    }
}

/// Per-output-coordinate taps: clamped source indices with normalized
/// weights.
fn resample_taps(in_n: usize, out_n: usize) -> Vec<(Vec<usize>, Vec<f64>)> {
    let ratio = in_n as f64 / out_n as f64;
    let scale = ratio.max(1.0);
    let support = 2.0 * scale;
    (0..out_n)
        .map(|i| {
            let center = (i as f64 + 0.5) * ratio - 0.5;
            let start = (center - support).ceil() as isize;
            let end = (center + support).floor() as isize;
            let mut idx = Vec::with_capacity((end - start + 1) as usize);
            let mut wgt = Vec::with_capacity(idx.capacity());
            for j in start..=end {
                let w = keys_kernel((j as f64 - center) / scale);
                if w != 0.0 {
                    idx.push(j.clamp(0, in_n as isize - 1) as usize);
                    wgt.push(w);
                }
            }
            let sum: f64 = wgt.iter().sum();
            for w in &mut wgt {
                *w /= sum;
            }
            (idx, wgt)
        })
        .collect()
}

/// Separable bicubic resize of every channel plane; output clamped to
/// [0, 1].
pub fn bicubic_resize<T: Scalar>(img: &Tensor4<T>, out_h: usize, out_w: usize) -> Result<Tensor4<T>> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArg("target dims must be positive".into()));
    }
    let [n, c, h, w] = img.dims();
    if h == 0 || w == 0 {
        return Err(Error::Shape("cannot resize an empty image".into()));
    }
    let taps_x = resample_taps(w, out_w);
    let taps_y = resample_taps(h, out_h);

    // horizontal pass into (h, out_w), then vertical into (out_h, out_w)
    let mut out = Tensor4::zeros([n, c, out_h, out_w]);
    let mut mid = vec![0.0f64; h * out_w];
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h {
                let row_base = img.index_of(ni, ci, y, 0);
                for (x, (idx, wgt)) in taps_x.iter().enumerate() {
                    let mut acc = 0.0f64;
                    for (&j, &wv) in idx.iter().zip(wgt) {
                        acc += wv * img.data()[row_base + j].to_f64().unwrap();
                    }
                    mid[y * out_w + x] = acc;
                }
            }
            for (y, (idx, wgt)) in taps_y.iter().enumerate() {
                let out_base = out.index_of(ni, ci, y, 0);
                for x in 0..out_w {
                    let mut acc = 0.0f64;
                    for (&j, &wv) in idx.iter().zip(wgt) {
                        acc += wv * mid[j * out_w + x];
                    }
                    out.data_mut()[out_base + x] = T::from_f64_lossy(acc.clamp(0.0, 1.0));
                }
            }
        }
    }
    Ok(out)
}

/// Downsample one clip directory by `scale` into `out_dir`.
pub fn prepare_clip(hr_dir: &Path, out_dir: &Path, scale: usize) -> Result<()> {
    if scale == 0 {
        return Err(Error::InvalidArg("scale must be >= 1".into()));
    }
    let hr = load_clip::<f32>(hr_dir)?;
    let [_, _, h, w] = hr.dims();
    if h % scale != 0 || w % scale != 0 {
        return Err(Error::ClipDir(format!(
            "{}x{} not divisible by scale {}",
            h, w, scale
        )));
    }
    let lr = bicubic_resize(&hr, h / scale, w / scale)?;
    save_clip(out_dir, &lr)
}

/// Treat `hr_root` either as one clip directory or as a directory of clip
/// directories; emit the mirrored LR structure under `out_root`. Returns
/// the clip count.
pub fn prepare_tree(hr_root: &Path, out_root: &Path, scale: usize) -> Result<usize> {
    if frame_path(hr_root, 0).exists() {
        prepare_clip(hr_root, out_root, scale)?;
        return Ok(1);
    }
    let mut subdirs: Vec<PathBuf> = fs::read_dir(hr_root)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    if subdirs.is_empty() {
        return Err(Error::ClipDir(format!(
            "{} holds neither frames nor clip subdirectories",
            hr_root.display()
        )));
    }
    for sub in &subdirs {
        let name = sub.file_name().unwrap();
        prepare_clip(sub, &out_root.join(name), scale)?;
    }
    Ok(subdirs.len())
}

/// Load every clip subdirectory of `root` (or `root` itself when it is a
/// single clip), sorted by name.
pub fn load_clip_tree<T: Scalar>(root: &Path) -> Result<Vec<(String, Tensor4<T>)>> {
    if frame_path(root, 0).exists() {
        let name = root
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| ".".into());
        return Ok(vec![(name, load_clip(root)?)]);
    }
    let mut subdirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    if subdirs.is_empty() {
        return Err(Error::ClipDir(format!(
            "{} holds neither frames nor clip subdirectories",
            root.display()
        )));
    }
    subdirs
        .into_iter()
        .map(|p| {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            Ok((name, load_clip(&p)?))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// weight files

struct ByteCursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], WeightFileError> {
        if self.pos + n > self.buf.len() {
            return Err(WeightFileError::Truncated(what));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, WeightFileError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, WeightFileError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, WeightFileError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Serialize parameters into the weight-file byte layout.
pub fn encode_weights<T: Scalar>(params: &NetParams<T>) -> Vec<u8> {
    let cfg = &params.config;
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHT_MAGIC);
    out.extend_from_slice(&WEIGHT_VERSION.to_le_bytes());
    out.push(match params.mode {
        Mode::Branched => 0,
        Mode::Fused => 1,
    });
    out.push(cfg.global_residual as u8);
    for v in [cfg.nc, cfg.nb, cfg.frames, cfg.scale] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for (name, dims, data) in params.tensor_views() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(dims.len() as u8);
        for d in &dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in data {
            out.extend_from_slice(&v.to_f32().unwrap().to_le_bytes());
        }
    }
    out
}

/// Parse a weight file; validates magic, version, the header-declared
/// architecture and every tensor record against the canonical layout.
pub fn decode_weights<T: Scalar>(bytes: &[u8]) -> Result<NetParams<T>> {
    let mut cur = ByteCursor { buf: bytes, pos: 0 };
    if cur.take(4, "magic")? != WEIGHT_MAGIC {
        return Err(WeightFileError::BadMagic.into());
    }
    let version = cur.u16("version")?;
    if version != WEIGHT_VERSION {
        return Err(WeightFileError::UnsupportedVersion(version).into());
    }
    let mode = match cur.u8("mode")? {
        0 => Mode::Branched,
        1 => Mode::Fused,
        m => {
            return Err(WeightFileError::InvalidField(format!("mode byte {m}")).into());
        }
    };
    let flags = cur.u8("flags")?;
    if flags & !1 != 0 {
        return Err(WeightFileError::InvalidField(format!("flags {flags:#x}")).into());
    }
    let nc = cur.u32("nc")? as usize;
    let nb = cur.u32("nb")? as usize;
    let frames = cur.u32("frames")? as usize;
    let scale = cur.u32("scale")? as usize;
    let config = NetConfig {
        nc,
        nb,
        scale,
        frames,
        global_residual: flags & 1 != 0,
    };
    config
        .validate()
        .map_err(|e| WeightFileError::InvalidField(e.to_string()))?;

    let layout = expected_tensor_layout(&config, mode);
    let mut flats: Vec<Vec<T>> = Vec::with_capacity(layout.len());
    for (want_name, want_dims) in &layout {
        let name_len = cur.u16("name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "name")?)
            .map_err(|_| WeightFileError::InvalidField("non-UTF8 tensor name".into()))?;
        if name != want_name {
            return Err(WeightFileError::InvalidField(format!(
                "tensor name {name:?}, expected {want_name:?}"
            ))
            .into());
        }
        let rank = cur.u8("rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(cur.u32("dims")? as usize);
        }
        if &dims != want_dims {
            return Err(WeightFileError::DimMismatch(format!(
                "{name}: {dims:?}, expected {want_dims:?}"
            ))
            .into());
        }
        let count: usize = dims.iter().product();
        let payload = cur.take(4 * count, "tensor payload")?;
        flats.push(
            payload
                .chunks_exact(4)
                .map(|b| T::from_f32(f32::from_le_bytes(b.try_into().unwrap())).unwrap())
                .collect(),
        );
    }
    if cur.pos != bytes.len() {
        return Err(WeightFileError::TrailingBytes.into());
    }
    params_from_flat(config, mode, flats)
}

pub fn save_weights<T: Scalar>(params: &NetParams<T>, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    f.write_all(&encode_weights(params))?;
    Ok(())
}

pub fn load_weights<T: Scalar>(path: &Path) -> Result<NetParams<T>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_weights(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{forward_clip, fuse_network, Pass};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // -- bicubic ------------------------------------------------------------

    /// Direct (non-separable) weighted-sum resampler with its own kernel
    /// tabulation; the reference for `bicubic_resize`.
    fn bicubic_oracle(img: &Tensor4<f32>, out_h: usize, out_w: usize) -> Tensor4<f32> {
        fn taps(in_n: usize, out_n: usize, i: usize) -> Vec<(usize, f64)> {
            let ratio = in_n as f64 / out_n as f64;
            let scale = ratio.max(1.0);
            let center = (i as f64 + 0.5) * ratio - 0.5;
            let lo = (center - 2.0 * scale).ceil() as isize;
            let hi = (center + 2.0 * scale).floor() as isize;
            let raw: Vec<(usize, f64)> = (lo..=hi)
                .map(|j| {
                    let t = ((j as f64 - center) / scale).abs();
                    let w = if t <= 1.0 {
                        1.5 * t * t * t - 2.5 * t * t + 1.0
                    } else if t < 2.0 {
                        -0.5 * (t * t * t - 5.0 * t * t + 8.0 * t - 4.0)
                    } else {
                        0.0
                    };
                    (j.clamp(0, in_n as isize - 1) as usize, w)
                })
                .collect();
            let sum: f64 = raw.iter().map(|(_, w)| w).sum();
            raw.into_iter().map(|(j, w)| (j, w / sum)).collect()
        }
        let [n, c, h, w] = img.dims();
        let mut out = Tensor4::zeros([n, c, out_h, out_w]);
        for ni in 0..n {
            for ci in 0..c {
                for oy in 0..out_h {
                    for ox in 0..out_w {
                        let mut acc = 0.0f64;
                        for &(jy, wy) in &taps(h, out_h, oy) {
                            for &(jx, wx) in &taps(w, out_w, ox) {
                                acc += wy * wx * img.at(ni, ci, jy, jx) as f64;
                            }
                        }
                        out.set(ni, ci, oy, ox, acc.clamp(0.0, 1.0) as f32);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = Tensor4::<f32>::filled([1, 3, 12, 17], 0.42);
        for (h, w) in [(3, 4), (12, 17), (30, 5)] {
            let out = bicubic_resize(&img, h, w).unwrap();
            assert_eq!(out.dims(), [1, 3, h, w]);
            for &v in out.data() {
                assert!((v - 0.42).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn same_size_resize_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = Tensor4::<f32>::random_uniform(&mut rng, [1, 3, 9, 7], 0.0, 1.0);
        let out = bicubic_resize(&img, 9, 7).unwrap();
        assert!(img.max_abs_diff(&out).unwrap() <= 1e-6);
    }

    #[test]
    fn challenge_dims_downscale() {
        let img = Tensor4::<f32>::filled([1, 1, 720, 1280], 0.5);
        let out = bicubic_resize(&img, 180, 320).unwrap();
        assert_eq!(out.dims(), [1, 1, 180, 320]);
    }

    #[test]
    fn ramp_is_preserved_and_matches_oracle() {
        let w = 32;
        let img = Tensor4::<f32>::from_fn([1, 1, 8, w], |_, _, _, x| {
            0.1 + 0.8 * x as f32 / (w - 1) as f32
        });
        let out = bicubic_resize(&img, 2, w / 4).unwrap();
        // interior pixels of a linear ramp stay on the ramp
        for x in 2..w / 4 - 2 {
            let src = (x as f64 + 0.5) * 4.0 - 0.5;
            let expect = 0.1 + 0.8 * src / (w - 1) as f64;
            assert!(
                (out.at(0, 0, 1, x) as f64 - expect).abs() <= 1e-3,
                "x={} got {} want {}",
                x,
                out.at(0, 0, 1, x),
                expect
            );
        }
        let oracle = bicubic_oracle(&img, 2, w / 4);
        assert!(out.max_abs_diff(&oracle).unwrap() <= 1e-5);
    }

    #[test]
    fn random_resizes_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = Tensor4::<f32>::random_uniform(&mut rng, [1, 3, 16, 12], 0.0, 1.0);
        for (h, w) in [(4, 3), (8, 6), (16, 12), (5, 9), (32, 24)] {
            let got = bicubic_resize(&img, h, w).unwrap();
            let want = bicubic_oracle(&img, h, w);
            assert!(got.max_abs_diff(&want).unwrap() <= 1e-5, "{}x{}", h, w);
        }
        assert!(bicubic_resize(&img, 0, 4).is_err());
    }

    // -- clip directories ----------------------------------------------------

    fn u8_clip(seed: u64, frames: usize, h: usize, w: usize) -> Tensor4<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..3 * frames * h * w)
            .map(|_| rng.random_range(0u32..=255) as f32 / 255.0)
            .collect();
        Tensor4::new([1, 3 * frames, h, w], data).unwrap()
    }

    #[test]
    fn clip_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let clip = u8_clip(3, 4, 6, 5);
        save_clip(dir.path(), &clip).unwrap();
        let loaded = load_clip::<f32>(dir.path()).unwrap();
        assert_eq!(loaded, clip);
        // second generation: save -> load of the loaded tensor stays fixed
        let dir2 = tempfile::tempdir().unwrap();
        save_clip(dir2.path(), &loaded).unwrap();
        assert_eq!(load_clip::<f32>(dir2.path()).unwrap(), loaded);
    }

    #[test]
    fn clip_shapes() {
        let dir = tempfile::tempdir().unwrap();
        save_clip(dir.path(), &u8_clip(4, 10, 9, 8)).unwrap();
        assert_eq!(load_clip::<f32>(dir.path()).unwrap().dims(), [1, 30, 9, 8]);
        let single = tempfile::tempdir().unwrap();
        save_clip(single.path(), &u8_clip(5, 1, 4, 4)).unwrap();
        assert_eq!(load_clip::<f32>(single.path()).unwrap().dims(), [1, 3, 4, 4]);
    }

    #[test]
    fn clip_errors() {
        let dir = tempfile::tempdir().unwrap();
        save_clip(dir.path(), &u8_clip(6, 3, 4, 4)).unwrap();
        fs::remove_file(dir.path().join("frame_00001.png")).unwrap();
        assert!(matches!(
            load_clip::<f32>(dir.path()),
            Err(Error::ClipDir(_))
        ));

        let dir = tempfile::tempdir().unwrap();
        save_clip(dir.path(), &u8_clip(7, 2, 4, 4)).unwrap();
        // overwrite frame 1 with a different size
        let small = Tensor4::<f32>::filled([1, 3, 2, 2], 0.5);
        let tmp = tempfile::tempdir().unwrap();
        save_clip(tmp.path(), &small).unwrap();
        fs::copy(tmp.path().join("frame_00000.png"), dir.path().join("frame_00001.png")).unwrap();
        assert!(matches!(
            load_clip::<f32>(dir.path()),
            Err(Error::ClipDir(_))
        ));

        let empty = tempfile::tempdir().unwrap();
        assert!(load_clip::<f32>(empty.path()).is_err());
    }

    #[test]
    fn prepare_mirrors_directory_structure() {
        let hr_root = tempfile::tempdir().unwrap();
        for name in ["000", "001"] {
            save_clip(&hr_root.path().join(name), &u8_clip(8, 2, 8, 12)).unwrap();
        }
        let out_root = tempfile::tempdir().unwrap();
        let n = prepare_tree(hr_root.path(), out_root.path(), 4).unwrap();
        assert_eq!(n, 2);
        for name in ["000", "001"] {
            let lr = load_clip::<f32>(&out_root.path().join(name)).unwrap();
            assert_eq!(lr.dims(), [1, 6, 2, 3]);
        }
    }

    // -- weight files ---------------------------------------------------------

    fn sample_params(mode: Mode) -> NetParams<f32> {
        let cfg = NetConfig::new(16, 4).unwrap();
        let branched = NetParams::<f32>::init(cfg, 99).unwrap();
        match mode {
            Mode::Branched => branched,
            Mode::Fused => fuse_network(&branched).unwrap(),
        }
    }

    #[test]
    fn weights_round_trip_bit_identical() {
        for mode in [Mode::Branched, Mode::Fused] {
            let params = sample_params(mode);
            let bytes = encode_weights(&params);
            let back: NetParams<f32> = decode_weights(&bytes).unwrap();
            assert_eq!(back, params);
            assert_eq!(encode_weights(&back), bytes);
        }
    }

    #[test]
    fn weight_file_error_taxonomy() {
        let params = sample_params(Mode::Fused);
        let bytes = encode_weights(&params);

        let truncated = &bytes[..bytes.len() - 1];
        assert!(matches!(
            decode_weights::<f32>(truncated),
            Err(Error::WeightFile(WeightFileError::Truncated(_)))
        ));

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(
            decode_weights::<f32>(&bad_magic),
            Err(Error::WeightFile(WeightFileError::BadMagic))
        ));

        let mut bad_version = bytes.clone();
        bad_version[4] = 9;
        assert!(matches!(
            decode_weights::<f32>(&bad_version),
            Err(Error::WeightFile(WeightFileError::UnsupportedVersion(9)))
        ));

        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(matches!(
            decode_weights::<f32>(&trailing),
            Err(Error::WeightFile(WeightFileError::TrailingBytes))
        ));

        let mut bad_mode = bytes.clone();
        bad_mode[6] = 7;
        assert!(matches!(
            decode_weights::<f32>(&bad_mode),
            Err(Error::WeightFile(WeightFileError::InvalidField(_)))
        ));

        // corrupt a dim of the first tensor record: name_len(2) + "head.weight"(11) + rank(1)
        let first_dim = 4 + 2 + 1 + 1 + 16 + 2 + 11 + 1;
        let mut bad_dim = bytes.clone();
        bad_dim[first_dim] = 0xAB;
        assert!(matches!(
            decode_weights::<f32>(&bad_dim),
            Err(Error::WeightFile(WeightFileError::DimMismatch(_)))
        ));
    }

    #[test]
    fn loaded_fused_weights_forward_bit_exactly() {
        let params = sample_params(Mode::Fused);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.rvsr");
        save_weights(&params, &path).unwrap();
        let loaded: NetParams<f32> = load_weights(&path).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let clip = Tensor4::<f32>::random_uniform(&mut rng, [1, 30, 6, 6], 0.0, 1.0);
        let a = forward_clip(&clip, &params, Pass::Deploy).unwrap();
        let b = forward_clip(&clip, &loaded, Pass::Deploy).unwrap();
        assert_eq!(a, b);
    }
}
