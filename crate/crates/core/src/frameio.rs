//! Frame decoding and resolution capping.
//!
//! Supported inputs:
//!
//! * a directory of numerically named images (`0.png`, `1.png`, `10.png`,
//!   ...), read in ascending numeric order ("frame-folder video", timestamps
//!   assume 25 fps);
//! * `.y4m` streams (8-bit mono, 4:2:0, 4:2:2 or 4:4:4), decoded in process;
//! * other containers (`.mp4`, `.webm`, `.mkv`, ...) through the `ffmpeg` and
//!   `ffprobe` executables on `PATH`.
//!
//! Every frame is converted to 8-bit RGB. `frame_index` is the decode index,
//! kept as-is when a stride skips frames.

use image::RgbImage;
use sha2::{Digest, Sha256};
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use thiserror::Error;

use crate::raster::area_resize;

pub const FRAME_FOLDER_FPS: f64 = 25.0;
const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg"];

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("cannot read {}: {message}", path.display())]
    Unreadable { path: PathBuf, message: String },
    #[error("{} contains no decodable frames", .0.display())]
    NoFrames(PathBuf),
    #[error("{}: unsupported input ({message})", path.display())]
    Unsupported { path: PathBuf, message: String },
    #[error("stride must be at least 1")]
    InvalidStride,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame_index: u64,
    /// Presentation time in seconds.
    pub timestamp: f64,
    pub image: RgbImage,
}

type FrameIter = Box<dyn Iterator<Item = Result<FrameRecord, DecodeError>> + Send>;

/// Single-consumer stream of decoded frames in presentation order.
pub struct FrameStream {
    first: Option<Result<FrameRecord, DecodeError>>,
    rest: FrameIter,
    stride: u64,
}

impl Iterator for FrameStream {
    type Item = Result<FrameRecord, DecodeError>;

    fn next(&mut self) -> Option<Self::Item> {
        if let Some(first) = self.first.take() {
            return Some(first);
        }
        loop {
            match self.rest.next()? {
                Ok(f) if f.frame_index % self.stride != 0 => continue,
                other => return Some(other),
            }
        }
    }
}

/// Opens `video` and yields every `stride`-th frame.
pub fn decode_frames(video: &Path, stride: usize) -> Result<FrameStream, DecodeError> {
    if stride == 0 {
        return Err(DecodeError::InvalidStride);
    }
    let mut rest: FrameIter = if video.is_dir() {
        Box::new(folder_frames(video)?)
    } else {
        let ext = video
            .extension()
            .map(|e| e.to_string_lossy().to_ascii_lowercase())
            .unwrap_or_default();
        if !video.exists() {
            return Err(DecodeError::Unreadable {
                path: video.to_path_buf(),
                message: "no such file".into(),
            });
        }
        match ext.as_str() {
            "y4m" => Box::new(y4m_frames(video)?),
            _ => Box::new(FfmpegFrames::open(video)?),
        }
    };
    // frame 0 is always kept; an empty stream is an error up front
    let first = match rest.next() {
        None => return Err(DecodeError::NoFrames(video.to_path_buf())),
        Some(Err(e)) => return Err(e),
        Some(Ok(f)) => f,
    };
    Ok(FrameStream {
        first: Some(Ok(first)),
        rest,
        stride: stride as u64,
    })
}

/// Downscales so that `max(width, height) <= max_dim`, preserving aspect
/// ratio (short side rounded, at least 1 px). Never upscales.
pub fn normalize_resolution(frame: FrameRecord, max_dim: u32) -> FrameRecord {
    let (w, h) = frame.image.dimensions();
    let long = w.max(h);
    if long <= max_dim {
        return frame;
    }
    let scale_side = |s: u32| -> u32 {
        let num = s as u64 * max_dim as u64;
        (((2 * num + long as u64) / (2 * long as u64)) as u32).max(1)
    };
    let (nw, nh) = if w >= h {
        (max_dim, scale_side(h))
    } else {
        (scale_side(w), max_dim)
    };
    FrameRecord {
        image: area_resize(&frame.image, nw, nh),
        ..frame
    }
}

/// Frame-folder entries sorted by numeric stem.
pub fn folder_entries(dir: &Path) -> Result<Vec<PathBuf>, DecodeError> {
    let unreadable = |e: std::io::Error| DecodeError::Unreadable {
        path: dir.to_path_buf(),
        message: e.to_string(),
    };
    let mut entries = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(unreadable)? {
        let path = entry.map_err(unreadable)?.path();
        let ext_ok = path
            .extension()
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_string_lossy().to_ascii_lowercase().as_str()));
        let index = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.parse::<u64>().ok());
        match (ext_ok, index) {
            (true, Some(i)) => entries.push((i, path)),
            _ => log::debug!("ignoring {} in frame folder", path.display()),
        }
    }
    entries.sort();
    if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(DecodeError::Unsupported {
            path: dir.to_path_buf(),
            message: format!("duplicate frame number {}", w[0].0),
        });
    }
    Ok(entries.into_iter().map(|(_, p)| p).collect())
}

fn folder_frames(dir: &Path) -> Result<impl Iterator<Item = Result<FrameRecord, DecodeError>> + Send, DecodeError> {
    let entries = folder_entries(dir)?;
    Ok(entries.into_iter().enumerate().map(|(i, path)| {
        let img = image::open(&path).map_err(|e| DecodeError::Unreadable {
            path: path.clone(),
            message: e.to_string(),
        })?;
        Ok(FrameRecord {
            frame_index: i as u64,
            timestamp: i as f64 / FRAME_FOLDER_FPS,
            image: img.to_rgb8(),
        })
    }))
}

fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// BT.601 limited-range YCbCr to RGB.
fn ycbcr_to_rgb(y: u8, cb: u8, cr: u8) -> [u8; 3] {
    let y = 1.164_383 * (y as f64 - 16.0);
    let (cb, cr) = (cb as f64 - 128.0, cr as f64 - 128.0);
    [
        clamp_u8(y + 1.596_027 * cr),
        clamp_u8(y - 0.391_762 * cb - 0.812_968 * cr),
        clamp_u8(y + 2.017_232 * cb),
    ]
}

fn y4m_frames(path: &Path) -> Result<impl Iterator<Item = Result<FrameRecord, DecodeError>> + Send, DecodeError> {
    let file = File::open(path).map_err(|e| DecodeError::Unreadable {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut decoder = y4m::decode(BufReader::new(file)).map_err(|e| DecodeError::Unreadable {
        path: path.to_path_buf(),
        message: format!("{e:?}"),
    })?;
    let (w, h) = (decoder.get_width(), decoder.get_height());
    // chroma subsampling shifts (x, y); None = no chroma planes
    let shift = match decoder.get_colorspace() {
        y4m::Colorspace::Cmono => None,
        y4m::Colorspace::C420 | y4m::Colorspace::C420jpeg | y4m::Colorspace::C420paldv | y4m::Colorspace::C420mpeg2 => {
            Some((1, 1))
        }
        y4m::Colorspace::C422 => Some((1, 0)),
        y4m::Colorspace::C444 => Some((0, 0)),
        other => {
            return Err(DecodeError::Unsupported {
                path: path.to_path_buf(),
                message: format!("colorspace {other:?}"),
            })
        }
    };
    let rate = decoder.get_framerate();
    let seconds_per_frame = if rate.num == 0 {
        0.0
    } else {
        rate.den as f64 / rate.num as f64
    };
    let path = path.to_path_buf();
    let mut index = 0u64;
    let mut done = false;
    Ok(std::iter::from_fn(move || {
        if done {
            return None;
        }
        let frame = match decoder.read_frame() {
            Ok(f) => f,
            Err(y4m::Error::EOF) => {
                done = true;
                return None;
            }
            Err(e) => {
                done = true;
                return Some(Err(DecodeError::Unreadable {
                    path: path.clone(),
                    message: format!("frame {index}: {e:?}"),
                }));
            }
        };
        let (yp, up, vp) = (frame.get_y_plane(), frame.get_u_plane(), frame.get_v_plane());
        let image = RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let (x, y) = (x as usize, y as usize);
            let luma = yp[y * w + x];
            let rgb = match shift {
                None => ycbcr_to_rgb(luma, 128, 128),
                Some((sx, sy)) => {
                    let cw = (w + (1 << sx) - 1) >> sx;
                    let ci = (y >> sy) * cw + (x >> sx);
                    ycbcr_to_rgb(luma, up[ci], vp[ci])
                }
            };
            image::Rgb(rgb)
        });
        let record = FrameRecord {
            frame_index: index,
            timestamp: index as f64 * seconds_per_frame,
            image,
        };
        index += 1;
        Some(Ok(record))
    }))
}

/// Raw RGB frames piped from an `ffmpeg` child process.
struct FfmpegFrames {
    path: PathBuf,
    child: Child,
    width: u32,
    height: u32,
    timestamps: Vec<f64>,
    index: u64,
    done: bool,
}

fn tool_error(path: &Path, tool: &str, e: std::io::Error) -> DecodeError {
    if e.kind() == std::io::ErrorKind::NotFound {
        DecodeError::Unsupported {
            path: path.to_path_buf(),
            message: format!("container decoding requires `{tool}` on PATH"),
        }
    } else {
        DecodeError::Unreadable {
            path: path.to_path_buf(),
            message: format!("{tool}: {e}"),
        }
    }
}

impl FfmpegFrames {
    fn open(path: &Path) -> Result<Self, DecodeError> {
        let probe = Command::new("ffprobe")
            .args([
                "-v",
                "error",
                "-select_streams",
                "v:0",
                "-show_entries",
                "stream=width,height",
                "-of",
                "csv=p=0",
            ])
            .arg(path)
            .output()
            .map_err(|e| tool_error(path, "ffprobe", e))?;
        if !probe.status.success() {
            return Err(DecodeError::Unreadable {
                path: path.to_path_buf(),
                message: String::from_utf8_lossy(&probe.stderr).trim().to_string(),
            });
        }
        let dims = String::from_utf8_lossy(&probe.stdout);
        let mut parts = dims.trim().split(',').map(|s| s.trim().parse::<u32>());
        let (width, height) = match (parts.next(), parts.next()) {
            (Some(Ok(w)), Some(Ok(h))) if w > 0 && h > 0 => (w, h),
            _ => {
                return Err(DecodeError::Unsupported {
                    path: path.to_path_buf(),
                    message: "no video stream".into(),
                })
            }
        };
        let times = Command::new("ffprobe")
            .args([
                "-v",
                "error",
                "-select_streams",
                "v:0",
                "-show_entries",
                "frame=best_effort_timestamp_time",
                "-of",
                "csv=p=0",
            ])
            .arg(path)
            .output()
            .map_err(|e| tool_error(path, "ffprobe", e))?;
        let timestamps = String::from_utf8_lossy(&times.stdout)
            .lines()
            .map(|l| l.trim().trim_end_matches(',').parse::<f64>().unwrap_or(f64::NAN))
            .collect();
        let child = Command::new("ffmpeg")
            .args(["-v", "error", "-noautorotate", "-i"])
            .arg(path)
            .args([
                "-map",
                "0:v:0",
                "-fps_mode",
                "passthrough",
                "-f",
                "rawvideo",
                "-pix_fmt",
                "rgb24",
                "pipe:1",
            ])
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| tool_error(path, "ffmpeg", e))?;
        Ok(FfmpegFrames {
            path: path.to_path_buf(),
            child,
            width,
            height,
            timestamps,
            index: 0,
            done: false,
        })
    }
}

impl Iterator for FfmpegFrames {
    type Item = Result<FrameRecord, DecodeError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let mut buf = vec![0u8; self.width as usize * self.height as usize * 3];
        let stdout = self.child.stdout.as_mut()?;
        match stdout.read_exact(&mut buf) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
                self.done = true;
                let _ = self.child.wait();
                return None;
            }
            Err(e) => {
                self.done = true;
                return Some(Err(DecodeError::Unreadable {
                    path: self.path.clone(),
                    message: e.to_string(),
                }));
            }
        }
        let image = RgbImage::from_raw(self.width, self.height, buf).expect("buffer sized to frame");
        let i = self.index;
        self.index += 1;
        let timestamp = self
            .timestamps
            .get(i as usize)
            .copied()
            .filter(|t| t.is_finite() && *t >= 0.0)
            .unwrap_or(0.0);
        Some(Ok(FrameRecord {
            frame_index: i,
            timestamp,
            image,
        }))
    }
}

impl Drop for FfmpegFrames {
    fn drop(&mut self) {
        if !self.done {
            let _ = self.child.kill();
            let _ = self.child.wait();
        }
    }
}

/// SHA-256 over the video's bytes; for frame folders, over each frame's
/// name and bytes in frame order.
pub fn content_hash(video: &Path) -> Result<[u8; 32], DecodeError> {
    let unreadable = |p: &Path, e: std::io::Error| DecodeError::Unreadable {
        path: p.to_path_buf(),
        message: e.to_string(),
    };
    let mut hasher = Sha256::new();
    let feed = |p: &Path, h: &mut Sha256| -> Result<(), DecodeError> {
        let mut f = File::open(p).map_err(|e| unreadable(p, e))?;
        let mut buf = vec![0u8; 1 << 16];
        loop {
            match f.read(&mut buf).map_err(|e| unreadable(p, e))? {
                0 => return Ok(()),
                n => h.update(&buf[..n]),
            }
        }
    };
    if video.is_dir() {
        for p in folder_entries(video)? {
            let name = p
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            hasher.update((name.len() as u64).to_le_bytes());
            hasher.update(name.as_bytes());
            let len = std::fs::metadata(&p).map_err(|e| unreadable(&p, e))?.len();
            hasher.update(len.to_le_bytes());
            feed(&p, &mut hasher)?;
        }
    } else {
        feed(video, &mut hasher)?;
    }
    Ok(hasher.finalize().into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn record(w: u32, h: u32) -> FrameRecord {
        FrameRecord {
            frame_index: 0,
            timestamp: 0.0,
            image: RgbImage::from_fn(w, h, |x, y| Rgb([(x % 256) as u8, (y % 256) as u8, 0])),
        }
    }

    fn write_folder(dir: &Path, n: usize) {
        for i in 0..n {
            let img = RgbImage::from_pixel(6, 4, Rgb([i as u8 * 10, 0, 0]));
            img.save(dir.join(format!("{i}.png"))).unwrap();
        }
    }

    #[test]
    fn landscape_frame_is_capped() {
        let out = normalize_resolution(record(1280, 720), 720);
        assert_eq!(out.image.dimensions(), (720, 405));
    }

    #[test]
    fn small_and_boundary_frames_are_untouched() {
        for (w, h) in [(640, 480), (720, 720)] {
            let f = record(w, h);
            assert_eq!(normalize_resolution(f.clone(), 720), f);
        }
    }

    #[test]
    fn tiny_short_side_keeps_one_pixel() {
        assert_eq!(normalize_resolution(record(5000, 2), 720).image.dimensions(), (720, 1));
    }

    #[test]
    fn folder_stride_and_numeric_order() {
        let dir = tempfile::tempdir().unwrap();
        write_folder(dir.path(), 10);
        std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
        let frames: Vec<_> = decode_frames(dir.path(), 1).unwrap().map(|f| f.unwrap()).collect();
        assert_eq!(
            frames.iter().map(|f| f.frame_index).collect::<Vec<_>>(),
            (0..10).collect::<Vec<_>>()
        );
        // "10.png" would sort before "2.png" lexically; numeric order puts frame 2 third
        assert_eq!(frames[2].image.get_pixel(0, 0)[0], 20);
        assert!((frames[5].timestamp - 0.2).abs() < 1e-12);
        let strided: Vec<u64> = decode_frames(dir.path(), 3)
            .unwrap()
            .map(|f| f.unwrap().frame_index)
            .collect();
        assert_eq!(strided, vec![0, 3, 6, 9]);
    }

    #[test]
    fn empty_folder_and_bad_inputs() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(decode_frames(dir.path(), 1), Err(DecodeError::NoFrames(_))));
        assert!(matches!(decode_frames(dir.path(), 0), Err(DecodeError::InvalidStride)));
        let corrupt = dir.path().join("0.png");
        std::fs::write(&corrupt, b"not a png").unwrap();
        let err = decode_frames(dir.path(), 1).err().unwrap();
        assert!(err.to_string().contains("0.png"), "{err}");
        let missing = dir.path().join("missing.mp4");
        assert!(matches!(
            decode_frames(&missing, 1),
            Err(DecodeError::Unreadable { .. })
        ));
    }

    #[test]
    fn corrupt_y4m_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("broken.y4m");
        std::fs::write(&p, b"garbage").unwrap();
        let err = decode_frames(&p, 1).err().unwrap();
        assert!(err.to_string().contains("broken.y4m"), "{err}");
    }

    #[test]
    fn y4m_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("clip.y4m");
        let (w, h) = (4usize, 2usize);
        let mut buf = Vec::new();
        {
            let mut enc = y4m::encode(w, h, y4m::Ratio::new(25, 1))
                .with_colorspace(y4m::Colorspace::C420jpeg)
                .write_header(&mut buf)
                .unwrap();
            for i in 0..5u8 {
                let yp = vec![16 + 40 * i; w * h];
                let cp = vec![128u8; (w / 2) * (h / 2)];
                enc.write_frame(&y4m::Frame::new([&yp, &cp, &cp], None)).unwrap();
            }
        }
        std::fs::write(&p, buf).unwrap();
        let frames: Vec<_> = decode_frames(&p, 2).unwrap().map(|f| f.unwrap()).collect();
        assert_eq!(frames.iter().map(|f| f.frame_index).collect::<Vec<_>>(), vec![0, 2, 4]);
        assert_eq!(frames[0].image.dimensions(), (4, 2));
        assert_eq!(*frames[0].image.get_pixel(0, 0), Rgb([0, 0, 0]));
        // Y = 96 -> 1.164383 * 80 = 93.15
        assert_eq!(*frames[1].image.get_pixel(3, 1), Rgb([93, 93, 93]));
        assert!((frames[2].timestamp - 0.16).abs() < 1e-12);
    }

    #[test]
    fn content_hash_tracks_frames() {
        let dir = tempfile::tempdir().unwrap();
        write_folder(dir.path(), 3);
        let a = content_hash(dir.path()).unwrap();
        assert_eq!(a, content_hash(dir.path()).unwrap());
        RgbImage::from_pixel(6, 4, Rgb([1, 2, 3]))
            .save(dir.path().join("1.png"))
            .unwrap();
        assert_ne!(a, content_hash(dir.path()).unwrap());
    }
}
