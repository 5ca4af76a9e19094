//! Face-sketch rendering: a fixed landmark head posed by (head, eye)
//! rotations, projected with a weak-perspective camera and rasterized into
//! a four-level grayscale image.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::SketchError;
use crate::geometry::{yawpitch_to_vec, Convention, Mat3, YawPitch};

pub const BACKGROUND: u8 = 0;
pub const PUPIL: u8 = 64;
pub const EYE_REGION: u8 = 128;
pub const IRIS: u8 = 128;
pub const LINE: u8 = 255;

pub const PALETTE: [u8; 4] = [BACKGROUND, PUPIL, EYE_REGION, LINE];

type P3 = [f64; 3];

/// Landmark head in a canonical frame (+x subject-left, +y up, +z toward
/// the camera). Index 0 of the paired fields is the subject's right side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalHead {
    pub contour: Vec<P3>,
    pub brows: [Vec<P3>; 2],
    pub nose: Vec<P3>,
    pub mouth: Vec<P3>,
    pub eyelids: [Vec<P3>; 2],
    pub eye_centers: [P3; 2],
    pub eyeball_radius: f64,
    pub iris_deg: f64,
    pub pupil_deg: f64,
}

const COUNTS: [(&str, usize); 5] = [("contour", 17), ("brow", 5), ("nose", 9), ("mouth", 20), ("eyelid", 6)];

/// Bridge points at the start of the nose group; the rest is the base.
const NOSE_BRIDGE: usize = 4;
/// Outer lip loop at the start of the mouth group; the rest is the inner loop.
const MOUTH_OUTER: usize = 12;

fn mirror(p: P3) -> P3 {
    [-p[0], p[1], p[2]]
}

fn ellipse_loop(cx: f64, cy: f64, z: f64, a: f64, b: f64, n: usize, phase: f64) -> Vec<P3> {
    (0..n)
        .map(|i| {
            let t = phase + std::f64::consts::TAU * i as f64 / n as f64;
            [cx + a * t.cos(), cy + b * t.sin(), z + 0.04 * (1.0 - (t.cos()).abs())]
        })
        .collect()
}

impl CanonicalHead {
    /// The embedded asset.
    pub fn default_asset() -> Self {
        let contour = (0..17)
            .map(|i| {
                let a = (-90.0 + 180.0 * i as f64 / 16.0_f64).to_radians();
                [0.95 * a.sin(), 0.15 - 1.25 * a.cos(), -0.1 + 0.5 * a.cos()]
            })
            .collect();
        let brow_r: Vec<P3> = (0..5)
            .map(|i| {
                let t = i as f64 / 4.0;
                let x = -0.68 + 0.5 * t;
                [x, 0.42 + 0.08 * (std::f64::consts::PI * t).sin(), 0.4 + 0.08 * t]
            })
            .collect();
        let mut nose: Vec<P3> = (0..NOSE_BRIDGE)
            .map(|i| {
                let t = i as f64 / 3.0;
                [0.0, 0.3 - 0.55 * t, 0.5 + 0.38 * t]
            })
            .collect();
        nose.extend([-0.17, -0.085, 0.0, 0.085, 0.17].iter().map(|&x: &f64| [x, -0.34 + 0.25 * x * x, 0.8 - 0.6 * x.abs()]));
        // both loops start at the subject's left corner and run the same way
        // around, so the mirror image is a permutation of the group
        let mut mouth = ellipse_loop(0.0, -0.68, 0.58, 0.34, 0.12, MOUTH_OUTER, 0.0);
        mouth.extend(ellipse_loop(0.0, -0.68, 0.6, 0.22, 0.04, 20 - MOUTH_OUTER, 0.0));
        let center_r: P3 = [-0.4, 0.15, 0.2];
        let radius = 0.2;
        let on_sphere = |c: P3, dx: f64, dy: f64| -> P3 {
            let dz = (radius * radius - dx * dx - dy * dy).max(0.0).sqrt();
            [c[0] + dx, c[1] + dy, c[2] + dz + 0.01]
        };
        // outer corner, upper lid, inner corner, lower lid
        let lid_r = vec![
            on_sphere(center_r, -0.17, 0.0),
            on_sphere(center_r, -0.07, 0.085),
            on_sphere(center_r, 0.07, 0.085),
            on_sphere(center_r, 0.17, 0.0),
            on_sphere(center_r, 0.07, -0.07),
            on_sphere(center_r, -0.07, -0.07),
        ];
        Self {
            contour,
            brows: [brow_r.clone(), brow_r.iter().rev().map(|&p| mirror(p)).collect()],
            nose,
            mouth,
            eyelids: [lid_r.clone(), lid_r.iter().map(|&p| mirror(p)).collect()],
            eye_centers: [center_r, mirror(center_r)],
            eyeball_radius: radius,
            iris_deg: 30.0,
            pupil_deg: 12.0,
        }
    }

    pub fn from_path(path: &Path) -> Result<Self, SketchError> {
        let text = fs::read_to_string(path).map_err(|source| SketchError::Io { path: path.to_path_buf(), source })?;
        let head: Self = serde_json::from_str(&text).map_err(|e| SketchError::Asset(e.to_string()))?;
        head.validate()?;
        Ok(head)
    }

    pub fn validate(&self) -> Result<(), SketchError> {
        let groups: [(&str, &[P3]); 7] = [
            ("contour", &self.contour),
            ("brow", &self.brows[0]),
            ("brow", &self.brows[1]),
            ("nose", &self.nose),
            ("mouth", &self.mouth),
            ("eyelid", &self.eyelids[0]),
            ("eyelid", &self.eyelids[1]),
        ];
        for (name, pts) in groups {
            let want = COUNTS.iter().find(|(n, _)| *n == name).map(|c| c.1).unwrap_or(0);
            if pts.len() != want {
                return Err(SketchError::Asset(format!("{name} has {} points, expected {want}", pts.len())));
            }
            if pts.iter().flatten().any(|v| !v.is_finite()) {
                return Err(SketchError::Asset(format!("{name} has a non-finite coordinate")));
            }
        }
        if !(self.eyeball_radius > 0.0) {
            return Err(SketchError::Asset("eyeball radius must be positive".into()));
        }
        if !(self.pupil_deg > 0.0 && self.pupil_deg < self.iris_deg && self.iris_deg < 90.0) {
            return Err(SketchError::Asset("need 0 < pupil angle < iris angle < 90".into()));
        }
        let sym = |a: &[P3], b: &[P3]| {
            a.iter().all(|p| b.iter().any(|q| dist(mirror(*p), *q) <= 1e-9))
                && b.iter().all(|p| a.iter().any(|q| dist(mirror(*p), *q) <= 1e-9))
        };
        if !sym(&self.brows[0], &self.brows[1])
            || !sym(&self.eyelids[0], &self.eyelids[1])
            || dist(mirror(self.eye_centers[0]), self.eye_centers[1]) > 1e-9
        {
            return Err(SketchError::Asset("left and right groups are not mirror images".into()));
        }
        for g in [&self.contour, &self.nose, &self.mouth] {
            if !sym(g, g) {
                return Err(SketchError::Asset("midline group is not mirror symmetric".into()));
            }
        }
        for k in 0..2 {
            let poly: Vec<(f64, f64)> = self.eyelids[k].iter().map(|p| (p[0], p[1])).collect();
            let c = self.eye_centers[k];
            if !point_in_polygon(c[0], c[1], &poly) {
                return Err(SketchError::Asset("eyelid loop does not enclose its eyeball center".into()));
            }
        }
        Ok(())
    }
}

fn dist(a: P3, b: P3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraSpec {
    pub scale: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for CameraSpec {
    fn default() -> Self {
        Self { scale: 85.0, cx: 128.0, cy: 128.0, width: 256, height: 256 }
    }
}

impl CameraSpec {
    pub fn validate(&self) -> Result<(), SketchError> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(SketchError::Camera(format!("scale {} must be positive", self.scale)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(SketchError::Camera("image size must be non-zero".into()));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(SketchError::Camera("principal point lies outside the image".into()));
        }
        Ok(())
    }

    pub fn project(&self, p: P3) -> (f64, f64) {
        (self.cx + self.scale * p[0], self.cy - self.scale * p[1])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosedEye {
    pub center: P3,
    /// Unit viewing direction of the eyeball in the camera frame.
    pub direction: P3,
    pub iris_center: P3,
    pub iris: Vec<P3>,
    pub pupil: Vec<P3>,
}

/// Landmarks after rotation, in the same grouping as [`CanonicalHead`].
#[derive(Debug, Clone, PartialEq)]
pub struct PosedHead {
    pub contour: Vec<P3>,
    pub brows: [Vec<P3>; 2],
    pub nose: Vec<P3>,
    pub mouth: Vec<P3>,
    pub eyelids: [Vec<P3>; 2],
    pub eyes: [PosedEye; 2],
}

const RING_POINTS: usize = 48;

fn cross(a: P3, b: P3) -> P3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn normalize(a: P3) -> P3 {
    let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Circle of angular radius `deg` around `dir` on the sphere.
fn sphere_ring(center: P3, radius: f64, dir: P3, deg: f64) -> Vec<P3> {
    let helper = if dir[1].abs() < 0.9 { [0.0, 1.0, 0.0] } else { [1.0, 0.0, 0.0] };
    let e1 = normalize(cross(helper, dir));
    let e2 = cross(dir, e1);
    let (s, c) = deg.to_radians().sin_cos();
    (0..RING_POINTS)
        .map(|i| {
            let (sp, cp) = (std::f64::consts::TAU * i as f64 / RING_POINTS as f64).sin_cos();
            std::array::from_fn(|k| center[k] + radius * (c * dir[k] + s * (cp * e1[k] + sp * e2[k])))
        })
        .collect()
}

pub fn pose_canonical_head(head: YawPitch, eye: YawPitch, conv: Convention, asset: &CanonicalHead) -> PosedHead {
    let r: Mat3 = conv.rotation(head);
    let rot = |g: &[P3]| -> Vec<P3> { g.iter().map(|&p| r.apply(p)).collect() };
    let dir = r.apply(yawpitch_to_vec(eye).as_array());
    let eyes = std::array::from_fn(|k| {
        let center = r.apply(asset.eye_centers[k]);
        let rad = asset.eyeball_radius;
        PosedEye {
            center,
            direction: dir,
            iris_center: std::array::from_fn(|i| center[i] + rad * dir[i]),
            iris: sphere_ring(center, rad, dir, asset.iris_deg),
            pupil: sphere_ring(center, rad, dir, asset.pupil_deg),
        }
    });
    PosedHead {
        contour: rot(&asset.contour),
        brows: [rot(&asset.brows[0]), rot(&asset.brows[1])],
        nose: rot(&asset.nose),
        mouth: rot(&asset.mouth),
        eyelids: [rot(&asset.eyelids[0]), rot(&asset.eyelids[1])],
        eyes,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SketchImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl SketchImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, pixels: vec![BACKGROUND; width as usize * height as usize] }
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[(y * self.width + x) as usize]
    }

    pub fn mirrored(&self) -> Self {
        let mut out = self.clone();
        let w = self.width as usize;
        for row in out.pixels.chunks_mut(w) {
            row.reverse();
        }
        out
    }
}

/// What each pixel depicts. Iris and eye region share an intensity, so
/// tests that need to tell them apart use this map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Label {
    #[default]
    Background,
    EyeRegion,
    Iris,
    Pupil,
    Line,
}

impl Label {
    pub fn value(&self) -> u8 {
        match self {
            Label::Background => BACKGROUND,
            Label::EyeRegion => EYE_REGION,
            Label::Iris => IRIS,
            Label::Pupil => PUPIL,
            Label::Line => LINE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SketchRender {
    pub image: SketchImage,
    pub labels: Vec<Label>,
    /// Eyelid polygons in pixel coordinates, subject-right first.
    pub eyelids: [Vec<(f64, f64)>; 2],
}

/// Even-odd test.
pub fn point_in_polygon(x: f64, y: f64, poly: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n.wrapping_sub(1);
    for i in 0..n {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

struct Canvas {
    w: i64,
    h: i64,
    labels: Vec<Label>,
}

impl Canvas {
    fn set(&mut self, x: i64, y: i64, l: Label) {
        if x >= 0 && y >= 0 && x < self.w && y < self.h {
            self.labels[(y * self.w + x) as usize] = l;
        }
    }

    /// Fills pixels whose centers lie inside every polygon in `polys`.
    fn fill(&mut self, polys: &[&[(f64, f64)]], l: Label) {
        let Some(first) = polys.first() else { return };
        let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for &(x, y) in first.iter() {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        let xs = (x0.floor() as i64).max(0)..=(x1.ceil() as i64).min(self.w - 1);
        for py in (y0.floor() as i64).max(0)..=(y1.ceil() as i64).min(self.h - 1) {
            for px in xs.clone() {
                let (cx, cy) = (px as f64 + 0.5, py as f64 + 0.5);
                if polys.iter().all(|p| point_in_polygon(cx, cy, p)) {
                    self.set(px, py, l);
                }
            }
        }
    }

    fn line(&mut self, a: (f64, f64), b: (f64, f64)) {
        let (mut x0, mut y0) = (a.0.floor() as i64, a.1.floor() as i64);
        let (x1, y1) = (b.0.floor() as i64, b.1.floor() as i64);
        let dx = (x1 - x0).abs();
        let dy = -(y1 - y0).abs();
        let sx = if x0 < x1 { 1 } else { -1 };
        let sy = if y0 < y1 { 1 } else { -1 };
        let mut err = dx + dy;
        loop {
            self.set(x0, y0, Label::Line);
            if x0 == x1 && y0 == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x0 += sx;
            }
            if e2 <= dx {
                err += dx;
                y0 += sy;
            }
        }
    }

    fn polyline(&mut self, pts: &[(f64, f64)], closed: bool) {
        for w in pts.windows(2) {
            self.line(w[0], w[1]);
        }
        if closed && pts.len() > 2 {
            self.line(pts[pts.len() - 1], pts[0]);
        }
    }
}

pub fn render_sketch(
    head: YawPitch,
    eye: YawPitch,
    conv: Convention,
    asset: &CanonicalHead,
    camera: &CameraSpec,
) -> Result<SketchImage, SketchError> {
    render_sketch_labeled(head, eye, conv, asset, camera).map(|r| r.image)
}

pub fn render_sketch_labeled(
    head: YawPitch,
    eye: YawPitch,
    conv: Convention,
    asset: &CanonicalHead,
    camera: &CameraSpec,
) -> Result<SketchRender, SketchError> {
    camera.validate()?;
    let posed = pose_canonical_head(head, eye, conv, asset);
    let proj = |g: &[P3]| -> Vec<(f64, f64)> { g.iter().map(|&p| camera.project(p)).collect() };

    let contour = proj(&posed.contour);
    let brows = [proj(&posed.brows[0]), proj(&posed.brows[1])];
    let nose = proj(&posed.nose);
    let mouth = proj(&posed.mouth);
    let eyelids = [proj(&posed.eyelids[0]), proj(&posed.eyelids[1])];
    let irises = [proj(&posed.eyes[0].iris), proj(&posed.eyes[1].iris)];
    let pupils = [proj(&posed.eyes[0].pupil), proj(&posed.eyes[1].pupil)];

    let (w, h) = (camera.width as f64, camera.height as f64);
    let all = contour.iter().chain(brows.iter().flatten()).chain(&nose).chain(&mouth).chain(eyelids.iter().flatten());
    for &(u, v) in all.chain(irises.iter().flatten()) {
        if !(u >= 0.0 && v >= 0.0 && u < w && v < h) {
            return Err(SketchError::OutOfFrame { width: camera.width, height: camera.height, u, v });
        }
    }

    let mut c = Canvas {
        w: camera.width as i64,
        h: camera.height as i64,
        labels: vec![Label::Background; camera.width as usize * camera.height as usize],
    };
    for lid in &eyelids {
        c.fill(&[lid], Label::EyeRegion);
    }
    // an eyeball turned away from the camera shows no iris
    let visible = posed.eyes[0].direction[2] > 0.0;
    if visible {
        for k in 0..2 {
            c.fill(&[&irises[k], &eyelids[k]], Label::Iris);
        }
        for k in 0..2 {
            c.fill(&[&pupils[k], &eyelids[k]], Label::Pupil);
        }
    }
    c.polyline(&contour, false);
    for b in &brows {
        c.polyline(b, false);
    }
    c.polyline(&nose[..NOSE_BRIDGE], false);
    c.polyline(&nose[NOSE_BRIDGE..], false);
    c.polyline(&mouth[..MOUTH_OUTER], true);
    c.polyline(&mouth[MOUTH_OUTER..], true);
    for lid in &eyelids {
        c.polyline(lid, true);
    }

    let image = SketchImage {
        width: camera.width,
        height: camera.height,
        pixels: c.labels.iter().map(Label::value).collect(),
    };
    Ok(SketchRender { image, labels: c.labels, eyelids })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Pgm,
    Png,
}

impl ImageFormat {
    pub fn extension(&self) -> &'static str {
        match self {
            ImageFormat::Pgm => "pgm",
            ImageFormat::Png => "png",
        }
    }
}

impl std::str::FromStr for ImageFormat {
    type Err = SketchError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pgm" => Ok(ImageFormat::Pgm),
            "png" => Ok(ImageFormat::Png),
            _ => Err(SketchError::Format(format!("unknown image format `{s}`"))),
        }
    }
}

pub fn sketch_file_name(sample_id: u32, format: ImageFormat) -> String {
    format!("sketch_{sample_id}.{}", format.extension())
}

pub fn encode_bytes(img: &SketchImage, format: ImageFormat) -> Result<Vec<u8>, SketchError> {
    if img.width == 0 || img.height == 0 {
        return Err(SketchError::Format("image has zero size".into()));
    }
    if img.pixels.len() != img.width as usize * img.height as usize {
        return Err(SketchError::Format("pixel buffer does not match image size".into()));
    }
    match format {
        ImageFormat::Pgm => {
            let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
            out.extend_from_slice(&img.pixels);
            Ok(out)
        }
        ImageFormat::Png => {
            let mut out = Vec::new();
            {
                let mut enc = png::Encoder::new(&mut out, img.width, img.height);
                enc.set_color(png::ColorType::Grayscale);
                enc.set_depth(png::BitDepth::Eight);
                let mut w = enc.write_header().map_err(|e| SketchError::Format(e.to_string()))?;
                w.write_image_data(&img.pixels).map_err(|e| SketchError::Format(e.to_string()))?;
            }
            Ok(out)
        }
    }
}

/// Writes the image and returns the number of bytes written.
pub fn encode_image(img: &SketchImage, format: ImageFormat, path: &Path) -> Result<usize, SketchError> {
    let bytes = encode_bytes(img, format)?;
    let io = |source| SketchError::Io { path: path.to_path_buf(), source };
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(&bytes).map_err(io)?;
    Ok(bytes.len())
}

pub fn decode_bytes(bytes: &[u8]) -> Result<SketchImage, SketchError> {
    if bytes.starts_with(b"P5") {
        decode_pgm(bytes)
    } else if bytes.starts_with(b"\x89PNG") {
        let dec = png::Decoder::new(std::io::Cursor::new(bytes));
        let mut reader = dec.read_info().map_err(|e| SketchError::Format(e.to_string()))?;
        let size = reader.output_buffer_size().ok_or_else(|| SketchError::Format("image too large".into()))?;
        let mut buf = vec![0; size];
        let info = reader.next_frame(&mut buf).map_err(|e| SketchError::Format(e.to_string()))?;
        if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
            return Err(SketchError::Format("expected 8-bit grayscale".into()));
        }
        buf.truncate(info.buffer_size());
        Ok(SketchImage { width: info.width, height: info.height, pixels: buf })
    } else {
        Err(SketchError::Format("unrecognized image signature".into()))
    }
}

fn decode_pgm(bytes: &[u8]) -> Result<SketchImage, SketchError> {
    let bad = |m: &str| SketchError::Format(format!("pgm: {m}"));
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for f in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(bad("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad header number"))?;
    }
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(bad("missing separator after header"));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    if width == 0 || height == 0 {
        return Err(bad("zero-sized image"));
    }
    let n = width as usize * height as usize;
    let payload = &bytes[pos..];
    if payload.len() != n {
        return Err(bad(&format!("payload has {} bytes, expected {n}", payload.len())));
    }
    Ok(SketchImage { width, height, pixels: payload.to_vec() })
}

pub fn decode_image(path: &Path) -> Result<SketchImage, SketchError> {
    let bytes = fs::read(path).map_err(|source| SketchError::Io { path: path.to_path_buf(), source })?;
    decode_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv() -> Convention {
        Convention::default()
    }

    #[test]
    fn asset_is_valid() {
        CanonicalHead::default_asset().validate().unwrap();
    }

    #[test]
    fn identity_pose_keeps_points() {
        let a = CanonicalHead::default_asset();
        let p = pose_canonical_head(YawPitch::ZERO, YawPitch::ZERO, conv(), &a);
        assert_eq!(p.contour, a.contour);
        assert_eq!(p.mouth, a.mouth);
        for k in 0..2 {
            let c = a.eye_centers[k];
            let ic = p.eyes[k].iris_center;
            assert!((ic[0] - c[0]).abs() < 1e-15 && (ic[1] - c[1]).abs() < 1e-15);
            assert!((ic[2] - (c[2] + a.eyeball_radius)).abs() < 1e-15);
        }
    }

    #[test]
    fn eye_yaw_moves_iris_left() {
        let a = CanonicalHead::default_asset();
        let p = pose_canonical_head(YawPitch::ZERO, YawPitch::new(50.0, 0.0), conv(), &a);
        let dx = p.eyes[1].iris_center[0] - a.eye_centers[1][0];
        assert!((dx - a.eyeball_radius * 50f64.to_radians().sin()).abs() < 1e-12);
    }

    #[test]
    fn centered_eye_follows_head() {
        let a = CanonicalHead::default_asset();
        let p = pose_canonical_head(YawPitch::new(30.0, 0.0), YawPitch::ZERO, conv(), &a);
        let v = yawpitch_to_vec(YawPitch::new(30.0, 0.0)).as_array();
        for i in 0..3 {
            assert!((p.eyes[0].direction[i] - v[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn frontal_render_has_pupils_inside_lids() {
        let r = render_sketch_labeled(YawPitch::ZERO, YawPitch::ZERO, conv(), &CanonicalHead::default_asset(), &CameraSpec::default()).unwrap();
        for k in 0..2 {
            let n = (0..256 * 256)
                .filter(|&i| r.labels[i] == Label::Pupil)
                .filter(|&i| point_in_polygon((i % 256) as f64 + 0.5, (i / 256) as f64 + 0.5, &r.eyelids[k]))
                .count();
            assert!(n > 0);
        }
    }

    #[test]
    fn scale_too_large_is_out_of_frame() {
        let cam = CameraSpec { scale: 400.0, ..Default::default() };
        let e = render_sketch(YawPitch::ZERO, YawPitch::ZERO, conv(), &CanonicalHead::default_asset(), &cam);
        assert!(matches!(e, Err(SketchError::OutOfFrame { .. })));
    }

    #[test]
    fn pgm_layout() {
        let img = SketchImage::new(256, 256);
        let b = encode_bytes(&img, ImageFormat::Pgm).unwrap();
        assert!(b.starts_with(b"P5\n256 256\n255\n"));
        assert_eq!(b.len(), 15 + 65_536);
        assert_eq!(decode_bytes(&b).unwrap(), img);
        assert!(encode_bytes(&SketchImage::new(0, 0), ImageFormat::Png).is_err());
    }

    #[test]
    fn png_round_trip() {
        let img = render_sketch(YawPitch::new(20.0, -10.0), YawPitch::new(-15.0, 5.0), conv(), &CanonicalHead::default_asset(), &CameraSpec::default()).unwrap();
        let b = encode_bytes(&img, ImageFormat::Png).unwrap();
        assert_eq!(decode_bytes(&b).unwrap(), img);
    }
}
