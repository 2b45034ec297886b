//! On-disk formats. All binary formats are little-endian.
//!
//! | file               | magic      | layout                                                    |
//! |--------------------|------------|-----------------------------------------------------------|
//! | feature volume     | `EPTV1\0`  | 7×u32 (T,H,W,C,video_h,video_w,stream), 2 strings, f32s    |
//! | descriptors        | `EPTD1\0`  | u32 count,d,pooling,direction; rows (u32 id, u32 frame, d f32) |
//! | encoding model     | `EPTM1\0`  | PCA (u32 d, u32 D, f64s) then GMM (u32 K, u32 D, f64s)     |
//! | per-frame FVs      | none       | u32 T, u32 dim, T×dim f32                                 |
//! | video vector       | `EPTF1\0`  | u32 dim, dim f32                                          |
//!
//! Strings are a u32 byte length followed by UTF-8. Trajectory and label
//! files are line-oriented text.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::encode::{EncodingModel, GmmModel, PcaModel};
use crate::error::{EptError, Result};
use crate::types::{
    DescriptorRow, DescriptorSet, Direction, FeatureMapVolume, LabeledVideoTable, Point,
    PoolingKind, Split, Stream, Trajectory, VolumeGeometry,
};
use crate::videopool::FrameFvSequence;

pub const VOLUME_MAGIC: &[u8; 6] = b"EPTV1\0";
pub const DESCRIPTOR_MAGIC: &[u8; 6] = b"EPTD1\0";
pub const MODEL_MAGIC: &[u8; 6] = b"EPTM1\0";
pub const VIDEO_VECTOR_MAGIC: &[u8; 6] = b"EPTF1\0";
pub const TRAJECTORY_HEADER: &str = "#EPT-TRAJ v1";
pub const LABELS_HEADER: &str = "#EPT-LABELS v1";

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn format_err(&self, message: impl Into<String>) -> EptError {
        EptError::Format {
            offset: self.pos as u64,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.format_err(format!("unexpected end of file reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, magic: &[u8; 6]) -> Result<()> {
        let got = self.take(6, "magic")?;
        if got != magic {
            self.pos -= 6;
            return Err(self.format_err(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(())
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let start = self.pos;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| EptError::Format {
            offset: start as u64,
            message: format!("{what} is not valid UTF-8"),
        })
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    /// Reads exactly `count` f32 values; a short or long payload is a size mismatch.
    fn f32_payload(&mut self, count: usize) -> Result<Vec<f32>> {
        if self.remaining() != count * 4 {
            return Err(EptError::SizeMismatch {
                expected: count,
                found: self.remaining() / 4,
            });
        }
        let out = self.buf[self.pos..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        self.pos = self.buf.len();
        Ok(out)
    }

    fn f64s(&mut self, count: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(count * 8, what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(self.format_err(format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_f32s(out: &mut Vec<u8>, vals: impl IntoIterator<Item = f32>) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_f64s(out: &mut Vec<u8>, vals: impl IntoIterator<Item = f64>) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| EptError::validation(format!("{what} {v} does not fit in u32")))
}

// ---- feature volumes ----

pub fn encode_volume(v: &FeatureMapVolume) -> Result<Vec<u8>> {
    let g = v.geometry();
    let mut out = Vec::with_capacity(6 + 28 + 8 + v.data().len() * 4);
    out.extend_from_slice(VOLUME_MAGIC);
    for (val, name) in [
        (g.frames, "frames"),
        (g.height, "height"),
        (g.width, "width"),
        (g.channels, "channels"),
        (g.video_height, "video_height"),
        (g.video_width, "video_width"),
    ] {
        put_u32(&mut out, to_u32(val, name)?);
    }
    put_u32(&mut out, v.stream().code());
    put_str(&mut out, v.layer_tag());
    put_str(&mut out, v.scale_tag());
    put_f32s(&mut out, v.data().iter().copied());
    Ok(out)
}

pub fn decode_volume(buf: &[u8]) -> Result<FeatureMapVolume> {
    let mut r = Reader::new(buf);
    r.magic(VOLUME_MAGIC)?;
    let mut dims = [0usize; 6];
    for (slot, name) in dims.iter_mut().zip(["T", "H", "W", "C", "video_height", "video_width"]) {
        let at = r.pos;
        *slot = r.u32(name)? as usize;
        if *slot == 0 {
            return Err(EptError::Format {
                offset: at as u64,
                message: format!("{name} must be >= 1"),
            });
        }
    }
    let at = r.pos;
    let code = r.u32("stream tag")?;
    let stream = Stream::from_code(code).ok_or(EptError::Format {
        offset: at as u64,
        message: format!("unknown stream code {code}"),
    })?;
    let layer = r.string("layer tag")?;
    let scale = r.string("scale tag")?;
    let geom = VolumeGeometry {
        frames: dims[0],
        height: dims[1],
        width: dims[2],
        channels: dims[3],
        video_height: dims[4],
        video_width: dims[5],
    };
    let count = dims[..4]
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| r.format_err("volume dims overflow"))?;
    let data = r.f32_payload(count)?;
    FeatureMapVolume::new(geom, stream, layer, scale, data)
}

pub fn write_volume(path: impl AsRef<Path>, v: &FeatureMapVolume) -> Result<()> {
    fs::write(path, encode_volume(v)?)?;
    Ok(())
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<FeatureMapVolume> {
    decode_volume(&fs::read(path)?)
}

// ---- trajectories ----

pub fn format_trajectories(trs: &[Trajectory], len: usize) -> String {
    let mut s = format!("{TRAJECTORY_HEADER} L={len}\n");
    for t in trs {
        let _ = write!(s, "{} {} {}", t.id, t.start_frame, t.spatial_scale);
        for p in &t.points {
            let _ = write!(s, " {},{}", p.x, p.y);
        }
        s.push('\n');
    }
    s
}

/// Parses trajectory text without geometry checks. Returns (L, trajectories).
pub fn parse_trajectories(text: &str) -> Result<(usize, Vec<Trajectory>)> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(EptError::Parse {
        line: 1,
        message: "missing header".into(),
    })?;
    let len = header
        .strip_prefix(TRAJECTORY_HEADER)
        .and_then(|rest| rest.trim().strip_prefix("L="))
        .and_then(|n| n.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .ok_or_else(|| EptError::Parse {
            line: 1,
            message: format!("expected `{TRAJECTORY_HEADER} L=<L>`, got `{header}`"),
        })?;

    let mut out = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let perr = |message: String| EptError::Parse {
            line: lineno,
            message,
        };
        let fields: Vec<&str> = line.split_ascii_whitespace().collect();
        if fields.len() != 3 + len {
            return Err(perr(format!(
                "expected {} fields (id, start, scale, {len} points), found {}",
                3 + len,
                fields.len()
            )));
        }
        let id = fields[0]
            .parse::<u32>()
            .map_err(|e| perr(format!("bad id `{}`: {e}", fields[0])))?;
        let start_frame = fields[1]
            .parse::<usize>()
            .map_err(|e| perr(format!("bad start frame `{}`: {e}", fields[1])))?;
        let spatial_scale = fields[2]
            .parse::<f64>()
            .map_err(|e| perr(format!("bad scale `{}`: {e}", fields[2])))?;
        let points = fields[3..]
            .iter()
            .map(|f| {
                let (x, y) = f
                    .split_once(',')
                    .ok_or_else(|| perr(format!("bad point `{f}`")))?;
                let x = x.parse::<f64>().map_err(|e| perr(format!("bad x in `{f}`: {e}")))?;
                let y = y.parse::<f64>().map_err(|e| perr(format!("bad y in `{f}`: {e}")))?;
                Ok(Point::new(x, y))
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(Trajectory {
            id,
            start_frame,
            spatial_scale,
            points,
        });
    }
    Ok((len, out))
}

pub fn parse_and_validate_trajectories(text: &str, geom: &VolumeGeometry) -> Result<Vec<Trajectory>> {
    let (len, trs) = parse_trajectories(text)?;
    for t in &trs {
        t.validate(geom, len)?;
    }
    Ok(trs)
}

pub fn read_trajectories(path: impl AsRef<Path>, geom: &VolumeGeometry) -> Result<Vec<Trajectory>> {
    parse_and_validate_trajectories(&fs::read_to_string(path)?, geom)
}

pub fn write_trajectories(path: impl AsRef<Path>, trs: &[Trajectory], len: usize) -> Result<()> {
    fs::write(path, format_trajectories(trs, len))?;
    Ok(())
}

// ---- descriptors ----

pub fn encode_descriptors(set: &DescriptorSet) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(22 + set.rows.len() * (8 + set.dim * 4));
    out.extend_from_slice(DESCRIPTOR_MAGIC);
    put_u32(&mut out, to_u32(set.rows.len(), "descriptor count")?);
    put_u32(&mut out, to_u32(set.dim, "descriptor dim")?);
    put_u32(&mut out, set.pooling.code());
    put_u32(&mut out, set.direction.code());
    for row in &set.rows {
        if row.vector.len() != set.dim {
            return Err(EptError::DimensionMismatch {
                expected: set.dim,
                found: row.vector.len(),
            });
        }
        put_u32(&mut out, row.trajectory_id);
        put_u32(&mut out, row.assigned_frame);
        put_f32s(&mut out, row.vector.iter().copied());
    }
    Ok(out)
}

pub fn decode_descriptors(buf: &[u8]) -> Result<DescriptorSet> {
    let mut r = Reader::new(buf);
    r.magic(DESCRIPTOR_MAGIC)?;
    let count = r.u32("count")? as usize;
    let dim = r.u32("dim")? as usize;
    let at = r.pos;
    let pcode = r.u32("pooling code")?;
    let pooling = PoolingKind::from_code(pcode).ok_or(EptError::Format {
        offset: at as u64,
        message: format!("unknown pooling code {pcode}"),
    })?;
    let at = r.pos;
    let dcode = r.u32("direction code")?;
    let direction = Direction::from_code(dcode).ok_or(EptError::Format {
        offset: at as u64,
        message: format!("unknown direction code {dcode}"),
    })?;
    let row_bytes = 8 + dim * 4;
    if r.remaining() != count * row_bytes {
        return Err(EptError::SizeMismatch {
            expected: count,
            found: r.remaining() / row_bytes.max(1),
        });
    }
    let mut rows = Vec::with_capacity(count);
    for _ in 0..count {
        let trajectory_id = r.u32("trajectory id")?;
        let assigned_frame = r.u32("assigned frame")?;
        let vector = r
            .take(dim * 4, "descriptor")?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        rows.push(DescriptorRow {
            trajectory_id,
            assigned_frame,
            vector,
        });
    }
    let set = DescriptorSet {
        dim,
        pooling,
        direction,
        rows,
    };
    set.validate(None)?;
    Ok(set)
}

pub fn write_descriptors(path: impl AsRef<Path>, set: &DescriptorSet) -> Result<()> {
    fs::write(path, encode_descriptors(set)?)?;
    Ok(())
}

pub fn read_descriptors(path: impl AsRef<Path>) -> Result<DescriptorSet> {
    decode_descriptors(&fs::read(path)?)
}

// ---- encoding models ----

/// Serializes a PCA model, optionally followed by a GMM (K = 0 marks "no GMM yet").
pub fn encode_model(pca: &PcaModel, gmm: Option<&GmmModel>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    put_u32(&mut out, to_u32(pca.input_dim(), "pca input dim")?);
    put_u32(&mut out, to_u32(pca.output_dim(), "pca output dim")?);
    put_f64s(&mut out, pca.mean().iter().copied());
    for row in pca.basis() {
        put_f64s(&mut out, row.iter().copied());
    }
    match gmm {
        None => {
            put_u32(&mut out, 0);
            put_u32(&mut out, to_u32(pca.output_dim(), "gmm dim")?);
        }
        Some(g) => {
            if g.dim() != pca.output_dim() {
                return Err(EptError::DimensionMismatch {
                    expected: pca.output_dim(),
                    found: g.dim(),
                });
            }
            put_u32(&mut out, to_u32(g.components(), "gmm components")?);
            put_u32(&mut out, to_u32(g.dim(), "gmm dim")?);
            put_f64s(&mut out, g.weights().iter().copied());
            for m in g.means() {
                put_f64s(&mut out, m.iter().copied());
            }
            for v in g.variances() {
                put_f64s(&mut out, v.iter().copied());
            }
        }
    }
    Ok(out)
}

pub fn decode_model(buf: &[u8]) -> Result<(PcaModel, Option<GmmModel>)> {
    let mut r = Reader::new(buf);
    r.magic(MODEL_MAGIC)?;
    let d = r.u32("pca input dim")? as usize;
    let out_dim = r.u32("pca output dim")? as usize;
    let mean = r.f64s(d, "pca mean")?;
    let basis = (0..out_dim)
        .map(|_| r.f64s(d, "pca basis"))
        .collect::<Result<Vec<_>>>()?;
    let at = r.pos as u64;
    let pca = PcaModel::from_parts(mean, basis).map_err(|e| EptError::Format {
        offset: at,
        message: e.to_string(),
    })?;
    let k = r.u32("gmm components")? as usize;
    let at = r.pos as u64;
    let gdim = r.u32("gmm dim")? as usize;
    if gdim != out_dim {
        return Err(EptError::Format {
            offset: at,
            message: format!("gmm dim {gdim} does not match pca output dim {out_dim}"),
        });
    }
    let gmm = if k == 0 {
        None
    } else {
        let weights = r.f64s(k, "gmm weights")?;
        let means = (0..k).map(|_| r.f64s(gdim, "gmm means")).collect::<Result<Vec<_>>>()?;
        let vars = (0..k)
            .map(|_| r.f64s(gdim, "gmm variances"))
            .collect::<Result<Vec<_>>>()?;
        let at = r.pos as u64;
        Some(GmmModel::from_parts(weights, means, vars).map_err(|e| EptError::Format {
            offset: at,
            message: e.to_string(),
        })?)
    };
    r.finish()?;
    Ok((pca, gmm))
}

pub fn write_model(path: impl AsRef<Path>, pca: &PcaModel, gmm: Option<&GmmModel>) -> Result<()> {
    fs::write(path, encode_model(pca, gmm)?)?;
    Ok(())
}

pub fn read_model(path: impl AsRef<Path>) -> Result<(PcaModel, Option<GmmModel>)> {
    decode_model(&fs::read(path)?)
}

/// Reads a model file that must contain both PCA and GMM sections.
pub fn read_encoding_model(path: impl AsRef<Path>) -> Result<EncodingModel> {
    let (pca, gmm) = read_model(path)?;
    let gmm = gmm.ok_or_else(|| EptError::validation("model file has no GMM section"))?;
    EncodingModel::new(pca, gmm)
}

// ---- per-frame Fisher vectors ----

pub fn encode_frame_fvs(seq: &FrameFvSequence) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + seq.frames() * seq.dim() * 4);
    put_u32(&mut out, to_u32(seq.frames(), "frame count")?);
    put_u32(&mut out, to_u32(seq.dim(), "fv dim")?);
    put_f32s(&mut out, seq.as_flat().iter().map(|&v| v as f32));
    Ok(out)
}

pub fn decode_frame_fvs(buf: &[u8]) -> Result<FrameFvSequence> {
    let mut r = Reader::new(buf);
    let t = r.u32("frame count")? as usize;
    let dim = r.u32("fv dim")? as usize;
    let data = r.f32_payload(t * dim)?;
    FrameFvSequence::from_flat(t, dim, data.into_iter().map(f64::from).collect())
}

pub fn write_frame_fvs(path: impl AsRef<Path>, seq: &FrameFvSequence) -> Result<()> {
    fs::write(path, encode_frame_fvs(seq)?)?;
    Ok(())
}

pub fn read_frame_fvs(path: impl AsRef<Path>) -> Result<FrameFvSequence> {
    decode_frame_fvs(&fs::read(path)?)
}

// ---- video vectors ----

pub fn encode_video_vector(values: &[f64]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(10 + values.len() * 4);
    out.extend_from_slice(VIDEO_VECTOR_MAGIC);
    put_u32(&mut out, to_u32(values.len(), "vector dim")?);
    put_f32s(&mut out, values.iter().map(|&v| v as f32));
    Ok(out)
}

pub fn decode_video_vector(buf: &[u8]) -> Result<Vec<f64>> {
    let mut r = Reader::new(buf);
    r.magic(VIDEO_VECTOR_MAGIC)?;
    let dim = r.u32("vector dim")? as usize;
    let vals = r.f32_payload(dim)?;
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(EptError::validation("video vector has non-finite entries"));
    }
    Ok(vals.into_iter().map(f64::from).collect())
}

pub fn write_video_vector(path: impl AsRef<Path>, values: &[f64]) -> Result<()> {
    fs::write(path, encode_video_vector(values)?)?;
    Ok(())
}

pub fn read_video_vector(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    decode_video_vector(&fs::read(path)?)
}

// ---- label tables ----

pub fn format_labels(table: &LabeledVideoTable) -> String {
    let mut s = format!("{LABELS_HEADER} classes={}\n", table.num_classes());
    for (id, label) in table.iter() {
        let classes: Vec<String> = label.classes.iter().map(|c| c.to_string()).collect();
        let _ = writeln!(s, "{id} {} {}", classes.join(","), label.split);
    }
    s
}

/// Parses `video_id label split` lines. Multi-label videos list classes
/// comma-separated. Without a header the class count is max label + 1.
pub fn parse_labels(text: &str) -> Result<LabeledVideoTable> {
    let mut declared = None;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix(LABELS_HEADER) {
            let n = rest
                .trim()
                .strip_prefix("classes=")
                .and_then(|n| n.parse::<usize>().ok())
                .ok_or(EptError::Parse {
                    line: lineno,
                    message: format!("bad labels header `{line}`"),
                })?;
            declared = Some(n);
            continue;
        }
        let fields: Vec<&str> = line.split_ascii_whitespace().collect();
        if fields.len() != 3 {
            return Err(EptError::Parse {
                line: lineno,
                message: format!("expected `video_id label split`, found {} fields", fields.len()),
            });
        }
        let classes = fields[1]
            .split(',')
            .map(|c| c.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| EptError::Parse {
                line: lineno,
                message: format!("bad label `{}`: {e}", fields[1]),
            })?;
        let split = fields[2].parse::<Split>().map_err(|e| EptError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        rows.push((fields[0].to_string(), classes, split));
    }
    let inferred = rows
        .iter()
        .flat_map(|(_, c, _)| c.iter().copied())
        .max()
        .map_or(0, |m| m + 1);
    let mut table = LabeledVideoTable::new(declared.unwrap_or(inferred));
    for (id, classes, split) in rows {
        table.insert(id, classes, split)?;
    }
    Ok(table)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabeledVideoTable> {
    parse_labels(&fs::read_to_string(path)?)
}

pub fn write_labels(path: impl AsRef<Path>, table: &LabeledVideoTable) -> Result<()> {
    fs::write(path, format_labels(table))?;
    Ok(())
}
