//! Flat binary checkpoint.
//!
//! Layout: magic `MSHFCKPT`, `u32` format version, then tagged sections
//! `HEAD`, `MESH`, `VERT`, `DECO` in that order, each as a four-byte tag, a
//! `u64` payload length and the payload. Everything is little endian.
//! Trainable tensors are stored as `f32`; encoding constants are stored as
//! `f64` so a reloaded scene evaluates the same field.

use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::field::EncodingConfig;
use crate::geom::Vec3;
use crate::model::{Scene, DECODER_LAYOUT};
use crate::nn::{Activation, Dense, Mlp};
use crate::real::Real;
use crate::scaffold::{MeshScaffold, TriMesh};

pub const MAGIC: &[u8; 8] = b"MSHFCKPT";
pub const FORMAT_VERSION: u32 = 1;
const SECTIONS: [&[u8; 4]; 4] = [b"HEAD", b"MESH", b"VERT", b"DECO"];

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f32<T: Real>(&mut self, v: T) {
        self.buf.extend_from_slice(&v.as_f32().to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
    fn section(&mut self, tag: &[u8; 4], payload: Writer) {
        self.buf.extend_from_slice(tag);
        self.u64(payload.buf.len() as u64);
        self.buf.extend_from_slice(&payload.buf);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], what: &'static str) -> Self {
        Self { buf, pos: 0, what }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "section {} is truncated: needed {n} more bytes at offset {}, {} left",
                self.what,
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f32<T: Real>(&mut self) -> Result<T> {
        Ok(T::of(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as f64))
    }
    fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }
    fn str(&mut self) -> Result<String> {
        let n = self.usize()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| self.err("string is not UTF-8"))
    }
    fn f32_vec<T: Real>(&mut self, n: usize) -> Result<Vec<T>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| self.err("array length overflows"))?)?;
        Ok(bytes.chunks_exact(4).map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)).collect())
    }
    fn vec3s<T: Real>(&mut self, n: usize) -> Result<Vec<Vec3<T>>> {
        let flat = self.f32_vec::<T>(n * 3)?;
        Ok(flat.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect())
    }
    fn err(&self, msg: &str) -> Error {
        Error::Checkpoint(format!("section {}: {msg}", self.what))
    }
    fn expect_len(&self, want: usize, detail: &str) -> Result<()> {
        if self.buf.len() != want {
            return Err(Error::Checkpoint(format!(
                "section {} holds {} bytes but {detail} needs {want}",
                self.what,
                self.buf.len()
            )));
        }
        Ok(())
    }
    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.err(&format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn write_mlp<T: Real>(w: &mut Writer, mlp: &Mlp<T>) {
    w.str(mlp.hidden_activation().name());
    w.str(mlp.output_activation().name());
    w.u32(mlp.layers().len() as u32);
    for l in mlp.layers() {
        w.u32(l.outputs() as u32);
        w.u32(l.inputs() as u32);
        l.weight.iter().for_each(|&v| w.f32(v));
        l.bias.iter().for_each(|&v| w.f32(v));
    }
}

fn read_mlp<T: Real>(r: &mut Reader) -> Result<Mlp<T>> {
    let act = |r: &mut Reader| -> Result<Activation> {
        let name = r.str()?;
        Activation::from_name(&name).ok_or_else(|| r.err(&format!("unknown activation '{name}'")))
    };
    let hidden = act(r)?;
    let output = act(r)?;
    let n = r.usize()?;
    let mut layers = Vec::with_capacity(n.min(64));
    for _ in 0..n {
        let (outs, ins) = (r.usize()?, r.usize()?);
        let weight = Array2::from_shape_vec((outs, ins), r.f32_vec(outs * ins)?).expect("length checked");
        let bias = Array1::from_vec(r.f32_vec(outs)?);
        layers.push(Dense { weight, bias });
    }
    Mlp::from_layers(layers, hidden, output).map_err(|e| r.err(&e.to_string()))
}

/// Serialise `scene` to the checkpoint format.
pub fn save_checkpoint<T: Real>(scene: &Scene<T>) -> Vec<u8> {
    let sc = &scene.scaffold;
    let (v, f, d) = (sc.vertex_count(), sc.mesh.faces.len(), sc.code_dim());
    let e = &scene.encoding;

    let mut head = Writer::default();
    head.u32(v as u32);
    head.u32(f as u32);
    head.u32(d as u32);
    head.u32(e.k as u32);
    head.u32(e.freq_h as u32);
    head.u32(e.freq_code as u32);
    head.u32(e.freq_dir as u32);
    head.f64(e.omega_n);
    head.f64(e.distance_epsilon);
    head.u32(scene.radiance.len() as u32);
    head.u64(scene.step);
    head.u64(scene.seed);
    head.str(DECODER_LAYOUT);

    let mut mesh = Writer::default();
    for p in &sc.mesh.vertices {
        p.to_array().iter().for_each(|&c| mesh.f32(c));
    }
    for face in &sc.mesh.faces {
        face.iter().for_each(|&i| mesh.u32(i));
    }

    let mut vert = Writer::default();
    sc.geometry_codes.iter().for_each(|&c| vert.f32(c));
    sc.texture_codes.iter().for_each(|&c| vert.f32(c));
    for n in sc.indicators.iter().chain(&sc.reference_normals) {
        n.to_array().iter().for_each(|&c| vert.f32(c));
    }
    sc.decoder_ids.iter().for_each(|&i| vert.u32(i));

    let mut deco = Writer::default();
    deco.f32(scene.log_sharpness);
    write_mlp(&mut deco, &scene.geometry);
    for r in &scene.radiance {
        write_mlp(&mut deco, r);
    }

    let mut out = Writer::default();
    out.buf.extend_from_slice(MAGIC);
    out.u32(FORMAT_VERSION);
    out.section(b"HEAD", head);
    out.section(b"MESH", mesh);
    out.section(b"VERT", vert);
    out.section(b"DECO", deco);
    out.buf
}

struct Header {
    vertices: usize,
    faces: usize,
    code_dim: usize,
    encoding: EncodingConfig,
    decoders: usize,
    step: u64,
    seed: u64,
}

fn read_header(r: &mut Reader) -> Result<Header> {
    let vertices = r.usize()?;
    let faces = r.usize()?;
    let code_dim = r.usize()?;
    let encoding = EncodingConfig {
        k: r.usize()?,
        freq_h: r.usize()?,
        freq_code: r.usize()?,
        freq_dir: r.usize()?,
        omega_n: r.f64()?,
        distance_epsilon: r.f64()?,
    };
    let decoders = r.usize()?;
    let step = r.u64()?;
    let seed = r.u64()?;
    let layout = r.str()?;
    r.finish()?;
    if layout != DECODER_LAYOUT {
        return Err(r.err(&format!("decoder layout '{layout}' is not '{DECODER_LAYOUT}'")));
    }
    encoding.validate().map_err(|e| r.err(&e.to_string()))?;
    if decoders == 0 {
        return Err(r.err("no radiance decoders"));
    }
    Ok(Header { vertices, faces, code_dim, encoding, decoders, step, seed })
}

/// Parse a checkpoint produced by [`save_checkpoint`].
pub fn load_checkpoint<T: Real>(bytes: &[u8]) -> Result<Scene<T>> {
    let mut top = Reader::new(bytes, "preamble");
    if top.take(MAGIC.len()).ok() != Some(&MAGIC[..]) {
        return Err(Error::Checkpoint("not a meshfield checkpoint (bad magic)".into()));
    }
    let version = top.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("format version {version} is not supported (expected {FORMAT_VERSION})")));
    }
    let mut payloads = Vec::with_capacity(4);
    while top.pos < bytes.len() {
        let tag = top.take(4)?;
        let name = SECTIONS
            .iter()
            .find(|s| s[..] == *tag)
            .ok_or_else(|| Error::Checkpoint(format!("unknown section '{}'", String::from_utf8_lossy(tag))))?;
        let expected = SECTIONS[payloads.len().min(3)];
        if *name != expected || payloads.len() == 4 {
            return Err(Error::Checkpoint(format!(
                "section {} out of order",
                String::from_utf8_lossy(&name[..])
            )));
        }
        let len = usize::try_from(top.u64()?).map_err(|_| Error::Checkpoint("section length overflows".into()))?;
        let what = std::str::from_utf8(&name[..]).expect("ascii tag");
        top.what = what;
        payloads.push((what, top.take(len)?));
    }
    if payloads.len() != 4 {
        let missing = SECTIONS[payloads.len()];
        return Err(Error::Checkpoint(format!("missing section {}", String::from_utf8_lossy(&missing[..]))));
    }

    let head = read_header(&mut Reader::new(payloads[0].1, "HEAD"))?;
    let (v, f, d) = (head.vertices, head.faces, head.code_dim);

    let mut mesh_r = Reader::new(payloads[1].1, "MESH");
    mesh_r.expect_len(4 * (3 * v + 3 * f), &format!("{v} vertices and {f} faces"))?;
    let vertices = mesh_r.vec3s::<T>(v)?;
    let mut faces = Vec::with_capacity(f);
    for _ in 0..f {
        faces.push([mesh_r.u32()?, mesh_r.u32()?, mesh_r.u32()?]);
    }
    let mesh = TriMesh::new(vertices, faces).map_err(|e| mesh_r.err(&e.to_string()))?;

    let mut vert_r = Reader::new(payloads[2].1, "VERT");
    vert_r.expect_len(4 * (2 * v * d + 6 * v + v), &format!("{v} vertices with {d}-dim codes"))?;
    let geometry_codes = Array2::from_shape_vec((v, d), vert_r.f32_vec(v * d)?).expect("length checked");
    let texture_codes = Array2::from_shape_vec((v, d), vert_r.f32_vec(v * d)?).expect("length checked");
    let indicators = vert_r.vec3s(v)?;
    let reference_normals = vert_r.vec3s(v)?;
    let decoder_ids = (0..v).map(|_| vert_r.u32()).collect::<Result<Vec<_>>>()?;
    let scaffold = MeshScaffold { mesh, geometry_codes, texture_codes, indicators, reference_normals, decoder_ids };

    let mut deco_r = Reader::new(payloads[3].1, "DECO");
    let log_sharpness = deco_r.f32::<T>()?;
    let geometry = read_mlp(&mut deco_r)?;
    let radiance = (0..head.decoders).map(|_| read_mlp(&mut deco_r)).collect::<Result<Vec<_>>>()?;
    deco_r.finish()?;

    Scene::from_parts(scaffold, head.encoding, geometry, radiance, log_sharpness, head.seed, head.step)
        .map_err(|e| Error::Checkpoint(format!("inconsistent scene: {e}")))
}

pub fn write_checkpoint<T: Real>(path: &Path, scene: &Scene<T>) -> Result<()> {
    std::fs::write(path, save_checkpoint(scene)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint<T: Real>(path: &Path) -> Result<Scene<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    load_checkpoint(&bytes)
}
