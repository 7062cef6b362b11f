mod common;

use common::tiny_scene;
use meshfield::io::{
    decode_png, decode_ppm, encode_png, encode_ppm, format_camera, format_correspondences, format_obj, format_ply,
    format_selection, load_checkpoint, parse_camera, parse_correspondences, parse_obj, parse_ply, parse_selection,
    read_checkpoint, save_checkpoint, write_checkpoint, RunConfig, FORMAT_VERSION, MAGIC,
};
use meshfield::render::{render_image, Camera, RenderConfig};
use meshfield::scaffold::TriMesh;
use meshfield::teacher::{Albedo, Sdf};
use meshfield::{Error, Image, Scene, Scene32, Vec3};
use proptest::prelude::*;

fn scene32() -> Scene32 {
    let mut s = tiny_scene(TriMesh::icosphere(2), 9);
    let extra = s.radiance[0].clone();
    s.radiance.push(extra);
    s.scaffold.decoder_ids[3] = 1;
    s.step = 1234;
    s.cast()
}

/// Offsets of `(tag, payload start, payload length)` for each section.
fn sections(bytes: &[u8]) -> Vec<(String, usize, usize)> {
    let mut pos = MAGIC.len() + 4;
    let mut out = Vec::new();
    while pos < bytes.len() {
        let tag = String::from_utf8_lossy(&bytes[pos..pos + 4]).into_owned();
        let len = u64::from_le_bytes(bytes[pos + 4..pos + 12].try_into().unwrap()) as usize;
        out.push((tag, pos + 12, len));
        pos += 12 + len;
    }
    out
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let s = scene32();
    let bytes = save_checkpoint(&s);
    let back: Scene32 = load_checkpoint(&bytes).unwrap();
    assert_eq!(back.scaffold, s.scaffold);
    assert_eq!(back.geometry, s.geometry);
    assert_eq!(back.radiance, s.radiance);
    assert_eq!(back.log_sharpness.to_bits(), s.log_sharpness.to_bits());
    assert_eq!(back.encoding, s.encoding);
    assert_eq!((back.step, back.seed), (s.step, s.seed));
    assert_eq!(save_checkpoint(&back), bytes);
    let names: Vec<String> = sections(&bytes).into_iter().map(|s| s.0).collect();
    assert_eq!(names, ["HEAD", "MESH", "VERT", "DECO"]);
}

#[test]
fn f64_checkpoint_stabilises_after_one_round_trip() {
    let s = tiny_scene(TriMesh::icosphere(1), 2);
    let once: Scene<f64> = load_checkpoint(&save_checkpoint(&s)).unwrap();
    let first = save_checkpoint(&once);
    let twice: Scene<f64> = load_checkpoint(&first).unwrap();
    assert_eq!(save_checkpoint(&twice), first);
    assert_eq!(once.encoding, s.encoding);
}

#[test]
fn reloaded_checkpoint_renders_identically() {
    let s = scene32();
    assert_eq!(s.encoding.k, 8);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scene.ckpt");
    write_checkpoint(&path, &s).unwrap();
    let back: Scene32 = read_checkpoint(&path).unwrap();
    let cam: Camera<f32> =
        Camera::look_at(Vec3::new(0.4, 0.3, 2.8), Vec3::zero(), Vec3::new(0.0, 1.0, 0.0), 20, 16, 24.0).unwrap();
    let cfg = RenderConfig { n_coarse: 16, n_fine: 8, ..RenderConfig::default() };
    let a = render_image(&s, &cam, &cfg).unwrap();
    let b = render_image(&back, &cam, &cfg).unwrap();
    assert_eq!(a.image.data, b.image.data);
    assert_eq!(a.opacity.data, b.opacity.data);
}

#[test]
fn short_code_section_is_reported_by_name() {
    let s: Scene32 = tiny_scene(TriMesh::icosphere(3), 1).cast();
    assert_eq!(s.scaffold.vertex_count(), 642);
    let mut bytes = save_checkpoint(&s);
    let (_, start, len) = sections(&bytes).into_iter().find(|x| x.0 == "VERT").unwrap();
    // drop the last texture-code row: 641 rows for a 642-vertex header
    let d = s.scaffold.code_dim();
    let row_start = start + 4 * (642 * d) + 4 * (641 * d);
    bytes.drain(row_start..row_start + 4 * d);
    bytes[start - 8..start].copy_from_slice(&((len - 4 * d) as u64).to_le_bytes());
    let err = load_checkpoint::<f32>(&bytes).unwrap_err();
    assert!(matches!(err, Error::Checkpoint(_)));
    let msg = err.to_string();
    assert!(msg.contains("VERT") && msg.contains("642"), "{msg}");
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let bytes = save_checkpoint(&scene32());
    for cut in [0, 5, 12, 40, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(load_checkpoint::<f32>(&bytes[..cut]), Err(Error::Checkpoint(_))), "cut at {cut}");
    }
    let mut version = bytes.clone();
    version[8..12].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
    let msg = load_checkpoint::<f32>(&version).unwrap_err().to_string();
    assert!(msg.contains("version"), "{msg}");
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(load_checkpoint::<f32>(&magic).is_err());
    let mut unknown = bytes.clone();
    let (_, start, _) = sections(&bytes)[1].clone();
    unknown[start - 12..start - 8].copy_from_slice(b"JUNK");
    let msg = load_checkpoint::<f32>(&unknown).unwrap_err().to_string();
    assert!(msg.contains("unknown section"), "{msg}");
    let mut extra = bytes.clone();
    extra.extend_from_slice(b"DECO\0\0\0\0\0\0\0\0");
    assert!(load_checkpoint::<f32>(&extra).is_err());
}

#[test]
fn decoder_id_out_of_table_is_rejected() {
    let s = scene32();
    let mut bytes = save_checkpoint(&s);
    let (_, start, len) = sections(&bytes).into_iter().find(|x| x.0 == "VERT").unwrap();
    let last_id = start + len - 4;
    bytes[last_id..last_id + 4].copy_from_slice(&7u32.to_le_bytes());
    assert!(matches!(load_checkpoint::<f32>(&bytes), Err(Error::Checkpoint(_))));
}

// --- meshes --------------------------------------------------------------

#[test]
fn obj_and_ply_round_trip() {
    let m = TriMesh::icosphere(1);
    assert_eq!(parse_obj(&format_obj(&m)).unwrap(), m);
    assert_eq!(parse_ply(format_ply(&m).as_bytes()).unwrap(), m);
}

#[test]
fn obj_polygons_and_relative_indices() {
    let text = "# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nv 0 0 1\nvn 0 0 1\nf 1/1/1 2/2/1 3/3/1 4/4/1\nf -5 -1 -4\nf 2 5 3\nf 3 5 4\nf 4 5 1\n";
    let m = parse_obj(text).unwrap();
    assert_eq!(m.faces[0], [0, 1, 2]);
    assert_eq!(m.faces[1], [0, 2, 3]);
    assert_eq!(m.faces[2], [0, 4, 1]);
    assert!(matches!(parse_obj("v 0 0 0\nf 1 2 3\n"), Err(Error::Parse { .. })));
    assert!(parse_obj("v 0 zero 0\n").unwrap_err().to_string().contains("line 1"));
}

#[test]
fn binary_ply_is_read() {
    let m: TriMesh<f64> = TriMesh::icosphere(0);
    let mut b = format!(
        "ply\nformat binary_little_endian 1.0\ncomment test\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nelement face {}\nproperty list uchar uint vertex_indices\nend_header\n",
        m.vertices.len(),
        m.faces.len()
    )
    .into_bytes();
    for v in &m.vertices {
        for c in v.to_array() {
            b.extend_from_slice(&(c as f32).to_le_bytes());
        }
        b.push(200);
    }
    for f in &m.faces {
        b.push(3);
        for i in f {
            b.extend_from_slice(&i.to_le_bytes());
        }
    }
    let back = parse_ply(&b).unwrap();
    assert_eq!(back.faces, m.faces);
    for (a, v) in back.vertices.iter().zip(&m.vertices) {
        assert_eq!(a.x, v.x as f32 as f64);
    }
}

// --- images --------------------------------------------------------------

fn quantised_image(w: usize, h: usize, ch: usize) -> Image {
    let data = (0..w * h * ch).map(|i| ((i * 37) % 256) as f32 / 255.0).collect();
    Image::from_data(w, h, ch, data).unwrap()
}

#[test]
fn png_and_ppm_round_trip_8_bit_values() {
    for ch in [1, 3] {
        let img = quantised_image(7, 5, ch);
        assert_eq!(decode_png(&encode_png(&img).unwrap()).unwrap(), img);
        assert_eq!(decode_ppm(&encode_ppm(&img).unwrap()).unwrap(), img);
    }
    let ascii = decode_ppm(b"P3\n# c\n2 1\n255\n255 0 0  0 128 255\n").unwrap();
    assert_eq!(ascii.data, vec![1.0, 0.0, 0.0, 0.0, 128.0 / 255.0, 1.0]);
    assert!(decode_ppm(b"P6\n2 2\n255\n\x00").is_err());
    assert!(encode_png(&Image::new(2, 2, 2)).is_err());
}

// --- text formats --------------------------------------------------------

#[test]
fn run_config_parses_every_section() {
    let text = "\
# sphere run
teacher.shape = sphere
teacher.radius = 0.8
teacher.albedo = stripes
teacher.color_a = 1, 0, 0
teacher.axis = 0, 0, 1
scaffold.resolution = 40
model.code_dim = 16
model.radiance_width = 48
train.steps = 300
train.learnable_indicators = false
train.base_lr = 1e-3
render.n_coarse = 24
render.background = 1, 1, 1
output.dir = runs/a
";
    let c = RunConfig::parse(text).unwrap();
    assert!(matches!(c.teacher.sdf, Sdf::Sphere { radius, .. } if radius == 0.8));
    assert!(matches!(c.teacher.albedo, Albedo::Stripes { axis, .. } if axis == [0.0, 0.0, 1.0]));
    assert_eq!(c.scaffold_resolution, 40);
    assert_eq!((c.model.code_dim, c.model.radiance_width), (16, 48));
    assert_eq!(c.train.steps, 300);
    assert!(!c.train.flags.learnable_indicators);
    assert_eq!(c.train.render.n_coarse, 24);
    assert_eq!(c.train.render.background, [1.0; 3]);
    assert_eq!(c.output, std::path::PathBuf::from("runs/a"));
}

fn config_error_line(text: &str) -> usize {
    match RunConfig::parse(text) {
        Err(Error::Config { line, .. }) => line,
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn run_config_errors_carry_line_numbers() {
    assert_eq!(config_error_line("train.steps = 10\n\ntrain.bogus = 1\n"), 3);
    assert_eq!(config_error_line("# c\ntrain.batch_rays = 0\n"), 2);
    assert_eq!(config_error_line("render.background = 1, 2\n"), 1);
    assert_eq!(config_error_line("train.steps = 1\ntrain.steps = 2\n"), 2);
    assert_eq!(config_error_line("model.k = 8\nno equals sign\n"), 2);
    assert_eq!(config_error_line("teacher.shape = torus\n"), 1);
    // cross-field check: attributed to the train section
    assert_eq!(config_error_line("train.n_cameras = 5\ntrain.n_test = 5\n"), 2);
    assert_eq!(config_error_line("train.distill = false\ntrain.finetune = false\n"), 2);
}

#[test]
fn camera_file_round_trip() {
    let text = format_camera([0.0, 0.0, 3.0], [0.0; 3], [0.0, 1.0, 0.0], 32, 24, 40.0);
    let cam = parse_camera(&text).unwrap();
    let want = Camera::look_at(Vec3::new(0.0, 0.0, 3.0), Vec3::zero(), Vec3::new(0.0, 1.0, 0.0), 32, 24, 40.0).unwrap();
    assert_eq!(cam, want);
    assert!(matches!(parse_camera("eye = 0, 0, 3\nwidth = 4\nheight = 4\n"), Err(Error::Config { .. })));
    assert!(matches!(parse_camera("eye = 0,0,3\nzoom = 2\n"), Err(Error::Config { line: 2, .. })));
}

#[test]
fn selection_and_correspondence_files() {
    let sel = parse_selection("cap", "# ids\n3\n5 # comment\n\n9\n").unwrap();
    assert_eq!(sel.ids, vec![3, 5, 9]);
    assert!(sel.uvs.is_none());
    let uv = parse_selection("patch", "1 0.25 0.5\n2 0.75 1\n").unwrap();
    assert_eq!(uv.uvs.as_deref(), Some(&[[0.25, 0.5], [0.75, 1.0]][..]));
    assert_eq!(parse_selection("patch", &format_selection(&uv)).unwrap(), uv);
    assert!(parse_selection("x", "1 0.5 0.5\n2\n").is_err());
    assert!(parse_selection("x", "-1\n").is_err());

    let text = "0 0 0 1 0 0\n1 0 0 2 0 0\n0 1 0 1 1 0\n0 0 1 1 0 1\n";
    let c = parse_correspondences(text).unwrap();
    assert_eq!(c.pairs.len(), 4);
    assert_eq!(parse_correspondences(&format_correspondences(&c)).unwrap(), c);
    assert!(parse_correspondences("0 0 0 1 0 0\n").is_err());
    assert!(parse_correspondences("0 0 0 1 0\n").unwrap_err().to_string().contains("line 1"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn checkpoint_round_trip_holds_for_random_codes(seed in any::<u64>()) {
        let mut s: Scene32 = tiny_scene(TriMesh::icosphere(1), seed % 5).cast();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        use rand::Rng;
        s.scaffold.texture_codes.mapv_inplace(|_| rng.gen_range(-1e3f32..1e3));
        s.log_sharpness = rng.gen_range(-5.0..9.0);
        let bytes = save_checkpoint(&s);
        let back: Scene32 = load_checkpoint(&bytes).unwrap();
        prop_assert_eq!(&back.scaffold, &s.scaffold);
        prop_assert_eq!(save_checkpoint(&back), bytes);
    }
}
