mod common;

use common::{random_point, random_unit, relative_error, tiny_scene};
use meshfield::field::{
    idw_weights, interpolate, sample_field, signed_distance, EncodingConfig, GeometryPass, Neighborhood,
    RadiancePass,
};
use meshfield::geom::{Mat3, Vec3};
use meshfield::nn::{Activation, Dense, Mlp};
use meshfield::scaffold::{MeshScaffold, TriMesh};
use meshfield::{Scene, SceneGrad};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sdf_at(scene: &Scene<f64>, x: Vec3<f64>) -> f64 {
    let nb = Neighborhood::query(scene.index(), &[x], scene.encoding.k);
    GeometryPass::forward(scene, &[x], &nb, false).unwrap().sdf[0]
}

#[test]
fn identity_stub_decoder_returns_interpolated_distance() {
    let mut scene = tiny_scene(TriMesh::icosphere(1), 3);
    scene.scaffold.geometry_codes.fill(0.0);
    let cfg = scene.encoding;
    let cw = meshfield::field::encoded_len(scene.scaffold.code_dim(), cfg.freq_code);
    let gin = scene.geometry.input_dim();
    let mut w = Array2::zeros((1, gin));
    w[[0, cw]] = 1.0;
    scene.geometry =
        Mlp::from_layers(vec![Dense { weight: w, bias: ndarray::Array1::zeros(1) }], Activation::Identity, Activation::Identity)
            .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let x = random_point(&mut rng, 0.2, 2.0);
        let s = sample_field(&scene, x, Vec3::new(0.0, 0.0, 1.0)).unwrap();
        let nbrs = scene.index().knn(x, cfg.k);
        let h = signed_distance(&nbrs, x, &scene.scaffold, &cfg).unwrap();
        assert!((s.sdf - h).abs() < 1e-12, "{} vs {h}", s.sdf);
        assert!((s.interp_signed_distance - h).abs() < 1e-12);
        assert!(s.is_finite());
    }
}

#[test]
fn sdf_gradient_matches_finite_differences() {
    let scene = tiny_scene(TriMesh::icosphere(1), 11);
    let k = scene.encoding.k;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let step = 1e-4;
    let mut checked = 0;
    while checked < 100 {
        let x = random_point(&mut rng, 0.5, 1.6);
        let ids: Vec<u32> = scene.index().knn(x, k).iter().map(|n| n.0).collect();
        let same = (0..3).all(|j| {
            [-2.0, -1.0, 1.0, 2.0].iter().all(|&sg| {
                let mut e = [0.0; 3];
                e[j] = sg * step;
                let ids2: Vec<u32> = scene.index().knn(x + Vec3::from_array(e), k).iter().map(|n| n.0).collect();
                ids2 == ids
            })
        });
        if !same {
            continue;
        }
        let s = sample_field(&scene, x, Vec3::new(1.0, 0.0, 0.0)).unwrap();
        let mut fd = [0.0; 3];
        for j in 0..3 {
            let mut e = [0.0; 3];
            e[j] = step;
            let e = Vec3::from_array(e);
            // fourth-order stencil: the 2^7 pi encoding frequency makes the
            // second-order truncation error exceed the tolerance at this step
            fd[j] = (-sdf_at(&scene, x + e * 2.0) + 8.0 * sdf_at(&scene, x + e) - 8.0 * sdf_at(&scene, x - e)
                + sdf_at(&scene, x - e * 2.0))
                / (12.0 * step);
        }
        let fd = Vec3::from_array(fd);
        let err = (s.sdf_gradient - fd).norm() / s.sdf_gradient.norm().max(1e-6);
        assert!(err < 1e-3, "x={x:?} analytic {:?} fd {fd:?}", s.sdf_gradient);
        checked += 1;
    }
}

struct Probe {
    points: Vec<Vec3<f64>>,
    dirs: Vec<Vec3<f64>>,
    a: Vec<f64>,
    b: Vec<Vec3<f64>>,
    c: Vec<[f64; 3]>,
}

impl Probe {
    fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = || rng.gen_range(-1.0..1.0);
        let mut p = Probe { points: vec![], dirs: vec![], a: vec![], b: vec![], c: vec![] };
        for _ in 0..n {
            p.a.push(v());
            p.b.push(Vec3::new(v(), v(), v()));
            p.c.push([v(), v(), v()]);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        for _ in 0..n {
            p.points.push(random_point(&mut rng, 0.6, 1.5));
            p.dirs.push(random_unit(&mut rng));
        }
        p
    }

    /// `sum a.s + b.grad s + c.color`.
    fn loss(&self, scene: &Scene<f64>) -> f64 {
        let nb = Neighborhood::query(scene.index(), &self.points, scene.encoding.k);
        let geo = GeometryPass::forward(scene, &self.points, &nb, true).unwrap();
        let rad = RadiancePass::forward(scene, &nb, &geo.h, &geo.grad, &self.dirs).unwrap();
        let mut l = 0.0;
        for i in 0..self.points.len() {
            l += self.a[i] * geo.sdf[i] + self.b[i].dot(geo.grad[i]);
            l += (0..3).map(|ch| self.c[i][ch] * rad.colors[i][ch]).sum::<f64>();
        }
        l
    }

    fn grad(&self, scene: &Scene<f64>) -> SceneGrad<f64> {
        let n = self.points.len();
        let nb = Neighborhood::query(scene.index(), &self.points, scene.encoding.k);
        let geo = GeometryPass::forward(scene, &self.points, &nb, true).unwrap();
        let rad = RadiancePass::forward(scene, &nb, &geo.h, &geo.grad, &self.dirs).unwrap();
        let mut g = SceneGrad::zeros_like(scene);
        let mut h_bar = vec![0.0; n];
        let mut grad_bar = self.b.clone();
        rad.backward(scene, &self.c, &mut g, &mut h_bar, &mut grad_bar).unwrap();
        geo.backward(scene, &self.a, Some(&grad_bar), Some(&h_bar), &mut g, true).unwrap();
        g
    }
}

fn check_param(
    scene: &mut Scene<f64>,
    probe: &Probe,
    analytic: f64,
    what: &str,
    set: &mut dyn FnMut(&mut Scene<f64>, f64),
    get: &dyn Fn(&Scene<f64>) -> f64,
) {
    let h = 1e-5;
    let orig = get(scene);
    set(scene, orig + h);
    let lp = probe.loss(scene);
    set(scene, orig - h);
    let lm = probe.loss(scene);
    set(scene, orig);
    let fd = (lp - lm) / (2.0 * h);
    let err = relative_error(analytic, fd, 1e-4);
    assert!(err < 1e-3, "{what}: analytic {analytic} fd {fd}");
}

#[test]
fn reverse_pass_matches_finite_differences() {
    let mut scene = tiny_scene(TriMesh::icosphere(1), 21);
    let probe = Probe::new(24, 4);
    let g = probe.grad(&scene);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let touched: Vec<usize> = {
        let nb = Neighborhood::query(scene.index(), &probe.points, scene.encoding.k);
        let mut v: Vec<usize> = nb.all_ids().iter().map(|&i| i as usize).collect();
        v.sort();
        v.dedup();
        v
    };
    for _ in 0..6 {
        let v = touched[rng.gen_range(0..touched.len())];
        let c = rng.gen_range(0..scene.scaffold.code_dim());
        check_param(
            &mut scene,
            &probe,
            g.geometry_codes[[v, c]],
            &format!("geometry code {v},{c}"),
            &mut |s, x| s.scaffold.geometry_codes[[v, c]] = x,
            &|s| s.scaffold.geometry_codes[[v, c]],
        );
        check_param(
            &mut scene,
            &probe,
            g.texture_codes[[v, c]],
            &format!("texture code {v},{c}"),
            &mut |s, x| s.scaffold.texture_codes[[v, c]] = x,
            &|s| s.scaffold.texture_codes[[v, c]],
        );
        let axis = rng.gen_range(0..3);
        let analytic = g.indicators[v].to_array()[axis];
        check_param(
            &mut scene,
            &probe,
            analytic,
            &format!("indicator {v}.{axis}"),
            &mut |s, x| {
                let mut a = s.scaffold.indicators[v].to_array();
                a[axis] = x;
                s.scaffold.indicators[v] = Vec3::from_array(a);
            },
            &|s| s.scaffold.indicators[v].to_array()[axis],
        );
    }
    for _ in 0..6 {
        let l = rng.gen_range(0..scene.geometry.layers().len());
        let (o, i) = scene.geometry.layers()[l].weight.dim();
        let (o, i) = (rng.gen_range(0..o), rng.gen_range(0..i));
        check_param(
            &mut scene,
            &probe,
            g.geometry.layers[l].weight[[o, i]],
            &format!("geometry w{l}[{o},{i}]"),
            &mut |s, x| s.geometry.layers_mut()[l].weight[[o, i]] = x,
            &|s| s.geometry.layers()[l].weight[[o, i]],
        );
        let l = rng.gen_range(0..scene.radiance[0].layers().len());
        let (o, i) = scene.radiance[0].layers()[l].weight.dim();
        let (o, i) = (rng.gen_range(0..o), rng.gen_range(0..i));
        check_param(
            &mut scene,
            &probe,
            g.radiance[0].layers[l].weight[[o, i]],
            &format!("radiance w{l}[{o},{i}]"),
            &mut |s, x| s.radiance[0].layers_mut()[l].weight[[o, i]] = x,
            &|s| s.radiance[0].layers()[l].weight[[o, i]],
        );
    }
}

#[test]
fn multi_decoder_reverse_pass_matches_finite_differences() {
    let mut scene = tiny_scene(TriMesh::icosphere(1), 31);
    let extra = scene.radiance[0].clone();
    let mut extra = extra;
    for l in extra.layers_mut() {
        l.weight.mapv_inplace(|w| -0.7 * w + 0.01);
    }
    scene.radiance.push(extra);
    for (i, id) in scene.scaffold.decoder_ids.iter_mut().enumerate() {
        *id = (scene.scaffold.mesh.vertices[i].x > 0.0) as u32;
    }
    let probe = Probe::new(20, 6);
    let g = probe.grad(&scene);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..8 {
        let v = rng.gen_range(0..scene.scaffold.vertex_count());
        let c = rng.gen_range(0..scene.scaffold.code_dim());
        check_param(
            &mut scene,
            &probe,
            g.texture_codes[[v, c]],
            &format!("texture code {v},{c}"),
            &mut |s, x| s.scaffold.texture_codes[[v, c]] = x,
            &|s| s.scaffold.texture_codes[[v, c]],
        );
        let l = rng.gen_range(0..scene.radiance[1].layers().len());
        let (o, _) = scene.radiance[1].layers()[l].weight.dim();
        let o = rng.gen_range(0..o);
        check_param(
            &mut scene,
            &probe,
            g.radiance[1].layers[l].bias[o],
            &format!("decoder 1 b{l}[{o}]"),
            &mut |s, x| s.radiance[1].layers_mut()[l].bias[o] = x,
            &|s| s.radiance[1].layers()[l].bias[o],
        );
    }
}

#[test]
fn far_field_distance_is_close_to_surface_distance() {
    let mesh = TriMesh::<f64>::icosphere(3);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let scaffold = MeshScaffold::from_mesh(mesh, 1, 0.0, &mut rng).unwrap();
    // indicators initialise to the (near-radial) normals
    let idx = meshfield::scaffold::SpatialIndex::build(&scaffold.mesh).unwrap();
    let cfg = EncodingConfig::default();
    for _ in 0..1000 {
        let x = random_point(&mut rng, 1.5, 3.0);
        let h = signed_distance(&idx.knn(x, cfg.k), x, &scaffold, &cfg).unwrap();
        let ratio = h.abs() / (x.norm() - 1.0);
        assert!((0.9..=1.1).contains(&ratio), "|x|={} ratio {ratio}", x.norm());
    }
}

fn random_rotation(rng: &mut impl Rng) -> Mat3<f64> {
    Mat3::axis_angle(random_unit(rng), rng.gen_range(-3.0..3.0))
}

fn transformed(scene: &Scene<f64>, r: &Mat3<f64>, t: Vec3<f64>) -> Scene<f64> {
    let mut out = scene.clone();
    out.scaffold.indicators = scene.scaffold.indicators.iter().map(|&n| r.mul_vec(n)).collect();
    out.scaffold.reference_normals = scene.scaffold.reference_normals.iter().map(|&n| r.mul_vec(n)).collect();
    out.set_vertices(scene.scaffold.mesh.vertices.iter().map(|&v| r.mul_vec(v) + t).collect()).unwrap();
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn interpolation_is_convex(
        vals in prop::collection::vec(-10.0f64..10.0, 2..9),
        dists in prop::collection::vec(0.0f64..5.0, 9),
    ) {
        let n = vals.len();
        let codes = Array2::from_shape_fn((n, 1), |(i, _)| vals[i]);
        let nbrs: Vec<(u32, f64)> = (0..n).map(|i| (i as u32, dists[i])).collect();
        let r = interpolate(&nbrs, codes.view(), &EncodingConfig::default()).unwrap()[0];
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(r >= lo - 1e-9 && r <= hi + 1e-9);
        let w = idw_weights(&nbrs, 1e-8).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn joint_rigid_transform_preserves_field(seed in 0u64..1000) {
        let scene = tiny_scene(TriMesh::icosphere(1), 40);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = random_rotation(&mut rng);
        let t = Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let moved = transformed(&scene, &r, t);
        for _ in 0..10 {
            let x = random_point(&mut rng, 0.3, 1.8);
            let d = random_unit(&mut rng);
            let a = sample_field(&scene, x, d).unwrap();
            let b = sample_field(&moved, r.mul_vec(x) + t, r.mul_vec(d)).unwrap();
            // a tie in the neighbour order can legitimately flip after rounding
            if scene.index().knn(x, 8).iter().map(|n| n.0).collect::<Vec<_>>()
                != moved.index().knn(r.mul_vec(x) + t, 8).iter().map(|n| n.0).collect::<Vec<_>>() {
                continue;
            }
            prop_assert!((a.sdf - b.sdf).abs() < 1e-6);
            prop_assert!((a.interp_signed_distance - b.interp_signed_distance).abs() < 1e-6);
            for (p, q) in a.interp_geometry_code.iter().zip(&b.interp_geometry_code) {
                prop_assert!((p - q).abs() < 1e-6);
            }
            for (p, q) in a.interp_texture_codes[0].iter().zip(&b.interp_texture_codes[0]) {
                prop_assert!((p - q).abs() < 1e-6);
            }
            prop_assert!((r.mul_vec(a.sdf_gradient) - b.sdf_gradient).norm() < 1e-6);
        }
    }
}

#[test]
fn translation_alone_preserves_gradient() {
    let scene = tiny_scene(TriMesh::icosphere(1), 41);
    let t = Vec3::new(0.3, -1.25, 2.0);
    let moved = transformed(&scene, &Mat3::identity(), t);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let x = random_point(&mut rng, 0.3, 1.8);
        let a = sample_field(&scene, x, Vec3::new(0.0, 1.0, 0.0)).unwrap();
        let b = sample_field(&moved, x + t, Vec3::new(0.0, 1.0, 0.0)).unwrap();
        assert!((a.sdf_gradient - b.sdf_gradient).norm() < 1e-6);
        assert!((a.radiance[0] - b.radiance[0]).abs() < 1e-6);
    }
}
