//! Scene editing: mesh-driven geometry deformation and the three texture
//! edits (swap, fill, paint).

mod arap;
mod paint;
mod umeyama;

pub use arap::{arap_deform, ArapResult};
pub use paint::{dilate_mask, paint_texture, PaintJob, PaintResult};
pub use umeyama::{rigid_fit, umeyama, Similarity};

pub use crate::field::blend_groups;

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geom::{minimal_rotation, procrustes_rotation, Mat3, Vec3};
use crate::model::Scene;
use crate::nn::Mlp;
use crate::real::Real;
use crate::scaffold::TriMesh;

type V3 = Vec3<f64>;

/// Named set of vertex ids, optionally carrying a UV per vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexSelection {
    pub name: String,
    pub ids: Vec<u32>,
    pub uvs: Option<Vec<[f64; 2]>>,
}

impl VertexSelection {
    pub fn new(name: impl Into<String>, ids: Vec<u32>) -> Self {
        Self { name: name.into(), ids, uvs: None }
    }

    pub fn with_uvs(name: impl Into<String>, ids: Vec<u32>, uvs: Vec<[f64; 2]>) -> Self {
        Self { name: name.into(), ids, uvs: Some(uvs) }
    }

    pub fn validate(&self, vertex_count: usize, need_uvs: bool) -> Result<()> {
        if self.ids.is_empty() {
            return Err(Error::Edit(format!("selection '{}' is empty", self.name)));
        }
        if let Some(&bad) = self.ids.iter().find(|&&v| v as usize >= vertex_count) {
            return Err(Error::Edit(format!("selection '{}' names vertex {bad} but the mesh has {vertex_count}", self.name)));
        }
        match &self.uvs {
            Some(uv) if uv.len() != self.ids.len() => {
                Err(Error::Edit(format!("selection '{}' has {} ids but {} UVs", self.name, self.ids.len(), uv.len())))
            }
            Some(uv) if uv.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) => {
                Err(Error::Edit(format!("selection '{}' has a non-finite UV", self.name)))
            }
            None if need_uvs => Err(Error::Edit(format!("selection '{}' needs UV coordinates", self.name))),
            _ => Ok(()),
        }
    }
}

/// Ordered 3D point pairs used to align a source region to a target.
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondences {
    pub pairs: Vec<(V3, V3)>,
}

impl Correspondences {
    pub fn new(pairs: Vec<(V3, V3)>) -> Result<Self> {
        let c = Self { pairs };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pairs.len() < 4 {
            return Err(Error::Edit(format!("need at least 4 correspondences, got {}", self.pairs.len())));
        }
        for (i, a) in self.pairs.iter().enumerate() {
            if !a.0.is_finite() || !a.1.is_finite() {
                return Err(Error::Edit(format!("correspondence {i} is not finite")));
            }
            if self.pairs[..i].iter().any(|b| b.0 == a.0) {
                return Err(Error::Edit(format!("correspondence {i} repeats a source point")));
            }
        }
        Ok(())
    }

    pub fn sources(&self) -> Vec<V3> {
        self.pairs.iter().map(|p| p.0).collect()
    }

    pub fn targets(&self) -> Vec<V3> {
        self.pairs.iter().map(|p| p.1).collect()
    }
}

/// Rotation carrying vertex `i`'s frame from `old` to `new`: the best
/// rotation of its one-ring edges, followed by the minimal rotation that
/// lands the transported reference normal exactly on the new one.
fn vertex_rotation(i: usize, ring: &[u32], old: &[V3], new: &[V3], n_old: V3, n_new: V3) -> Mat3<f64> {
    let mut cov = nalgebra::Matrix3::<f64>::zeros();
    for &j in ring {
        let e = old[j as usize] - old[i];
        let e2 = new[j as usize] - new[i];
        cov += nalgebra::Vector3::new(e2.x, e2.y, e2.z) * nalgebra::Vector3::new(e.x, e.y, e.z).transpose();
    }
    let r = procrustes_rotation(&cov).map(|m| Mat3::from_nalgebra(&m)).unwrap_or_else(Mat3::identity);
    let moved = r.mul_vec(n_old);
    match (moved.try_normalize(), n_new.try_normalize()) {
        (Some(a), Some(b)) => minimal_rotation(a, b).mul_mat(&r),
        _ => r,
    }
}

/// Replace the scaffold vertices and rotate each sign indicator with its
/// vertex's local frame. Reference normals are recomputed from the deformed
/// faces; codes are untouched.
pub fn deform_geometry<T: Real>(scene: &Scene<T>, vertices: Vec<Vec3<T>>) -> Result<Scene<T>> {
    let n = scene.scaffold.vertex_count();
    if vertices.len() != n {
        return Err(Error::Edit(format!("deformation has {} vertices, scaffold has {n}", vertices.len())));
    }
    if vertices.iter().any(|v| !v.is_finite()) {
        return Err(Error::Edit("deformed vertices must be finite".into()));
    }
    let mut out = scene.clone();
    if vertices == scene.scaffold.mesh.vertices {
        return Ok(out);
    }
    let old: Vec<V3> = scene.scaffold.mesh.vertices.iter().map(|v| v.cast()).collect();
    let new: Vec<V3> = vertices.iter().map(|v| v.cast()).collect();
    let new_mesh = TriMesh::new(vertices, scene.scaffold.mesh.faces.clone())?;
    let new_normals = new_mesh.vertex_normals()?;
    let adj = scene.scaffold.mesh.adjacency();
    for i in 0..n {
        let moved = old[i] != new[i] || adj[i].iter().any(|&j| old[j as usize] != new[j as usize]);
        if !moved {
            continue;
        }
        let q = vertex_rotation(i, &adj[i], &old, &new, scene.scaffold.reference_normals[i].cast(), new_normals[i].cast());
        out.scaffold.indicators[i] = q.mul_vec(scene.scaffold.indicators[i].cast()).cast();
    }
    out.scaffold.reference_normals = new_normals;
    out.scaffold.mesh = new_mesh;
    out.rebuild_index()?;
    Ok(out)
}

/// Id of `mlp` in `scene`'s decoder table, appending it if no identical
/// decoder is present.
pub fn intern_decoder<T: Real>(scene: &mut Scene<T>, mlp: &Mlp<T>) -> u32 {
    if let Some(i) = scene.radiance.iter().position(|m| m == mlp) {
        return i as u32;
    }
    scene.radiance.push(mlp.clone());
    (scene.radiance.len() - 1) as u32
}

/// Inverse-distance blend of the `k` nearest candidates. A candidate closer
/// than `eps` is copied exactly. Returns `(weights, candidate indices)`.
fn idw_nearest(dists: &[f64], k: usize, eps: f64) -> Vec<(usize, f64)> {
    let mut order: Vec<usize> = (0..dists.len()).collect();
    order.sort_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(a.cmp(&b)));
    order.truncate(k);
    if let Some(&first) = order.first() {
        if dists[first] <= eps {
            return vec![(first, 1.0)];
        }
    }
    let w: Vec<f64> = order.iter().map(|&i| 1.0 / dists[i]).collect();
    let total: f64 = w.iter().sum();
    order.into_iter().zip(w).map(|(i, w)| (i, w / total)).collect()
}

fn blend_code<T: Real>(codes: &ndarray::Array2<T>, rows: &[(u32, f64)]) -> Vec<T> {
    if let [(v, _)] = rows {
        return codes.row(*v as usize).to_vec();
    }
    let d = codes.ncols();
    let mut acc = vec![0.0f64; d];
    for &(v, w) in rows {
        for (a, &c) in acc.iter_mut().zip(codes.row(v as usize)) {
            *a += w * c.as_f64();
        }
    }
    acc.into_iter().map(T::of).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwapOptions {
    pub arap_iterations: usize,
    /// Neighbours blended per target vertex.
    pub k: usize,
    /// Target vertices farther than this from every deformed source vertex
    /// keep their codes. Defaults to three mean edge lengths of the target.
    pub orphan_radius: Option<f64>,
}

impl Default for SwapOptions {
    fn default() -> Self {
        Self { arap_iterations: 10, k: 4, orphan_radius: None }
    }
}

#[derive(Debug, Clone)]
pub struct SwapResult<T> {
    pub scene: Scene<T>,
    /// Source selection vertices after alignment and ARAP.
    pub deformed_source: Vec<V3>,
    /// Target vertices that kept their original codes.
    pub orphans: Vec<u32>,
}

/// Induced sub-mesh over `ids`: faces whose three corners are selected.
/// Returns the mesh (or `None` without faces) and the selection indices of
/// its vertices.
fn submesh(mesh: &TriMesh<f64>, ids: &[u32]) -> Option<(TriMesh<f64>, Vec<usize>)> {
    let local: BTreeMap<u32, usize> = ids.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let faces: Vec<[usize; 3]> = mesh
        .faces
        .iter()
        .filter_map(|f| Some([*local.get(&f[0])?, *local.get(&f[1])?, *local.get(&f[2])?]))
        .collect();
    if faces.is_empty() {
        return None;
    }
    let mut used: Vec<usize> = faces.iter().flatten().copied().collect();
    used.sort_unstable();
    used.dedup();
    let remap: BTreeMap<usize, u32> = used.iter().enumerate().map(|(i, &s)| (s, i as u32)).collect();
    let verts = used.iter().map(|&s| mesh.vertices[ids[s] as usize]).collect();
    let faces = faces.iter().map(|f| f.map(|s| remap[&s])).collect();
    TriMesh::new(verts, faces).ok().map(|m| (m, used))
}

/// Move the texture of `src_sel` on `src` onto `dst_sel` of `dst`.
///
/// The source region is aligned with the similarity fitted to the
/// correspondences, then bent by ARAP so each correspondence lands on its
/// target. Every target vertex takes the inverse-distance blend of its
/// nearest deformed source codes and the decoder of the nearest one.
pub fn swap_texture<T: Real>(
    src: &Scene<T>,
    dst: &Scene<T>,
    src_sel: &VertexSelection,
    dst_sel: &VertexSelection,
    corr: &Correspondences,
    opts: &SwapOptions,
) -> Result<SwapResult<T>> {
    src_sel.validate(src.scaffold.vertex_count(), false)?;
    dst_sel.validate(dst.scaffold.vertex_count(), false)?;
    corr.validate()?;
    if opts.k == 0 {
        return Err(Error::Edit("swap needs k >= 1".into()));
    }
    let sim = umeyama(&corr.sources(), &corr.targets())?;
    let src_mesh: TriMesh<f64> = src.scaffold.mesh.cast();
    let original: Vec<V3> = src_sel.ids.iter().map(|&v| src_mesh.vertices[v as usize]).collect();
    let mut deformed: Vec<V3> = original.iter().map(|&p| sim.apply(p)).collect();

    if opts.arap_iterations > 0 {
        if let Some((mut sub, used)) = submesh(&src_mesh, &src_sel.ids) {
            for (l, &s) in used.iter().enumerate() {
                sub.vertices[l] = deformed[s];
            }
            // each correspondence pins its nearest selected source vertex
            let mut pins: BTreeMap<u32, (V3, f64)> = BTreeMap::new();
            for (a, b) in &corr.pairs {
                let (l, _) = used
                    .iter()
                    .enumerate()
                    .map(|(l, &s)| (l, (original[s] - *a).norm_squared()))
                    .min_by(|x, y| x.1.total_cmp(&y.1))
                    .expect("sub-mesh has vertices");
                let e = pins.entry(l as u32).or_insert((V3::zero(), 0.0));
                e.0 += sub.vertices[l] + (*b - sim.apply(*a));
                e.1 += 1.0;
            }
            let mut constraints: Vec<(u32, V3)> = pins.into_iter().map(|(l, (p, c))| (l, p * (1.0 / c))).collect();
            // pieces without a correspondence just follow the similarity
            let adj = sub.adjacency();
            let mut reached = vec![false; sub.vertex_count()];
            let mut stack: Vec<u32> = constraints.iter().map(|c| c.0).collect();
            stack.iter().for_each(|&v| reached[v as usize] = true);
            while let Some(v) = stack.pop() {
                for &u in &adj[v as usize] {
                    if !reached[u as usize] {
                        reached[u as usize] = true;
                        stack.push(u);
                    }
                }
            }
            constraints.extend(reached.iter().enumerate().filter(|(_, r)| !**r).map(|(l, _)| (l as u32, sub.vertices[l])));
            let res = arap_deform(&sub, &constraints, opts.arap_iterations)?;
            for (l, &s) in used.iter().enumerate() {
                deformed[s] = res.vertices[l];
            }
        }
    }

    let mut out = dst.clone();
    let radius = opts.orphan_radius.unwrap_or_else(|| 3.0 * dst.scaffold.mesh.mean_edge_length().as_f64());
    let eps = dst.encoding.distance_epsilon;
    let mut decoder_map: BTreeMap<u32, u32> = BTreeMap::new();
    let mut orphans = Vec::new();
    for &t in &dst_sel.ids {
        let p: V3 = dst.scaffold.mesh.vertices[t as usize].cast();
        let dists: Vec<f64> = deformed.iter().map(|q| (*q - p).norm()).collect();
        let picks = idw_nearest(&dists, opts.k, eps);
        let nearest = picks.iter().map(|&(i, _)| i).min_by(|&a, &b| dists[a].total_cmp(&dists[b])).expect("non-empty");
        if dists[nearest] > radius {
            orphans.push(t);
            continue;
        }
        let rows: Vec<(u32, f64)> = picks.iter().map(|&(i, w)| (src_sel.ids[i], w)).collect();
        let code = blend_code(&src.scaffold.texture_codes, &rows);
        out.scaffold.texture_codes.row_mut(t as usize).assign(&ndarray::ArrayView1::from(&code));
        let src_dec = src.scaffold.decoder_ids[src_sel.ids[nearest] as usize];
        let id = *decoder_map.entry(src_dec).or_insert_with(|| intern_decoder(&mut out, &src.radiance[src_dec as usize]));
        out.scaffold.decoder_ids[t as usize] = id;
    }
    if !orphans.is_empty() {
        log::warn!("texture swap: {} target vertices had no source vertex within {radius}: {:?}", orphans.len(), orphans);
    }
    Ok(SwapResult { scene: out, deformed_source: deformed, orphans })
}

/// Source patch for [`fill_texture`]: template vertices of `scene` with
/// local UVs in `[0, 1]^2`.
#[derive(Debug, Clone)]
pub struct FillTemplate<'a, T> {
    pub scene: &'a Scene<T>,
    pub ids: Vec<u32>,
    pub uvs: Vec<[f64; 2]>,
}

/// Position of `uv` inside its tile, in `[0, 1)^2`. Tiles are half-open and
/// the result is snapped to a 1e-9 grid so translates by whole tiles map to
/// bit-identical local coordinates.
pub fn tile_local_uv(uv: [f64; 2], tile: f64) -> [f64; 2] {
    uv.map(|u| {
        let t = u / tile;
        let f = ((t - t.floor()) * 1e9).round() / 1e9;
        if f >= 1.0 {
            0.0
        } else {
            f
        }
    })
}

/// Tile the template over the target selection's UV domain.
pub fn fill_texture<T: Real>(dst: &Scene<T>, dst_sel: &VertexSelection, template: &FillTemplate<T>, tile_size: f64) -> Result<Scene<T>> {
    dst_sel.validate(dst.scaffold.vertex_count(), true)?;
    if template.ids.is_empty() {
        return Err(Error::Edit("fill template is empty".into()));
    }
    if template.ids.len() != template.uvs.len() {
        return Err(Error::Edit("fill template needs one UV per vertex".into()));
    }
    if template.uvs.iter().any(|uv| uv.iter().any(|c| !(0.0..=1.0).contains(c))) {
        return Err(Error::Edit("fill template UVs must lie in [0, 1]".into()));
    }
    if let Some(&bad) = template.ids.iter().find(|&&v| v as usize >= template.scene.scaffold.vertex_count()) {
        return Err(Error::Edit(format!("template vertex {bad} out of range")));
    }
    if !(tile_size > 0.0) || !tile_size.is_finite() {
        return Err(Error::Edit(format!("tile size must be positive, got {tile_size}")));
    }
    let mut out = dst.clone();
    let src = template.scene;
    let eps = dst.encoding.distance_epsilon;
    let mut decoder_map: BTreeMap<u32, u32> = BTreeMap::new();
    let uvs = dst_sel.uvs.as_ref().expect("validated");
    for (&t, &uv) in dst_sel.ids.iter().zip(uvs) {
        let local = tile_local_uv(uv, tile_size);
        let dists: Vec<f64> =
            template.uvs.iter().map(|q| ((q[0] - local[0]).powi(2) + (q[1] - local[1]).powi(2)).sqrt()).collect();
        let picks = idw_nearest(&dists, 4, eps);
        let rows: Vec<(u32, f64)> = picks.iter().map(|&(i, w)| (template.ids[i], w)).collect();
        let code = blend_code(&src.scaffold.texture_codes, &rows);
        out.scaffold.texture_codes.row_mut(t as usize).assign(&ndarray::ArrayView1::from(&code));
        let nearest = template.ids[picks[0].0];
        let src_dec = src.scaffold.decoder_ids[nearest as usize];
        let id = *decoder_map.entry(src_dec).or_insert_with(|| intern_decoder(&mut out, &src.radiance[src_dec as usize]));
        out.scaffold.decoder_ids[t as usize] = id;
    }
    Ok(out)
}
