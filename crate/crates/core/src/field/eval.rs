//! Batched decoder evaluation.
//!
//! [`GeometryPass`] evaluates `s` and, optionally, `grad_x s` by pushing three
//! forward tangents (one per axis) through the interpolation, the encoding
//! and the geometry MLP. Its reverse pass differentiates both the value and
//! the tangents, which is what the eikonal term and the radiance decoder's
//! `grad s` input need. [`RadiancePass`] groups neighbours by radiance decoder
//! and blends per-group colours.
//!
//! The neighbour set is treated as constant in `x`.

use std::collections::BTreeMap;

use ndarray::Array2;

use super::encoding::{encode_backward, encode_into, encode_tangent_backward, encode_tangent_into, encoded_len};
use super::inverse_distance;
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::model::{Scene, SceneGrad};
use crate::nn::MlpTape;
use crate::real::Real;
use crate::scaffold::SpatialIndex;

/// Fixed-width neighbour lists for a batch of points.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood<T> {
    k: usize,
    ids: Vec<u32>,
    dists: Vec<T>,
}

impl<T: Real> Neighborhood<T> {
    /// `min(k, V)` nearest vertices of every point.
    pub fn query(index: &SpatialIndex<T>, points: &[Vec3<T>], k: usize) -> Self {
        let k = k.min(index.vertex_count());
        let mut ids = Vec::with_capacity(points.len() * k);
        let mut dists = Vec::with_capacity(points.len() * k);
        let mut buf = Vec::with_capacity(k);
        for &p in points {
            index.knn_into(p, k, &mut buf);
            for &(i, d) in &buf {
                ids.push(i);
                dists.push(d);
            }
        }
        Self { k, ids, dists }
    }

    pub fn from_parts(k: usize, ids: Vec<u32>, dists: Vec<T>) -> Result<Self> {
        if k == 0 || ids.len() != dists.len() || ids.len() % k != 0 {
            return Err(Error::ShapeMismatch(format!("{} ids / {} distances with K={k}", ids.len(), dists.len())));
        }
        Ok(Self { k, ids, dists })
    }

    pub fn len(&self) -> usize {
        if self.k == 0 {
            0
        } else {
            self.ids.len() / self.k
        }
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn ids(&self, i: usize) -> &[u32] {
        &self.ids[i * self.k..(i + 1) * self.k]
    }

    pub fn dists(&self, i: usize) -> &[T] {
        &self.dists[i * self.k..(i + 1) * self.k]
    }

    pub fn all_ids(&self) -> &[u32] {
        &self.ids
    }
}

/// Inverse-distance blend of per-decoder-group colours; `distances[g]` is the
/// smallest neighbour distance inside group `g`.
pub fn blend_groups<T: Real>(colors: &[[T; 3]], distances: &[T], eps: f64) -> Result<[T; 3]> {
    if colors.is_empty() || colors.len() != distances.len() {
        return Err(Error::InvalidArgument(format!(
            "blend_groups needs matching non-empty inputs, got {} colours and {} distances",
            colors.len(),
            distances.len()
        )));
    }
    let eps = T::of(eps);
    let w: Vec<T> = distances.iter().map(|&d| inverse_distance(d, eps)).collect();
    let total: T = w.iter().copied().sum();
    let mut out = [T::zero(); 3];
    for (c, &wg) in colors.iter().zip(&w) {
        for ch in 0..3 {
            out[ch] += wg / total * c[ch];
        }
    }
    Ok(out)
}

/// Forward state of the geometry decoder over a batch of points.
#[derive(Debug, Clone)]
pub struct GeometryPass<T> {
    n: usize,
    k: usize,
    tangents: bool,
    ids: Vec<u32>,
    /// Normalised interpolation weights and their spatial gradients.
    weights: Vec<T>,
    dweights: Vec<Vec3<T>>,
    offsets: Vec<Vec3<T>>,
    /// Interpolated `h~` and its gradient.
    pub h: Vec<T>,
    pub dh: Vec<Vec3<T>>,
    /// Interpolated geometry codes (`n x D`).
    pub code: Array2<T>,
    /// Their spatial tangents, row `j * n + i` for axis `j`.
    code_dot: Array2<T>,
    tape: MlpTape<T>,
    pub sdf: Vec<T>,
    /// `grad_x s`; zero when tangents were not requested.
    pub grad: Vec<Vec3<T>>,
}

impl<T: Real> GeometryPass<T> {
    pub fn forward(scene: &Scene<T>, points: &[Vec3<T>], nb: &Neighborhood<T>, tangents: bool) -> Result<Self> {
        let n = points.len();
        if nb.len() != n {
            return Err(Error::ShapeMismatch(format!("{} points but {} neighbour lists", n, nb.len())));
        }
        let cfg = &scene.encoding;
        let omega = T::of(cfg.omega_n);
        let eps = T::of(cfg.distance_epsilon);
        let sc = &scene.scaffold;
        let d = sc.code_dim();
        let k = nb.k();
        let mut weights = Vec::with_capacity(n * k);
        let mut dweights = Vec::with_capacity(if tangents { n * k } else { 0 });
        let mut offsets = Vec::with_capacity(n * k);
        let mut h = vec![T::zero(); n];
        let mut dh = vec![Vec3::zero(); n];
        let mut code = Array2::zeros((n, d));
        let mut code_dot = Array2::zeros((if tangents { 3 * n } else { 0 }, d));
        let mut raw = vec![T::zero(); k];
        let mut draw = vec![Vec3::zero(); k];
        for (i, &x) in points.iter().enumerate() {
            let ids = nb.ids(i);
            let mut wsum = T::zero();
            let mut dwsum = Vec3::zero();
            let base = offsets.len();
            for (kk, &id) in ids.iter().enumerate() {
                let p = x - sc.mesh.vertices[id as usize];
                let r = p.norm();
                let w = inverse_distance(r, eps);
                raw[kk] = w;
                wsum += w;
                if tangents {
                    // d(1/r)/dx = -p / r^3 while the clamp is inactive
                    draw[kk] = if r > eps { p * (-(w * w * w)) } else { Vec3::zero() };
                    dwsum += draw[kk];
                }
                offsets.push(p);
            }
            let mut hi = T::zero();
            let mut dhi = Vec3::zero();
            for (kk, &id) in ids.iter().enumerate() {
                let id = id as usize;
                let wk = raw[kk] / wsum;
                weights.push(wk);
                let p = offsets[base + kk];
                let r = p.norm();
                let nk = sc.indicators[id];
                let hk = if r > T::zero() { (omega * p.dot(nk) + r * r) / (omega + r) } else { T::zero() };
                hi += wk * hk;
                let row = sc.geometry_codes.row(id);
                let mut crow = code.row_mut(i);
                crow.scaled_add(wk, &row);
                if tangents {
                    let dwk = (draw[kk] - dwsum * wk) * (T::one() / wsum);
                    dweights.push(dwk);
                    let p_hat = if r > T::zero() { p * (T::one() / r) } else { Vec3::zero() };
                    let dhk = (nk * omega + p * T::of(2.0) - p_hat * hk) * (T::one() / (omega + r));
                    dhi += dwk * hk + dhk * wk;
                    for j in 0..3 {
                        code_dot.row_mut(j * n + i).scaled_add(dwk[j], &row);
                    }
                }
            }
            h[i] = hi;
            dh[i] = dhi;
        }

        let cw = encoded_len(d, cfg.freq_code);
        let hw = encoded_len(1, cfg.freq_h);
        let mut input = Array2::zeros((n, cw + hw));
        let mut input_dot = if tangents { Some(Array2::zeros((3 * n, cw + hw))) } else { None };
        for i in 0..n {
            let mut row = input.row_mut(i);
            let row = row.as_slice_mut().expect("standard layout");
            let crow = code.row(i);
            let crow = crow.as_slice().expect("standard layout");
            encode_into(crow, cfg.freq_code, &mut row[..cw]);
            encode_into(&[h[i]], cfg.freq_h, &mut row[cw..]);
            if let Some(xd) = input_dot.as_mut() {
                for j in 0..3 {
                    let mut drow = xd.row_mut(j * n + i);
                    let drow = drow.as_slice_mut().expect("standard layout");
                    let cd = code_dot.row(j * n + i);
                    encode_tangent_into(&row[..cw], cd.as_slice().expect("standard layout"), cfg.freq_code, &mut drow[..cw]);
                    encode_tangent_into(&row[cw..], &[dh[i][j]], cfg.freq_h, &mut drow[cw..]);
                }
            }
        }
        let out = scene.geometry.forward(input, input_dot)?;
        let sdf: Vec<T> = out.value.column(0).to_vec();
        let grad = match &out.tangent {
            Some(t) => (0..n).map(|i| Vec3::new(t[[i, 0]], t[[n + i, 0]], t[[2 * n + i, 0]])).collect(),
            None => vec![Vec3::zero(); n],
        };
        Ok(Self {
            n,
            k,
            tangents,
            ids: nb.all_ids().to_vec(),
            weights,
            dweights,
            offsets,
            h,
            dh,
            code,
            code_dot,
            tape: out.tape,
            sdf,
            grad,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Accumulate into `g` the gradients of
    /// `<sdf_bar, s> + <grad_bar, grad s> + <h_bar, h~>`.
    /// Indicator gradients are skipped when `indicators` is false.
    pub fn backward(
        &self,
        scene: &Scene<T>,
        sdf_bar: &[T],
        grad_bar: Option<&[Vec3<T>]>,
        h_bar: Option<&[T]>,
        g: &mut SceneGrad<T>,
        indicators: bool,
    ) -> Result<()> {
        let n = self.n;
        if sdf_bar.len() != n || grad_bar.is_some_and(|gb| gb.len() != n) || h_bar.is_some_and(|hb| hb.len() != n) {
            return Err(Error::ShapeMismatch("geometry cotangent length differs from batch".into()));
        }
        if grad_bar.is_some() && !self.tangents {
            return Err(Error::InvalidArgument("gradient cotangent given but the pass has no tangents".into()));
        }
        let cfg = &scene.encoding;
        let omega = T::of(cfg.omega_n);
        let d = self.code.ncols();
        let cw = encoded_len(d, cfg.freq_code);
        let value_bar = Array2::from_shape_fn((n, 1), |(i, _)| sdf_bar[i]);
        // without a gradient cotangent the tangents carry no adjoint
        let tangent_bar = grad_bar.map(|gb| Array2::from_shape_fn((3 * n, 1), |(r, _)| gb[r % n][r / n]));
        let (xb, xdb) = scene.geometry.backward(&self.tape, value_bar.view(), tangent_bar.as_ref().map(|t| t.view()), &mut g.geometry)?;

        let mut code_bar = vec![T::zero(); d];
        let mut code_dot_bar = [vec![T::zero(); d], vec![T::zero(); d], vec![T::zero(); d]];
        for i in 0..n {
            code_bar.iter_mut().for_each(|v| *v = T::zero());
            let mut hb = [h_bar.map_or(T::zero(), |hb| hb[i])];
            let mut hdb = [T::zero(); 3];
            let enc = self.tape.input().row(i);
            let enc = enc.as_slice().expect("standard layout");
            let xr = xb.row(i);
            let xr = xr.as_slice().expect("standard layout");
            encode_backward(&enc[..cw], cfg.freq_code, &xr[..cw], &mut code_bar);
            encode_backward(&enc[cw..], cfg.freq_h, &xr[cw..], &mut hb);
            if let Some(xdb) = &xdb {
                for j in 0..3 {
                    code_dot_bar[j].iter_mut().for_each(|v| *v = T::zero());
                    let xdr = xdb.row(j * n + i);
                    let xdr = xdr.as_slice().expect("standard layout");
                    let cd = self.code_dot.row(j * n + i);
                    encode_tangent_backward(
                        &enc[..cw],
                        cd.as_slice().expect("standard layout"),
                        cfg.freq_code,
                        &xdr[..cw],
                        &mut code_bar,
                        &mut code_dot_bar[j],
                    );
                    let mut hd = [T::zero()];
                    encode_tangent_backward(&enc[cw..], &[self.dh[i][j]], cfg.freq_h, &xdr[cw..], &mut hb, &mut hd);
                    hdb[j] = hd[0];
                }
            }
            let hdb = Vec3::from_array(hdb);
            for kk in 0..self.k {
                let e = i * self.k + kk;
                let id = self.ids[e] as usize;
                let wk = self.weights[e];
                let mut grow = g.geometry_codes.row_mut(id);
                for (gv, &cb) in grow.iter_mut().zip(&code_bar) {
                    *gv += wk * cb;
                }
                if xdb.is_some() {
                    let dwk = self.dweights[e];
                    for (c, gv) in grow.iter_mut().enumerate() {
                        *gv += dwk.x * code_dot_bar[0][c] + dwk.y * code_dot_bar[1][c] + dwk.z * code_dot_bar[2][c];
                    }
                }
                if indicators {
                    let p = self.offsets[e];
                    let r = p.norm();
                    let denom = T::one() / (omega + r);
                    let mut hkb = wk * hb[0];
                    let mut nb = Vec3::zero();
                    if xdb.is_some() {
                        hkb += self.dweights[e].dot(hdb);
                        // d(dh_k)/dn contracted with the tangent adjoint
                        let gv = hdb * wk;
                        let p_hat = if r > T::zero() { p * (T::one() / r) } else { Vec3::zero() };
                        nb += gv * (omega * denom) - p * (omega * gv.dot(p_hat) * denom * denom);
                    }
                    nb += p * (hkb * omega * denom);
                    g.indicators[id] += nb;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct GroupEntry<T> {
    point: usize,
    decoder: u32,
    blend: T,
    start: usize,
    len: usize,
}

#[derive(Debug, Clone)]
struct DecoderBatch<T> {
    decoder: u32,
    entries: Vec<usize>,
    tape: MlpTape<T>,
}

/// Forward state of the radiance decoders over a batch of points.
#[derive(Debug, Clone)]
pub struct RadiancePass<T> {
    n: usize,
    entries: Vec<GroupEntry<T>>,
    /// `(vertex, weight within its group)`.
    members: Vec<(u32, T)>,
    batches: Vec<DecoderBatch<T>>,
    pub colors: Vec<[T; 3]>,
}

impl<T: Real> RadiancePass<T> {
    pub fn forward(
        scene: &Scene<T>,
        nb: &Neighborhood<T>,
        h: &[T],
        grad: &[Vec3<T>],
        dirs: &[Vec3<T>],
    ) -> Result<Self> {
        let n = nb.len();
        if h.len() != n || grad.len() != n || dirs.len() != n {
            return Err(Error::ShapeMismatch("radiance inputs differ in length".into()));
        }
        let cfg = &scene.encoding;
        let eps = T::of(cfg.distance_epsilon);
        let sc = &scene.scaffold;
        let mut entries = Vec::with_capacity(n);
        let mut members = Vec::with_capacity(n * nb.k());
        let mut groups: Vec<(u32, T, T, usize)> = Vec::new();
        for i in 0..n {
            groups.clear();
            for (&id, &dist) in nb.ids(i).iter().zip(nb.dists(i)) {
                let dec = sc.decoder_ids[id as usize];
                let w = inverse_distance(dist, eps);
                match groups.iter_mut().find(|g| g.0 == dec) {
                    Some(g) => {
                        g.1 += w;
                        g.2 = g.2.min(dist);
                        g.3 += 1;
                    }
                    None => groups.push((dec, w, dist, 1)),
                }
            }
            let total: T = groups.iter().map(|g| inverse_distance(g.2, eps)).sum();
            for &(dec, wsum, dmin, count) in &groups {
                let start = members.len();
                for (&id, &dist) in nb.ids(i).iter().zip(nb.dists(i)) {
                    if sc.decoder_ids[id as usize] == dec {
                        members.push((id, inverse_distance(dist, eps) / wsum));
                    }
                }
                entries.push(GroupEntry {
                    point: i,
                    decoder: dec,
                    blend: inverse_distance(dmin, eps) / total,
                    start,
                    len: count,
                });
            }
        }

        let mut by_decoder: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (e, entry) in entries.iter().enumerate() {
            by_decoder.entry(entry.decoder).or_default().push(e);
        }
        let d = sc.code_dim();
        let cw = encoded_len(d, cfg.freq_code);
        let hw = encoded_len(1, cfg.freq_h);
        let dw = encoded_len(3, cfg.freq_dir);
        let mut colors = vec![[T::zero(); 3]; n];
        let mut batches = Vec::with_capacity(by_decoder.len());
        for (dec, rows) in by_decoder {
            let mlp = scene
                .radiance
                .get(dec as usize)
                .ok_or_else(|| Error::InvalidArgument(format!("radiance decoder {dec} does not exist")))?;
            let m = rows.len();
            let mut code = vec![T::zero(); d];
            let mut input = Array2::zeros((m, cw + hw + dw + 3));
            for (r, &e) in rows.iter().enumerate() {
                let entry = entries[e];
                code.iter_mut().for_each(|v| *v = T::zero());
                for &(id, w) in &members[entry.start..entry.start + entry.len] {
                    for (c, &t) in code.iter_mut().zip(sc.texture_codes.row(id as usize)) {
                        *c += w * t;
                    }
                }
                let i = entry.point;
                let mut xrow = input.row_mut(r);
                let xrow = xrow.as_slice_mut().expect("standard layout");
                encode_into(&code, cfg.freq_code, &mut xrow[..cw]);
                encode_into(&[h[i]], cfg.freq_h, &mut xrow[cw..cw + hw]);
                encode_into(&dirs[i].to_array(), cfg.freq_dir, &mut xrow[cw + hw..cw + hw + dw]);
                xrow[cw + hw + dw..].copy_from_slice(&grad[i].to_array());
            }
            let out = mlp.forward(input, None)?;
            for (r, &e) in rows.iter().enumerate() {
                let entry = entries[e];
                for ch in 0..3 {
                    colors[entry.point][ch] += entry.blend * out.value[[r, ch]];
                }
            }
            batches.push(DecoderBatch { decoder: dec, entries: rows, tape: out.tape });
        }
        Ok(Self { n, entries, members, batches, colors })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Vertices whose texture codes influence this batch.
    pub fn touched_vertices(&self) -> impl Iterator<Item = u32> + '_ {
        self.members.iter().map(|m| m.0)
    }

    /// Accumulate gradients of `<color_bar, c>` into `g` (texture codes and
    /// radiance decoders) and into the cotangents of `h~` and `grad s`.
    pub fn backward(
        &self,
        scene: &Scene<T>,
        color_bar: &[[T; 3]],
        g: &mut SceneGrad<T>,
        h_bar: &mut [T],
        grad_bar: &mut [Vec3<T>],
    ) -> Result<()> {
        if color_bar.len() != self.n || h_bar.len() != self.n || grad_bar.len() != self.n {
            return Err(Error::ShapeMismatch("radiance cotangent length differs from batch".into()));
        }
        let cfg = &scene.encoding;
        let d = scene.scaffold.code_dim();
        let cw = encoded_len(d, cfg.freq_code);
        let hw = encoded_len(1, cfg.freq_h);
        let dw = encoded_len(3, cfg.freq_dir);
        let mut code_bar = vec![T::zero(); d];
        for batch in &self.batches {
            let dec = batch.decoder as usize;
            let m = batch.entries.len();
            let value_bar = Array2::from_shape_fn((m, 3), |(r, ch)| {
                let e = self.entries[batch.entries[r]];
                e.blend * color_bar[e.point][ch]
            });
            let (xb, _) = scene.radiance[dec].backward(&batch.tape, value_bar.view(), None, &mut g.radiance[dec])?;
            for (r, &e) in batch.entries.iter().enumerate() {
                let entry = self.entries[e];
                let i = entry.point;
                let xr = xb.row(r);
                let xr = xr.as_slice().expect("standard layout");
                let enc = batch.tape.input().row(r);
                let enc = enc.as_slice().expect("standard layout");
                code_bar.iter_mut().for_each(|v| *v = T::zero());
                encode_backward(&enc[..cw], cfg.freq_code, &xr[..cw], &mut code_bar);
                for &(id, w) in &self.members[entry.start..entry.start + entry.len] {
                    let mut grow = g.texture_codes.row_mut(id as usize);
                    for (gv, &cb) in grow.iter_mut().zip(&code_bar) {
                        *gv += w * cb;
                    }
                }
                encode_backward(&enc[cw..cw + hw], cfg.freq_h, &xr[cw..cw + hw], &mut h_bar[i..i + 1]);
                let o = cw + hw + dw;
                grad_bar[i] += Vec3::new(xr[o], xr[o + 1], xr[o + 2]);
            }
        }
        Ok(())
    }
}
