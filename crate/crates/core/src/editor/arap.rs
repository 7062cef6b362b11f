//! As-rigid-as-possible deformation (local/global alternation).

use nalgebra::DMatrix;
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};

use super::umeyama::rigid_fit;
use crate::error::{Error, Result};
use crate::geom::{procrustes_rotation, Mat3, Vec3};
use crate::scaffold::TriMesh;

type V3 = Vec3<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct ArapResult {
    pub vertices: Vec<V3>,
    /// Energy after initialisation, then after every iteration.
    pub energies: Vec<f64>,
}

/// Symmetric cotangent weights per directed neighbour list. Negative
/// weights (obtuse triangles) are clamped to a small positive floor so the
/// system stays positive definite.
fn cotangent_weights(mesh: &TriMesh<f64>) -> Vec<Vec<(usize, f64)>> {
    let n = mesh.vertex_count();
    let mut acc: std::collections::BTreeMap<(usize, usize), f64> = Default::default();
    for f in &mesh.faces {
        for c in 0..3 {
            let (i, j, k) = (f[c] as usize, f[(c + 1) % 3] as usize, f[(c + 2) % 3] as usize);
            let a = mesh.vertices[j] - mesh.vertices[i];
            let b = mesh.vertices[k] - mesh.vertices[i];
            let s = a.cross(b).norm();
            let cot = if s > 0.0 { a.dot(b) / s } else { 0.0 };
            *acc.entry((j.min(k), j.max(k))).or_default() += 0.5 * cot;
        }
    }
    let floor = 1e-6;
    let mut adj = vec![Vec::new(); n];
    for (&(a, b), &w) in &acc {
        let w = w.max(floor);
        adj[a].push((b, w));
        adj[b].push((a, w));
    }
    adj
}

fn components(adj: &[Vec<(usize, f64)>]) -> Vec<usize> {
    let mut comp = vec![usize::MAX; adj.len()];
    let mut next = 0;
    for s in 0..adj.len() {
        if comp[s] != usize::MAX {
            continue;
        }
        let mut stack = vec![s];
        comp[s] = next;
        while let Some(v) = stack.pop() {
            for &(u, _) in &adj[v] {
                if comp[u] == usize::MAX {
                    comp[u] = next;
                    stack.push(u);
                }
            }
        }
        next += 1;
    }
    comp
}

fn fit_rotations(rest: &[V3], cur: &[V3], adj: &[Vec<(usize, f64)>], prev: &[Mat3<f64>]) -> Vec<Mat3<f64>> {
    (0..rest.len())
        .map(|i| {
            let mut cov = nalgebra::Matrix3::<f64>::zeros();
            for &(j, w) in &adj[i] {
                let e = rest[i] - rest[j];
                let e2 = cur[i] - cur[j];
                cov += nalgebra::Vector3::new(e2.x, e2.y, e2.z) * nalgebra::Vector3::new(e.x, e.y, e.z).transpose() * w;
            }
            procrustes_rotation(&cov).map(|r| Mat3::from_nalgebra(&r)).unwrap_or(prev[i])
        })
        .collect()
}

fn energy(rest: &[V3], cur: &[V3], adj: &[Vec<(usize, f64)>], rot: &[Mat3<f64>]) -> f64 {
    let mut e = 0.0;
    for i in 0..rest.len() {
        for &(j, w) in &adj[i] {
            let r = (cur[i] - cur[j]) - rot[i].mul_vec(rest[i] - rest[j]);
            e += w * r.norm_squared();
        }
    }
    e
}

/// Deform `mesh` so the pinned vertices reach their targets while the rest
/// stays locally rigid. The initial guess is the best rigid fit of the
/// pinned vertices (or a translation when fewer than three are pinned).
pub fn arap_deform(mesh: &TriMesh<f64>, constraints: &[(u32, V3)], iterations: usize) -> Result<ArapResult> {
    mesh.validate()?;
    if constraints.is_empty() {
        return Err(Error::InvalidArgument("ARAP needs at least one constraint".into()));
    }
    let n = mesh.vertex_count();
    let mut pinned: Vec<Option<V3>> = vec![None; n];
    for &(v, p) in constraints {
        let slot = pinned
            .get_mut(v as usize)
            .ok_or_else(|| Error::InvalidArgument(format!("constraint on vertex {v} but the mesh has {n}")))?;
        if !p.is_finite() {
            return Err(Error::InvalidArgument(format!("constraint target for vertex {v} is not finite")));
        }
        *slot = Some(p);
    }
    let adj = cotangent_weights(mesh);
    let comp = components(&adj);
    let n_comp = comp.iter().copied().max().map_or(0, |m| m + 1);
    let mut anchored = vec![false; n_comp];
    for (v, p) in pinned.iter().enumerate() {
        if p.is_some() {
            anchored[comp[v]] = true;
        }
    }
    if let Some(c) = anchored.iter().position(|a| !a) {
        let v = comp.iter().position(|&x| x == c).expect("component has a vertex");
        return Err(Error::Edit(format!("component containing vertex {v} has no constraint")));
    }

    let rest = &mesh.vertices;
    let mut cur = initial_guess(rest, &pinned, &comp, n_comp);

    // free-vertex numbering and the factorised system matrix
    let mut free_id = vec![usize::MAX; n];
    let mut free = Vec::new();
    for v in 0..n {
        if pinned[v].is_none() {
            free_id[v] = free.len();
            free.push(v);
        }
    }
    let chol = if free.is_empty() {
        None
    } else {
        let mut coo = CooMatrix::new(free.len(), free.len());
        for (fi, &v) in free.iter().enumerate() {
            let mut diag = 0.0;
            for &(u, w) in &adj[v] {
                diag += w;
                if free_id[u] != usize::MAX {
                    coo.push(fi, free_id[u], -w);
                }
            }
            coo.push(fi, fi, diag);
        }
        let csc = CscMatrix::from(&coo);
        Some(CscCholesky::factor(&csc).map_err(|e| Error::Degenerate(format!("ARAP system: {e:?}")))?)
    };

    let mut rot = fit_rotations(rest, &cur, &adj, &vec![Mat3::identity(); n]);
    let mut energies = vec![energy(rest, &cur, &adj, &rot)];
    for _ in 0..iterations {
        if let Some(chol) = &chol {
            let mut b = DMatrix::<f64>::zeros(free.len(), 3);
            for (fi, &v) in free.iter().enumerate() {
                let mut r = V3::zero();
                for &(u, w) in &adj[v] {
                    let e = rest[v] - rest[u];
                    r += (rot[v].mul_vec(e) + rot[u].mul_vec(e)) * (0.5 * w);
                    if let Some(p) = pinned[u] {
                        r += p * w;
                    }
                }
                for c in 0..3 {
                    b[(fi, c)] = r[c];
                }
            }
            let x = chol.solve(&b);
            for (fi, &v) in free.iter().enumerate() {
                cur[v] = V3::new(x[(fi, 0)], x[(fi, 1)], x[(fi, 2)]);
            }
        }
        rot = fit_rotations(rest, &cur, &adj, &rot);
        energies.push(energy(rest, &cur, &adj, &rot));
    }
    Ok(ArapResult { vertices: cur, energies })
}

fn initial_guess(rest: &[V3], pinned: &[Option<V3>], comp: &[usize], n_comp: usize) -> Vec<V3> {
    let mut out = rest.to_vec();
    for c in 0..n_comp {
        let (src, dst): (Vec<V3>, Vec<V3>) = pinned
            .iter()
            .enumerate()
            .filter(|(v, p)| comp[*v] == c && p.is_some())
            .map(|(v, p)| (rest[v], p.expect("filtered")))
            .unzip();
        let (r, t) = match rigid_fit(&src, &dst) {
            Ok(fit) => (fit.rotation, fit.translation),
            Err(_) => {
                let k = src.len() as f64;
                let shift = dst.iter().zip(&src).fold(V3::zero(), |a, (d, s)| a + (*d - *s)) * (1.0 / k);
                (Mat3::identity(), shift)
            }
        };
        for v in 0..rest.len() {
            if comp[v] == c {
                out[v] = pinned[v].unwrap_or_else(|| r.mul_vec(rest[v]) + t);
            }
        }
    }
    out
}
