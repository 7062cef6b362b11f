use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::real::Real;

/// Indexed triangle mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh<T> {
    pub vertices: Vec<Vec3<T>>,
    pub faces: Vec<[u32; 3]>,
}

impl<T: Real> TriMesh<T> {
    pub fn new(vertices: Vec<Vec3<T>>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let mesh = Self { vertices, faces };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        for (fi, f) in self.faces.iter().enumerate() {
            if let Some(&bad) = f.iter().find(|&&i| i as usize >= n) {
                return Err(Error::InvalidMesh(format!(
                    "face {fi} references vertex {bad} but the mesh has {n} vertices"
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidMesh(format!("face {fi} is degenerate: {f:?}")));
            }
        }
        if let Some(i) = self.vertices.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidMesh(format!("vertex {i} has a non-finite coordinate")));
        }
        Ok(())
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn cast<U: Real>(&self) -> TriMesh<U> {
        TriMesh { vertices: self.vertices.iter().map(|v| v.cast()).collect(), faces: self.faces.clone() }
    }

    /// Unique undirected edges `(a, b)` with `a < b`, sorted.
    pub fn edges(&self) -> Vec<(u32, u32)> {
        let mut edges: Vec<(u32, u32)> = self
            .faces
            .iter()
            .flat_map(|f| [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])])
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    pub fn mean_edge_length(&self) -> T {
        let edges = self.edges();
        if edges.is_empty() {
            return T::zero();
        }
        let total: T = edges
            .iter()
            .map(|&(a, b)| (self.vertices[a as usize] - self.vertices[b as usize]).norm())
            .sum();
        total / T::of(edges.len() as f64)
    }

    pub fn max_edge_length(&self) -> T {
        self.edges()
            .iter()
            .map(|&(a, b)| (self.vertices[a as usize] - self.vertices[b as usize]).norm())
            .fold(T::zero(), T::max)
    }

    /// Vertex adjacency lists built from face edges; neighbours sorted ascending.
    pub fn adjacency(&self) -> Vec<Vec<u32>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for (a, b) in self.edges() {
            adj[a as usize].push(b);
            adj[b as usize].push(a);
        }
        for list in adj.iter_mut() {
            list.sort_unstable();
        }
        adj
    }

    /// Area-weighted vertex normals (sum of un-normalised face normals, then
    /// normalised).
    pub fn vertex_normals(&self) -> Result<Vec<Vec3<T>>> {
        let mut acc = vec![Vec3::zero(); self.vertices.len()];
        let mut touched = vec![false; self.vertices.len()];
        for f in &self.faces {
            let [a, b, c] = f.map(|i| self.vertices[i as usize]);
            let n = (b - a).cross(c - a);
            for &i in f {
                acc[i as usize] += n;
                touched[i as usize] = true;
            }
        }
        acc.into_iter()
            .enumerate()
            .map(|(i, n)| {
                if !touched[i] {
                    return Err(Error::IsolatedVertex(i));
                }
                normalize_precise(n).ok_or_else(|| {
                    Error::InvalidMesh(format!("vertex {i} has zero-area incident faces"))
                })
            })
            .collect()
    }

    /// Unit-radius geodesic sphere built by subdividing an icosahedron;
    /// `10 * 4^n + 2` vertices.
    pub fn icosphere(subdivisions: usize) -> Self {
        let t = (1.0 + 5.0f64.sqrt()) / 2.0;
        let mut verts: Vec<[f64; 3]> = vec![
            [-1.0, t, 0.0],
            [1.0, t, 0.0],
            [-1.0, -t, 0.0],
            [1.0, -t, 0.0],
            [0.0, -1.0, t],
            [0.0, 1.0, t],
            [0.0, -1.0, -t],
            [0.0, 1.0, -t],
            [t, 0.0, -1.0],
            [t, 0.0, 1.0],
            [-t, 0.0, -1.0],
            [-t, 0.0, 1.0],
        ];
        let unit = |v: [f64; 3]| {
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            [v[0] / n, v[1] / n, v[2] / n]
        };
        verts.iter_mut().for_each(|v| *v = unit(*v));
        let mut faces: Vec<[u32; 3]> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        for _ in 0..subdivisions {
            let mut cache = std::collections::HashMap::new();
            let mut midpoint = |a: u32, b: u32, verts: &mut Vec<[f64; 3]>| -> u32 {
                let key = (a.min(b), a.max(b));
                *cache.entry(key).or_insert_with(|| {
                    let (p, q) = (verts[a as usize], verts[b as usize]);
                    verts.push(unit([(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0, (p[2] + q[2]) / 2.0]));
                    (verts.len() - 1) as u32
                })
            };
            let mut next = Vec::with_capacity(faces.len() * 4);
            for [a, b, c] in faces {
                let ab = midpoint(a, b, &mut verts);
                let bc = midpoint(b, c, &mut verts);
                let ca = midpoint(c, a, &mut verts);
                next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
            }
            faces = next;
        }
        Self { vertices: verts.into_iter().map(Vec3::from_f64).collect(), faces }
    }

    /// Axis-aligned box `[-h, h]^3`. Each square side is split into four
    /// triangles around a centre vertex so every corner sees its three sides
    /// with equal area.
    pub fn cube(half: f64) -> Self {
        let h = half;
        let mut vertices: Vec<Vec3<T>> = (0..8)
            .map(|i| {
                Vec3::from_f64([
                    if i & 1 == 0 { -h } else { h },
                    if i & 2 == 0 { -h } else { h },
                    if i & 4 == 0 { -h } else { h },
                ])
            })
            .collect();
        // corners of each side, counter-clockwise seen from outside
        let sides: [[u32; 4]; 6] = [
            [0, 2, 3, 1],
            [4, 5, 7, 6],
            [0, 1, 5, 4],
            [2, 6, 7, 3],
            [0, 4, 6, 2],
            [1, 3, 7, 5],
        ];
        let mut faces = Vec::with_capacity(24);
        for side in sides {
            let c = side
                .iter()
                .fold(Vec3::zero(), |acc, &i| acc + vertices[i as usize])
                * T::of(0.25);
            vertices.push(c);
            let ci = (vertices.len() - 1) as u32;
            for k in 0..4 {
                faces.push([ci, side[k], side[(k + 1) % 4]]);
            }
        }
        Self { vertices, faces }
    }
}

/// Normalise in `f64` so the result is unit length to within the target
/// type's rounding.
fn normalize_precise<T: Real>(v: Vec3<T>) -> Option<Vec3<T>> {
    let d = v.to_f64();
    let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    if n > 0.0 && n.is_finite() {
        Some(Vec3::from_f64([d[0] / n, d[1] / n, d[2] / n]))
    } else {
        None
    }
}

/// Triangle mesh carrying every learnable per-vertex attribute of the field.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshScaffold<T> {
    pub mesh: TriMesh<T>,
    /// `V x D` geometry codes.
    pub geometry_codes: Array2<T>,
    /// `V x D` texture codes.
    pub texture_codes: Array2<T>,
    /// Learnable sign indicators; free 3-vectors.
    pub indicators: Vec<Vec3<T>>,
    pub reference_normals: Vec<Vec3<T>>,
    /// Index into the scene's radiance decoder table.
    pub decoder_ids: Vec<u32>,
}

impl<T: Real> MeshScaffold<T> {
    /// Attach freshly initialised attributes to `mesh`: indicators start at
    /// the reference normals, codes are small seeded uniform noise.
    pub fn from_mesh<R: Rng>(mesh: TriMesh<T>, code_dim: usize, code_init_scale: f64, rng: &mut R) -> Result<Self> {
        mesh.validate()?;
        let normals = mesh.vertex_normals()?;
        let v = mesh.vertex_count();
        let mut init = |_: (usize, usize)| T::of(rng.gen_range(-code_init_scale..=code_init_scale));
        let geometry_codes = Array2::from_shape_fn((v, code_dim), &mut init);
        let texture_codes = Array2::from_shape_fn((v, code_dim), &mut init);
        Ok(Self {
            mesh,
            geometry_codes,
            texture_codes,
            indicators: normals.clone(),
            reference_normals: normals,
            decoder_ids: vec![0; v],
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.mesh.vertex_count()
    }

    pub fn code_dim(&self) -> usize {
        self.geometry_codes.ncols()
    }

    pub fn vertices(&self) -> &[Vec3<T>] {
        &self.mesh.vertices
    }

    pub fn validate(&self) -> Result<()> {
        self.mesh.validate()?;
        let v = self.vertex_count();
        let d = self.code_dim();
        let check = |name: &str, len: usize| {
            if len != v {
                Err(Error::InvalidMesh(format!("{name} has {len} rows, expected {v}")))
            } else {
                Ok(())
            }
        };
        check("geometry codes", self.geometry_codes.nrows())?;
        check("texture codes", self.texture_codes.nrows())?;
        check("indicators", self.indicators.len())?;
        check("reference normals", self.reference_normals.len())?;
        check("decoder ids", self.decoder_ids.len())?;
        if self.texture_codes.ncols() != d {
            return Err(Error::InvalidMesh(format!(
                "texture code dimension {} differs from geometry code dimension {d}",
                self.texture_codes.ncols()
            )));
        }
        for (i, n) in self.reference_normals.iter().enumerate() {
            if (n.norm().as_f64() - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidMesh(format!("reference normal {i} is not unit length")));
            }
        }
        if let Some(i) = self.indicators.iter().position(|n| !n.is_finite()) {
            return Err(Error::InvalidMesh(format!("sign indicator {i} is not finite")));
        }
        if self.geometry_codes.iter().chain(self.texture_codes.iter()).any(|c| !c.is_finite()) {
            return Err(Error::InvalidMesh("non-finite latent code".into()));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> MeshScaffold<U> {
        MeshScaffold {
            mesh: self.mesh.cast(),
            geometry_codes: self.geometry_codes.mapv(|v| U::of(v.as_f64())),
            texture_codes: self.texture_codes.mapv(|v| U::of(v.as_f64())),
            indicators: self.indicators.iter().map(|v| v.cast()).collect(),
            reference_normals: self.reference_normals.iter().map(|v| v.cast()).collect(),
            decoder_ids: self.decoder_ids.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosphere_counts() {
        for (n, v) in [(0, 12), (1, 42), (2, 162), (3, 642)] {
            let m = TriMesh::<f64>::icosphere(n);
            assert_eq!(m.vertex_count(), v);
            m.validate().unwrap();
        }
    }

    #[test]
    fn cube_corner_normal_is_diagonal() {
        let m = TriMesh::<f64>::cube(0.5);
        let normals = m.vertex_normals().unwrap();
        for (v, n) in m.vertices.iter().zip(&normals).take(8) {
            let expected = v.map(|c| c.signum()) * (1.0 / 3f64.sqrt());
            assert!((*n - expected).norm() < 1e-12, "{n:?} vs {expected:?}");
        }
    }

    #[test]
    fn planar_triangle_normals() {
        let m = TriMesh::new(
            vec![Vec3::new(0.0f64, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        for n in m.vertex_normals().unwrap() {
            assert_eq!(n, Vec3::new(0.0, 0.0, 1.0));
        }
    }

    #[test]
    fn icosphere_normals_are_radial() {
        let m = TriMesh::<f64>::icosphere(3);
        let cos5 = 5f64.to_radians().cos();
        for (v, n) in m.vertices.iter().zip(m.vertex_normals().unwrap()) {
            assert!(n.dot(v.normalize()) > cos5);
        }
    }

    #[test]
    fn isolated_vertex_is_named() {
        let m = TriMesh::new(
            vec![
                Vec3::new(0.0f64, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(5.0, 5.0, 5.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert!(matches!(m.vertex_normals(), Err(Error::IsolatedVertex(3))));
    }

    #[test]
    fn out_of_range_face_rejected() {
        let err = TriMesh::new(vec![Vec3::<f64>::zero(); 3], vec![[0, 1, 3]]).unwrap_err();
        assert!(matches!(err, Error::InvalidMesh(_)));
        let err = TriMesh::new(vec![Vec3::<f64>::zero(); 3], vec![[0, 1, 1]]).unwrap_err();
        assert!(matches!(err, Error::InvalidMesh(_)));
    }
}
