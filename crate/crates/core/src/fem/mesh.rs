use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Real;

/// Boundary classification of a mesh edge on `[-1, 1]²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeTag {
    Interior,
    DirichletLeft,
    DirichletRight,
    NeumannTop,
    NeumannBottom,
}

impl EdgeTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            EdgeTag::Interior => "interior",
            EdgeTag::DirichletLeft => "dirichlet_left",
            EdgeTag::DirichletRight => "dirichlet_right",
            EdgeTag::NeumannTop => "neumann_top",
            EdgeTag::NeumannBottom => "neumann_bottom",
        }
    }

    pub fn is_dirichlet(&self) -> bool {
        matches!(self, EdgeTag::DirichletLeft | EdgeTag::DirichletRight)
    }

    pub fn is_neumann(&self) -> bool {
        matches!(self, EdgeTag::NeumannTop | EdgeTag::NeumannBottom)
    }

    pub fn is_boundary(&self) -> bool {
        *self != EdgeTag::Interior
    }
}

/// Named refinement levels of the structured mesh family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeshLevel {
    Coarse,
    Medium,
    Fine,
}

impl MeshLevel {
    pub const ALL: [MeshLevel; 3] = [MeshLevel::Coarse, MeshLevel::Medium, MeshLevel::Fine];

    /// Squares per side.
    pub fn cells(&self) -> usize {
        match self {
            MeshLevel::Coarse => 8,
            MeshLevel::Medium => 32,
            MeshLevel::Fine => 128,
        }
    }

    pub fn elements(&self) -> usize {
        2 * self.cells() * self.cells()
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            MeshLevel::Coarse => "coarse",
            MeshLevel::Medium => "medium",
            MeshLevel::Fine => "fine",
        }
    }
}

impl fmt::Display for MeshLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MeshLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "coarse" => Ok(MeshLevel::Coarse),
            "medium" => Ok(MeshLevel::Medium),
            "fine" => Ok(MeshLevel::Fine),
            other => Err(invalid(format!("unknown mesh level {other:?}"))),
        }
    }
}

/// Conforming triangulation of `[-1, 1]²`.
///
/// Local edge `i` of a triangle is opposite its vertex `i`. Global edges are
/// oriented from the lower to the higher vertex index, with unit normal equal
/// to the tangent rotated clockwise; `signs[t][i]` is `+1` when that normal
/// points out of triangle `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh<T> {
    vertices: Vec<[T; 2]>,
    triangles: Vec<[usize; 3]>,
    edges: Vec<[usize; 2]>,
    tags: Vec<EdgeTag>,
    tri_edges: Vec<[usize; 3]>,
    signs: Vec<[i8; 3]>,
}

impl<T: Real> Mesh<T> {
    /// Uniform `n x n` squares, each split along its lower-left to upper-right diagonal.
    pub fn structured(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(invalid(format!("mesh needs at least 2 cells per side, got {n}")));
        }
        let np = n + 1;
        let coord = |i: usize| T::of(-1.0 + 2.0 * i as f64 / n as f64);
        let mut vertices = Vec::with_capacity(np * np);
        for j in 0..np {
            for i in 0..np {
                vertices.push([coord(i), coord(j)]);
            }
        }
        let mut triangles = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let v00 = j * np + i;
                let v10 = v00 + 1;
                let v01 = v00 + np;
                let v11 = v01 + 1;
                triangles.push([v00, v10, v11]);
                triangles.push([v00, v11, v01]);
            }
        }
        Self::from_triangles(vertices, triangles)
    }

    pub fn for_level(level: MeshLevel) -> Self {
        Self::structured(level.cells()).expect("level meshes are valid")
    }

    /// Build edge tables and boundary tags from counterclockwise triangles.
    pub fn from_triangles(vertices: Vec<[T; 2]>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let mut index: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edges = Vec::new();
        let mut tri_edges = Vec::with_capacity(triangles.len());
        let mut signs = Vec::with_capacity(triangles.len());
        let mut count: Vec<u8> = Vec::new();
        for tri in &triangles {
            if tri.iter().any(|&v| v >= vertices.len()) {
                return Err(invalid("triangle references a missing vertex"));
            }
            let mut te = [0usize; 3];
            let mut ts = [0i8; 3];
            for i in 0..3 {
                let a = tri[(i + 1) % 3];
                let b = tri[(i + 2) % 3];
                let key = (a.min(b), a.max(b));
                let e = *index.entry(key).or_insert_with(|| {
                    edges.push([key.0, key.1]);
                    count.push(0);
                    edges.len() - 1
                });
                count[e] += 1;
                te[i] = e;
                ts[i] = if a < b { 1 } else { -1 };
            }
            tri_edges.push(te);
            signs.push(ts);
        }
        if count.iter().any(|&c| c > 2) {
            return Err(invalid("edge shared by more than two triangles"));
        }
        let one = T::one();
        let tol = T::of(1e-12);
        let tags = edges
            .iter()
            .zip(&count)
            .map(|(&[a, b], &c)| {
                if c == 2 {
                    return EdgeTag::Interior;
                }
                let (p, q) = (vertices[a], vertices[b]);
                let on = |k: usize, v: T| (p[k] - v).abs() < tol && (q[k] - v).abs() < tol;
                if on(0, -one) {
                    EdgeTag::DirichletLeft
                } else if on(0, one) {
                    EdgeTag::DirichletRight
                } else if on(1, one) {
                    EdgeTag::NeumannTop
                } else {
                    EdgeTag::NeumannBottom
                }
            })
            .collect();
        let mesh = Self { vertices, triangles, edges, tags, tri_edges, signs };
        for t in 0..mesh.triangles.len() {
            if mesh.area(t) <= T::zero() {
                return Err(invalid(format!("triangle {t} is degenerate or clockwise")));
            }
        }
        Ok(mesh)
    }

    pub fn vertices(&self) -> &[[T; 2]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn tags(&self) -> &[EdgeTag] {
        &self.tags
    }

    pub fn triangle_edges(&self, t: usize) -> [usize; 3] {
        self.tri_edges[t]
    }

    pub fn triangle_signs(&self, t: usize) -> [i8; 3] {
        self.signs[t]
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn corners(&self, t: usize) -> [[T; 2]; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Signed area (positive for counterclockwise).
    pub fn area(&self, t: usize) -> T {
        let [p, q, r] = self.corners(t);
        ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1])) / T::of(2.0)
    }

    pub fn centroid(&self, t: usize) -> [T; 2] {
        let [p, q, r] = self.corners(t);
        let three = T::of(3.0);
        [(p[0] + q[0] + r[0]) / three, (p[1] + q[1] + r[1]) / three]
    }

    pub fn edge_midpoint(&self, e: usize) -> [T; 2] {
        let [a, b] = self.edges[e];
        let two = T::of(2.0);
        [(self.vertices[a][0] + self.vertices[b][0]) / two, (self.vertices[a][1] + self.vertices[b][1]) / two]
    }

    pub fn edge_length(&self, e: usize) -> T {
        let [a, b] = self.edges[e];
        let dx = self.vertices[b][0] - self.vertices[a][0];
        let dy = self.vertices[b][1] - self.vertices[a][1];
        (dx * dx + dy * dy).sqrt()
    }

    /// Plain-text export: `vertices`, `triangles` and `edges` sections.
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "vertices {}", self.vertices.len())?;
        for v in &self.vertices {
            writeln!(out, "{:.17e} {:.17e}", v[0].to_f64_lossy(), v[1].to_f64_lossy())?;
        }
        writeln!(out, "triangles {}", self.triangles.len())?;
        for t in &self.triangles {
            writeln!(out, "{} {} {}", t[0], t[1], t[2])?;
        }
        writeln!(out, "edges {}", self.edges.len())?;
        for (e, tag) in self.edges.iter().zip(&self.tags) {
            writeln!(out, "{} {} {}", e[0], e[1], tag.as_str())?;
        }
        Ok(())
    }
}
