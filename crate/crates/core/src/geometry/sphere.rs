use std::collections::HashSet;

use super::{Point3, SurfaceMesh};
use crate::error::{Error, Result};

fn sub(a: &Point3, b: &Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: &Point3, b: &Point3) -> Point3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: &Point3, b: &Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Triangulated sphere with `n` near-uniform nodes (Fibonacci lattice) centred at the origin.
///
/// The triangulation is the convex hull of the lattice, so every node is a mesh
/// vertex and the surface is closed (`2n - 4` triangles, outward orientation).
pub fn sphere_mesh(n: usize, radius: f64) -> Result<SurfaceMesh> {
    if n < 4 {
        return Err(Error::invalid("node_count", format!("sphere needs at least 4 nodes, got {n}")));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::invalid("radius", format!("must be positive, got {radius}")));
    }
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let nodes: Vec<Point3> = (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            [radius * r * phi.cos(), radius * r * phi.sin(), radius * z]
        })
        .collect();
    let triangles = convex_hull(&nodes)?;
    SurfaceMesh::new(nodes, triangles)
}

/// Incremental hull for points in convex position.
fn convex_hull(points: &[Point3]) -> Result<Vec<[usize; 3]>> {
    let scale = points.iter().map(|p| dot(p, p).sqrt()).fold(0.0, f64::max);
    let eps = 1e-12 * scale * scale * scale;
    let orient = |a: usize, b: usize, c: usize, p: &Point3| {
        let n = cross(&sub(&points[b], &points[a]), &sub(&points[c], &points[a]));
        dot(&n, &sub(p, &points[a]))
    };

    // initial tetrahedron from 0, 1 and the first points that span a volume
    let (a, b) = (0, 1);
    let c = (2..points.len())
        .find(|&c| {
            let n = cross(&sub(&points[b], &points[a]), &sub(&points[c], &points[a]));
            dot(&n, &n).sqrt() > eps
        })
        .ok_or_else(|| Error::InvalidMesh("collinear sphere points".into()))?;
    let d = (2..points.len())
        .find(|&d| d != c && orient(a, b, c, &points[d]).abs() > eps)
        .ok_or_else(|| Error::InvalidMesh("coplanar sphere points".into()))?;

    let mut faces: Vec<[usize; 3]> = Vec::new();
    let centroid = {
        let q = [points[a], points[b], points[c], points[d]];
        [0, 1, 2].map(|k| q.iter().map(|p| p[k]).sum::<f64>() / 4.0)
    };
    for &[x, y, z] in &[[a, b, c], [a, b, d], [a, c, d], [b, c, d]] {
        // orient outward, i.e. away from the interior point
        if orient(x, y, z, &centroid) > 0.0 {
            faces.push([x, z, y]);
        } else {
            faces.push([x, y, z]);
        }
    }

    for p in 0..points.len() {
        if p == a || p == b || p == c || p == d {
            continue;
        }
        let visible: Vec<bool> = faces
            .iter()
            .map(|f| orient(f[0], f[1], f[2], &points[p]) > eps)
            .collect();
        if !visible.iter().any(|&v| v) {
            return Err(Error::InvalidMesh(format!(
                "sphere node {p} is not on the hull"
            )));
        }
        let mut visible_edges = HashSet::new();
        for (f, _) in faces.iter().zip(&visible).filter(|(_, &v)| v) {
            for k in 0..3 {
                visible_edges.insert((f[k], f[(k + 1) % 3]));
            }
        }
        let mut next = Vec::with_capacity(faces.len() + 2);
        let mut horizon = Vec::new();
        for (f, &vis) in faces.iter().zip(&visible) {
            if !vis {
                next.push(*f);
                continue;
            }
            for k in 0..3 {
                let (u, v) = (f[k], f[(k + 1) % 3]);
                if !visible_edges.contains(&(v, u)) {
                    horizon.push((u, v));
                }
            }
        }
        for (u, v) in horizon {
            next.push([u, v, p]);
        }
        faces = next;
    }
    Ok(faces)
}
