//! Marching-cubes case table, generated from the cube topology.
//!
//! Corner `i` of a cell sits at offset `(i & 1, (i >> 1) & 1, (i >> 2) & 1)`.
//! A corner is inside when its sample is negative. On every face the
//! iso-contour segments are chosen from that face's four signs alone
//! (ambiguous faces keep inside corners apart), so neighbouring cells always
//! agree on shared faces and the resulting surface has no cracks.

use std::sync::LazyLock;

/// Cube edges as `(owning corner, axis)`; the edge runs from the owning corner
/// to `corner | 1 << axis`.
pub const EDGES: [(u8, u8); 12] = {
    let mut edges = [(0u8, 0u8); 12];
    let mut n = 0;
    let mut axis = 0;
    while axis < 3 {
        let mut c = 0;
        while c < 8 {
            if c & (1 << axis) == 0 {
                edges[n] = (c as u8, axis as u8);
                n += 1;
            }
            c += 1;
        }
        axis += 1;
    }
    edges
};

pub fn corner_offset(c: u8) -> [i64; 3] {
    [(c & 1) as i64, ((c >> 1) & 1) as i64, ((c >> 2) & 1) as i64]
}

fn edge_between(a: u8, b: u8) -> usize {
    let (lo, hi) = (a.min(b), a.max(b));
    let axis = (hi ^ lo).trailing_zeros() as u8;
    EDGES
        .iter()
        .position(|&e| e == (lo, axis))
        .expect("corners are adjacent")
}

/// Faces as corner cycles, counter-clockwise seen from outside the cell.
fn faces() -> Vec<[u8; 4]> {
    let mut out = Vec::new();
    for axis in 0..3u8 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in 0..2u8 {
            let at = |du: u8, dv: u8| (side << axis) | (du << u) | (dv << v);
            if side == 1 {
                out.push([at(0, 0), at(1, 0), at(1, 1), at(0, 1)]);
            } else {
                out.push([at(0, 0), at(0, 1), at(1, 1), at(1, 0)]);
            }
        }
    }
    out
}

fn triangulate_case(case: u8, faces: &[[u8; 4]]) -> Vec<[u8; 3]> {
    let inside = |c: u8| case & (1 << c) != 0;
    // successor[e]: the next crossed edge along the oriented contour.
    let mut successor = [None::<usize>; 12];
    for face in faces {
        let cycle: Vec<(usize, bool)> = (0..4)
            .filter_map(|k| {
                let (a, b) = (face[k], face[(k + 1) % 4]);
                (inside(a) != inside(b)).then(|| (k, !inside(a)))
            })
            .collect();
        for (i, &(k, entry)) in cycle.iter().enumerate() {
            if !entry {
                continue;
            }
            let exit = (1..cycle.len())
                .map(|j| cycle[(i + j) % cycle.len()])
                .find(|&(_, is_entry)| !is_entry)
                .map(|(j, _)| j)
                .expect("contour leaves the face");
            let from = edge_between(face[k], face[(k + 1) % 4]);
            let to = edge_between(face[exit], face[(exit + 1) % 4]);
            successor[from] = Some(to);
        }
    }

    let mut tris = Vec::new();
    let mut used = [false; 12];
    for start in 0..12 {
        if used[start] || successor[start].is_none() {
            continue;
        }
        let mut lp = vec![start];
        used[start] = true;
        let mut e = successor[start].unwrap();
        while e != start {
            used[e] = true;
            lp.push(e);
            e = successor[e].expect("closed contour");
        }
        for i in 1..lp.len() - 1 {
            tris.push([lp[0] as u8, lp[i] as u8, lp[i + 1] as u8]);
        }
    }
    tris
}

/// Triangles (as cube-edge triples) for each of the 256 sign configurations,
/// wound so their normals face the outside (positive) region.
pub static TRIANGLES: LazyLock<Vec<Vec<[u8; 3]>>> = LazyLock::new(|| {
    let faces = faces();
    (0..=255u8)
        .map(|case| triangulate_case(case, &faces))
        .collect()
});

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn crossed(case: u8, e: usize) -> bool {
        let (c, axis) = EDGES[e];
        (case >> c) & 1 != (case >> (c | 1 << axis)) & 1
    }

    fn midpoint(e: u8) -> Vector3<f64> {
        let (c, axis) = EDGES[e as usize];
        let mut p = corner_offset(c).map(|v| v as f64);
        p[axis as usize] += 0.5;
        Vector3::new(p[0], p[1], p[2])
    }

    #[test]
    fn trivial_cases_empty() {
        assert!(TRIANGLES[0].is_empty());
        assert!(TRIANGLES[255].is_empty());
    }

    #[test]
    fn single_corner_case() {
        let t = &TRIANGLES[1];
        assert_eq!(t.len(), 1);
        let mut edges = t[0].to_vec();
        edges.sort();
        assert_eq!(
            edges.iter().map(|&e| EDGES[e as usize]).collect::<Vec<_>>(),
            vec![(0, 0), (0, 1), (0, 2)]
        );
        let [a, b, c] = t[0].map(midpoint);
        // Normal points away from the inside corner at the origin.
        assert!((b - a).cross(&(c - a)).dot(&Vector3::new(1.0, 1.0, 1.0)) > 0.0);
    }

    #[test]
    fn every_case_uses_exactly_the_crossed_edges() {
        for case in 0..=255u8 {
            let used: std::collections::BTreeSet<usize> = TRIANGLES[case as usize]
                .iter()
                .flatten()
                .map(|&e| e as usize)
                .collect();
            let expected: std::collections::BTreeSet<usize> =
                (0..12).filter(|&e| crossed(case, e)).collect();
            assert_eq!(used, expected, "case {case:#04x}");
        }
    }

    #[test]
    fn complementary_cases_mirror_winding() {
        // Inside corners of case c lie on the negative side of each triangle normal.
        for case in 1..255u8 {
            let mut inside = Vector3::zeros();
            let mut outside = Vector3::zeros();
            for c in 0..8u8 {
                let p = corner_offset(c).map(|v| v as f64);
                let p = Vector3::new(p[0], p[1], p[2]);
                if case & (1 << c) != 0 {
                    inside += p;
                } else {
                    outside += p;
                }
            }
            let n_in = case.count_ones() as f64;
            let dir = outside / (8.0 - n_in) - inside / n_in;
            let total: Vector3<f64> = TRIANGLES[case as usize]
                .iter()
                .map(|t| {
                    let [a, b, c] = t.map(midpoint);
                    (b - a).cross(&(c - a))
                })
                .sum();
            if dir.norm() > 1e-9 {
                assert!(total.dot(&dir) > 0.0, "case {case:#04x} wound inwards");
            }
        }
    }
}
