//! Reference implementations that share no code with the library.

#![allow(dead_code)]

use lqg_core::{Field, GridSpec, LqgParams, VertexSet};

/// Directed edge list of the king-move lattice restricted to `mask`, with
/// `|step| · spacing · (e^{ξh(u)} + e^{ξh(v)}) / 2` weights.
pub fn king_edges(field: &Field, params: &LqgParams, mask: &VertexSet) -> Vec<(usize, usize, f64)> {
    let g = field.grid();
    let xi = params.xi();
    let mut edges = Vec::new();
    for j in 0..g.ny {
        for i in 0..g.nx {
            let u = j * g.nx + i;
            if !mask.contains(u) {
                continue;
            }
            for dj in -1i64..=1 {
                for di in -1i64..=1 {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let (k, l) = (i as i64 + di, j as i64 + dj);
                    if k < 0 || l < 0 || k >= g.nx as i64 || l >= g.ny as i64 {
                        continue;
                    }
                    let v = l as usize * g.nx + k as usize;
                    if !mask.contains(v) {
                        continue;
                    }
                    let len = if di != 0 && dj != 0 { 2f64.sqrt() } else { 1.0 };
                    let w = len * g.spacing * 0.5 * ((xi * field.value(u)).exp() + (xi * field.value(v)).exp());
                    edges.push((u, v, w));
                }
            }
        }
    }
    edges
}

/// Single-source distances by repeated relaxation until nothing changes.
pub fn bellman_ford(n: usize, edges: &[(usize, usize, f64)], source: usize) -> Vec<f64> {
    let mut d = vec![f64::INFINITY; n];
    d[source] = 0.0;
    loop {
        let mut changed = false;
        for &(u, v, w) in edges {
            if d[u] + w < d[v] {
                d[v] = d[u] + w;
                changed = true;
            }
        }
        if !changed {
            return d;
        }
    }
}

/// All-pairs distances.
pub fn floyd_warshall(n: usize, edges: &[(usize, usize, f64)]) -> Vec<Vec<f64>> {
    let mut d = vec![vec![f64::INFINITY; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0.0;
    }
    for &(u, v, w) in edges {
        d[u][v] = d[u][v].min(w);
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[i][k] + d[k][j];
                if via < d[i][j] {
                    d[i][j] = via;
                }
            }
        }
    }
    d
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

pub fn unit_grid(nx: usize, ny: usize) -> GridSpec {
    GridSpec::new(lqg_core::ComplexPoint::ORIGIN, 1.0, nx, ny).unwrap()
}
