//! Exact squared Euclidean distance transform, two-pass lower-envelope
//! algorithm (1-D parabola envelopes applied along columns, then rows).
//!
//! With 0/infinity inputs on an integer grid every finite output is an exact
//! integer in f64, so distances computed here match naive pairwise search
//! bit for bit after the final square root.

/// 1-D squared distance transform of a sampled function `f`.
fn dt1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let mut s;
        loop {
            let p = v[k];
            s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2 * q - 2 * p) as f64;
            // s is finite (f is finite), so this cannot underrun k = 0 where
            // z[0] is -inf.
            if s <= z[k] {
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    let mut k = 0usize;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let diff = q as f64 - p as f64;
        d[q] = diff * diff + f[p];
    }
}

/// Stand-in for "no site here": finite so the envelope arithmetic never
/// produces inf - inf, yet far above any real squared pixel distance.
const ABSENT: f64 = 1e20;

/// Squared Euclidean distance from every grid cell to the nearest site.
/// Cells with no reachable site (no sites at all) hold `f64::INFINITY`.
pub fn squared_edt(sites: &[bool], width: usize, height: usize) -> Vec<f64> {
    assert_eq!(sites.len(), width * height);
    let mut grid = vec![ABSENT; width * height];
    for (g, s) in grid.iter_mut().zip(sites) {
        if *s {
            *g = 0.0;
        }
    }
    let n = width.max(height);
    let mut f = vec![0.0f64; n];
    let mut d = vec![0.0f64; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];

    // Columns, then rows.
    for x in 0..width {
        for y in 0..height {
            f[y] = grid[y * width + x];
        }
        dt1d(&f[..height], &mut d[..height], &mut v[..height], &mut z[..height + 1]);
        for y in 0..height {
            grid[y * width + x] = d[y];
        }
    }
    for y in 0..height {
        f[..width].copy_from_slice(&grid[y * width..(y + 1) * width]);
        dt1d(&f[..width], &mut d[..width], &mut v[..width], &mut z[..width + 1]);
        grid[y * width..(y + 1) * width].copy_from_slice(&d[..width]);
    }
    for v in grid.iter_mut() {
        if *v >= ABSENT / 2.0 {
            *v = f64::INFINITY;
        }
    }
    grid
}
