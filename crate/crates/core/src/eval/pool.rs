//! Pooling heads for the ablation baselines.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Pyramid bins per channel: four quadrants and the whole map.
pub const SPP_BINS: usize = 5;

/// Split `0..side` into halves; odd sides share the middle cell and a
/// single cell belongs to both halves.
fn halves(side: usize) -> [std::ops::Range<usize>; 2] {
    [0..side.div_ceil(2), side / 2..side]
}

/// Cell lists (flat `y·side + x`) of the five bins in order top-left,
/// top-right, bottom-left, bottom-right, global.
fn bins(side: usize) -> Vec<Vec<usize>> {
    let [lo, hi] = halves(side);
    let mut out = Vec::with_capacity(SPP_BINS);
    for ys in [&lo, &hi] {
        for xs in [&lo, &hi] {
            out.push(ys.clone().flat_map(|y| xs.clone().map(move |x| y * side + x)).collect());
        }
    }
    out.push((0..side * side).collect());
    out
}

fn check(z: &Tensor, side: usize) -> Result<(usize, usize)> {
    let (c, n) = z.dims2();
    if n != side * side {
        return Err(Error::Shape(format!("pooling expects C×{}, got {:?}", side * side, z.shape())));
    }
    Ok((c, n))
}

/// `C·5` pyramid maxima, channel-major.
pub fn spp_pool(z: &Tensor, side: usize) -> Result<Vec<f64>> {
    let (c, n) = check(z, side)?;
    let bins = bins(side);
    let d = z.data();
    Ok((0..c)
        .flat_map(|ch| {
            bins.iter()
                .map(move |b| b.iter().map(|&i| d[ch * n + i]).fold(f64::NEG_INFINITY, f64::max))
        })
        .collect())
}

/// Per-channel spatial mean.
pub fn global_pool(z: &Tensor) -> Vec<f64> {
    let (c, n) = z.dims2();
    z.data()[..c * n].chunks(n).map(|row| row.iter().sum::<f64>() / n as f64).collect()
}

/// Graph version of [`spp_pool`]: a `C·5 × 1` column.
pub fn spp_pool_var(g: &mut Graph, z: Var, side: usize) -> Result<Var> {
    let (c, n) = check(g.value(z), side)?;
    let bins = bins(side);
    let mut idx = Vec::with_capacity(c * SPP_BINS * n);
    for ch in 0..c {
        for b in &bins {
            // pad with the bin's first cell; duplicates do not change a max
            idx.extend((0..n).map(|k| Some(ch * n + b[k.min(b.len() - 1)])));
        }
    }
    let windows = g.gather(z, &idx, &[c * SPP_BINS, n])?;
    Ok(g.max_rows(windows))
}

/// Graph version of [`global_pool`]: a `C × 1` column.
pub fn global_pool_var(g: &mut Graph, z: Var) -> Result<Var> {
    let (_, n) = g.value(z).dims2();
    let s = g.sum_rows(z);
    Ok(g.scale(s, 1.0 / n as f64))
}
