//! Planar location sets: perturbed observation grids, regular prediction and
//! knot grids, and Z-order (Morton) sorting used before tiling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub x: f64,
    pub y: f64,
}

impl Location {
    pub fn new(x: f64, y: f64) -> Self {
        Location { x, y }
    }

    pub fn dist(&self, other: &Location) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridKind {
    PerturbedGrid,
    RegularGrid,
    Explicit,
}

/// Ordered set of distinct locations. Order matters: Vecchia conditioning and
/// tiling both consume it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationSet {
    points: Vec<Location>,
    pub kind: GridKind,
    pub seed: Option<u64>,
}

/// Axis-aligned rectangle `[xmin, xmax] × [ymin, ymax]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
}

impl Rect {
    pub const UNIT: Rect = Rect {
        xmin: 0.0,
        xmax: 1.0,
        ymin: 0.0,
        ymax: 1.0,
    };

    pub fn new(xmin: f64, xmax: f64, ymin: f64, ymax: f64) -> Self {
        Rect {
            xmin,
            xmax,
            ymin,
            ymax,
        }
    }

    pub fn contains(&self, p: &Location) -> bool {
        p.x >= self.xmin && p.x <= self.xmax && p.y >= self.ymin && p.y <= self.ymax
    }

    fn validate(&self) -> Result<()> {
        let finite = [self.xmin, self.xmax, self.ymin, self.ymax]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.xmax <= self.xmin || self.ymax <= self.ymin {
            return Err(Error::InvalidArgument(format!(
                "degenerate bounds {self:?}"
            )));
        }
        Ok(())
    }
}

/// Spacing rule for [`gen_regular_grid`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridRule {
    /// `k` points per axis at `lo + i·w/(k+1)`, `i = 1..=k`; for `k = 4` on the
    /// unit square this is the `(i/5, j/5)` prediction grid.
    Interior,
    /// `k` points per axis spanning the bounds with both endpoints included
    /// (knot grids). `k = 1` gives the midpoint.
    Endpoints,
}

impl LocationSet {
    /// Builds an explicit set, rejecting non-finite or coincident points.
    pub fn explicit(points: Vec<Location>) -> Result<Self> {
        Self::with_kind(points, GridKind::Explicit, None)
    }

    fn with_kind(points: Vec<Location>, kind: GridKind, seed: Option<u64>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(points.len());
        for (i, p) in points.iter().enumerate() {
            if !p.x.is_finite() || !p.y.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "location {i} is not finite"
                )));
            }
            // +0.0 and -0.0 are the same point
            let key = ((p.x + 0.0).to_bits(), (p.y + 0.0).to_bits());
            if !seen.insert(key) {
                return Err(Error::InvalidArgument(format!(
                    "location {i} ({}, {}) duplicates an earlier location",
                    p.x, p.y
                )));
            }
        }
        Ok(LocationSet { points, kind, seed })
    }

    pub fn points(&self) -> &[Location] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn get(&self, i: usize) -> Location {
        self.points[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Location> {
        self.points.iter()
    }

    /// Reorders the points by `perm` (new position `i` holds old `perm[i]`).
    pub fn permuted(&self, perm: &[usize]) -> LocationSet {
        LocationSet {
            points: perm.iter().map(|&i| self.points[i]).collect(),
            kind: self.kind,
            seed: self.seed,
        }
    }

    pub fn bounding_box(&self) -> Option<Rect> {
        let first = self.points.first()?;
        let mut r = Rect::new(first.x, first.x, first.y, first.y);
        for p in &self.points[1..] {
            r.xmin = r.xmin.min(p.x);
            r.xmax = r.xmax.max(p.x);
            r.ymin = r.ymin.min(p.y);
            r.ymax = r.ymax.max(p.y);
        }
        Some(r)
    }

    /// Order-sensitive FNV-1a hash of the coordinate bits, used to check that
    /// replicates share one location draw.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in &self.points {
            for b in p.x.to_bits().to_le_bytes().iter().chain(&p.y.to_bits().to_le_bytes()) {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

/// Seeded generator used for every random draw in the crate.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Perturbed regular grid on the unit square:
/// `s_{r,l} = n^{-1/2} (r - 0.5 + U, l - 0.5 + V)` with `U, V ~ U[-0.4, 0.4]`,
/// listed in lexicographic `(r, l)` order.
pub fn gen_perturbed_grid(n: usize, seed: u64) -> Result<LocationSet> {
    let k = perfect_sqrt(n)
        .ok_or_else(|| Error::InvalidArgument(format!("n = {n} is not a positive perfect square")))?;
    let mut rng = seeded_rng(seed);
    let scale = 1.0 / k as f64;
    let mut points = Vec::with_capacity(n);
    for r in 1..=k {
        for l in 1..=k {
            let u: f64 = rng.random_range(-0.4..=0.4);
            let v: f64 = rng.random_range(-0.4..=0.4);
            points.push(Location::new(
                scale * (r as f64 - 0.5 + u),
                scale * (l as f64 - 0.5 + v),
            ));
        }
    }
    LocationSet::with_kind(points, GridKind::PerturbedGrid, Some(seed))
}

fn perfect_sqrt(n: usize) -> Option<usize> {
    if n == 0 {
        return None;
    }
    let mut k = (n as f64).sqrt().round() as usize;
    while k * k > n {
        k -= 1;
    }
    while (k + 1) * (k + 1) <= n {
        k += 1;
    }
    (k * k == n).then_some(k)
}

/// `k × k` evenly spaced grid over `bounds`, x-major order.
pub fn gen_regular_grid(k: usize, bounds: Rect, rule: GridRule) -> Result<LocationSet> {
    if k == 0 {
        return Err(Error::InvalidArgument("grid side count must be >= 1".into()));
    }
    bounds.validate()?;
    let axis = |lo: f64, hi: f64| -> Vec<f64> {
        let w = hi - lo;
        match rule {
            GridRule::Interior => (1..=k).map(|i| lo + w * i as f64 / (k + 1) as f64).collect(),
            GridRule::Endpoints if k == 1 => vec![lo + 0.5 * w],
            GridRule::Endpoints => (0..k).map(|i| lo + w * i as f64 / (k - 1) as f64).collect(),
        }
    };
    let xs = axis(bounds.xmin, bounds.xmax);
    let ys = axis(bounds.ymin, bounds.ymax);
    let points = xs
        .iter()
        .flat_map(|&x| ys.iter().map(move |&y| Location::new(x, y)))
        .collect();
    LocationSet::with_kind(points, GridKind::RegularGrid, None)
}

const MORTON_BITS: u32 = 16;

/// Permutation sorting the set along the Z-order curve. Coordinates are
/// quantized to 16 bits per axis over the bounding box; x supplies the low
/// bit of each interleaved pair. Ties keep input order.
pub fn morton_order(locs: &LocationSet) -> Vec<usize> {
    let Some(bb) = locs.bounding_box() else {
        return Vec::new();
    };
    let max_q = f64::from((1u32 << MORTON_BITS) - 1);
    let quantize = |v: f64, lo: f64, hi: f64| -> u32 {
        if hi > lo {
            (((v - lo) / (hi - lo)) * max_q).round().clamp(0.0, max_q) as u32
        } else {
            0
        }
    };
    let codes: Vec<u64> = locs
        .iter()
        .map(|p| {
            let qx = quantize(p.x, bb.xmin, bb.xmax);
            let qy = quantize(p.y, bb.ymin, bb.ymax);
            spread_bits(qx) | (spread_bits(qy) << 1)
        })
        .collect();
    let mut perm: Vec<usize> = (0..locs.len()).collect();
    perm.sort_by_key(|&i| codes[i]);
    perm
}

fn spread_bits(v: u32) -> u64 {
    let mut x = u64::from(v) & 0xffff;
    x = (x | (x << 8)) & 0x00ff_00ff;
    x = (x | (x << 4)) & 0x0f0f_0f0f;
    x = (x | (x << 2)) & 0x3333_3333;
    x = (x | (x << 1)) & 0x5555_5555;
    x
}
