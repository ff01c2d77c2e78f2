//! Overlapping patch grid, exhaustive windowed block matching and
//! overlap-averaged aggregation.
//!
//! Patches are vectorized column-major: entry `c * side + r` of a patch
//! vector is the pixel at `(row + r, col + c)`.

use std::cmp::Ordering;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::image::GrayImage;

/// Top-left corner and side length of a square patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PatchRef {
    pub row: usize,
    pub col: usize,
    pub side: usize,
}

impl PatchRef {
    pub fn new(row: usize, col: usize, side: usize) -> Self {
        Self { row, col, side }
    }

    /// Number of pixels `b = side^2`.
    #[inline]
    pub fn len(&self) -> usize {
        self.side * self.side
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.side == 0
    }

    fn fits(&self, img: &GrayImage) -> bool {
        self.row + self.side <= img.height() && self.col + self.side <= img.width()
    }
}

/// An anchor patch together with its most similar patches.
///
/// `members[0]` is the anchor and `distances[j]` is the squared Euclidean
/// distance between the anchor and `members[j]`, non-decreasing in `j`.
/// Column `j` of `data` is the vectorized patch `members[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGroup {
    pub anchor: PatchRef,
    pub members: Vec<PatchRef>,
    pub distances: Vec<f64>,
    pub data: DMatrix<f64>,
}

impl PatchGroup {
    /// Patch length `b`.
    pub fn patch_len(&self) -> usize {
        self.data.nrows()
    }

    /// Group size `m`.
    pub fn size(&self) -> usize {
        self.members.len()
    }
}

/// Positions `0, stride, 2*stride, ...` up to `len - side`, with `len - side`
/// appended when the stride skips it.
pub fn axis_positions(len: usize, side: usize, stride: usize) -> Vec<usize> {
    debug_assert!(stride >= 1 && side <= len);
    let last = len - side;
    let mut out: Vec<usize> = (0..=last).step_by(stride).collect();
    if out.last() != Some(&last) {
        out.push(last);
    }
    out
}

/// Anchor patches on a regular grid that always reaches the bottom and right
/// borders, in row-major order.
pub fn anchor_grid(img: &GrayImage, side: usize, stride: usize) -> Result<Vec<PatchRef>> {
    if stride == 0 {
        return Err(Error::InvalidParameter("stride must be >= 1".to_string()));
    }
    if side == 0 || side > img.width().min(img.height()) {
        return Err(Error::InvalidParameter(format!(
            "patch side {} does not fit a {}x{} image",
            side,
            img.width(),
            img.height()
        )));
    }
    let rows = axis_positions(img.height(), side, stride);
    let cols = axis_positions(img.width(), side, stride);
    Ok(rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| PatchRef::new(r, c, side)))
        .collect())
}

/// Writes the column-major vectorization of `patch` into `out`.
pub fn extract_patch(img: &GrayImage, patch: PatchRef, out: &mut [f64]) {
    let side = patch.side;
    debug_assert_eq!(out.len(), side * side);
    for c in 0..side {
        for r in 0..side {
            out[c * side + r] = img.get(patch.row + r, patch.col + c);
        }
    }
}

/// Stacks the vectorized `members` into a `b x m` matrix.
pub fn extract_group(img: &GrayImage, members: &[PatchRef]) -> Result<DMatrix<f64>> {
    let side = members.first().map_or(0, |p| p.side);
    let b = side * side;
    let mut data = DMatrix::zeros(b, members.len());
    for (j, &p) in members.iter().enumerate() {
        if p.side != side || !p.fits(img) {
            return Err(Error::InvalidParameter(format!(
                "patch {p:?} is inconsistent with group side {side} or image bounds"
            )));
        }
        extract_patch(img, p, data.column_mut(j).as_mut_slice());
    }
    Ok(data)
}

/// Inclusive range of `window` consecutive top-left positions centred on
/// `pos`, clipped to `[0, max_pos]`.
pub fn window_range(pos: usize, window: usize, max_pos: usize) -> (usize, usize) {
    let before = (window - 1) / 2;
    let after = window - 1 - before;
    (pos.saturating_sub(before), (pos + after).min(max_pos))
}

fn patch_distance(img: &GrayImage, anchor: &[f64], cand: PatchRef) -> f64 {
    let side = cand.side;
    let mut acc = 0.0;
    for c in 0..side {
        let col = &anchor[c * side..(c + 1) * side];
        for (r, &a) in col.iter().enumerate() {
            let d = a - img.get(cand.row + r, cand.col + c);
            acc += d * d;
        }
    }
    acc
}

/// Finds the `m` patches most similar to `anchor` inside a `window x window`
/// search area centred on the anchor's top-left corner.
///
/// The anchor is always column 0. The other members are the closest
/// candidates by squared Euclidean distance, ties broken by row-major scan
/// order of their top-left corners.
pub fn block_match(img: &GrayImage, anchor: PatchRef, window: usize, m: usize) -> Result<PatchGroup> {
    let side = anchor.side;
    if m == 0 {
        return Err(Error::InvalidParameter("group size m must be >= 1".to_string()));
    }
    if window < side.max(1) {
        return Err(Error::InvalidParameter(format!(
            "search window {window} is smaller than patch side {side}"
        )));
    }
    if side == 0 || !anchor.fits(img) {
        return Err(Error::InvalidParameter(format!(
            "anchor {anchor:?} does not fit a {}x{} image",
            img.width(),
            img.height()
        )));
    }

    let b = side * side;
    let mut anchor_vec = vec![0.0; b];
    extract_patch(img, anchor, &mut anchor_vec);

    let (r0, r1) = window_range(anchor.row, window, img.height() - side);
    let (c0, c1) = window_range(anchor.col, window, img.width() - side);
    let total = (r1 - r0 + 1) * (c1 - c0 + 1);
    if total < m {
        return Err(Error::InsufficientCandidates {
            found: total,
            needed: m,
        });
    }

    // (distance, scan index, patch); the anchor itself is excluded here and
    // pinned to the front afterwards.
    let mut cands: Vec<(f64, usize, PatchRef)> = Vec::with_capacity(total - 1);
    let mut idx = 0;
    for r in r0..=r1 {
        for c in c0..=c1 {
            let p = PatchRef::new(r, c, side);
            if p != anchor {
                cands.push((patch_distance(img, &anchor_vec, p), idx, p));
            }
            idx += 1;
        }
    }

    let order = |a: &(f64, usize, PatchRef), b: &(f64, usize, PatchRef)| -> Ordering {
        a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
    };
    let keep = m - 1;
    if keep > 0 && keep < cands.len() {
        cands.select_nth_unstable_by(keep - 1, order);
    }
    cands.truncate(keep);
    cands.sort_unstable_by(order);

    let mut members = Vec::with_capacity(m);
    let mut distances = Vec::with_capacity(m);
    members.push(anchor);
    distances.push(0.0);
    for (d, _, p) in cands {
        members.push(p);
        distances.push(d);
    }

    let mut data = DMatrix::zeros(b, m);
    data.column_mut(0).copy_from_slice(&anchor_vec);
    for (j, &p) in members.iter().enumerate().skip(1) {
        extract_patch(img, p, data.column_mut(j).as_mut_slice());
    }

    Ok(PatchGroup {
        anchor,
        members,
        distances,
        data,
    })
}

/// Running per-pixel sums and counts for overlap averaging.
///
/// Contributions are added in call order, so a fixed call order gives
/// bit-reproducible output.
#[derive(Debug, Clone)]
pub struct Aggregator {
    width: usize,
    height: usize,
    sums: Vec<f64>,
    counts: Vec<u32>,
}

impl Aggregator {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            sums: vec![0.0; width * height],
            counts: vec![0; width * height],
        }
    }

    /// Adds column `j` of `values` at the location of `members[j]`.
    pub fn accumulate(&mut self, members: &[PatchRef], values: &DMatrix<f64>) -> Result<()> {
        if values.ncols() != members.len() {
            return Err(Error::dims(
                (values.nrows(), members.len()),
                (values.nrows(), values.ncols()),
            ));
        }
        for (j, p) in members.iter().enumerate() {
            let side = p.side;
            if values.nrows() != side * side
                || p.row + side > self.height
                || p.col + side > self.width
            {
                return Err(Error::InvalidParameter(format!(
                    "patch {p:?} does not match {} values or the {}x{} output",
                    values.nrows(),
                    self.width,
                    self.height
                )));
            }
            let col = values.column(j);
            for c in 0..side {
                for r in 0..side {
                    let k = (p.row + r) * self.width + p.col + c;
                    self.sums[k] += col[c * side + r];
                    self.counts[k] += 1;
                }
            }
        }
        Ok(())
    }

    pub fn finish(self) -> Result<GrayImage> {
        let mut pixels = Vec::with_capacity(self.sums.len());
        for (k, (&s, &n)) in self.sums.iter().zip(&self.counts).enumerate() {
            if n == 0 {
                return Err(Error::UncoveredPixel {
                    row: k / self.width,
                    col: k % self.width,
                });
            }
            pixels.push(s / n as f64);
        }
        GrayImage::new(self.width, self.height, pixels)
    }
}

/// Averages every patch contribution back into a `width x height` image.
pub fn aggregate(groups: &[(PatchGroup, DMatrix<f64>)], width: usize, height: usize) -> Result<GrayImage> {
    let mut agg = Aggregator::new(width, height);
    for (group, values) in groups {
        agg.accumulate(&group.members, values)?;
    }
    agg.finish()
}
