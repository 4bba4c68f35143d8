//! Patch grouping and aggregation.
//!
//! # Patch vectorization
//!
//! A `p×p×3` patch with top-left corner `(row, col)` becomes a column of
//! length `3p²` laid out as three channel blocks, R then G then B. Inside a
//! block the patch is read column-major: entry `c·p² + j·p + i` holds the
//! sample at image position `(row + i, col + j)` in channel `c`. This order
//! is stable and is what patch-matrix dumps use.

use std::cmp::Ordering;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ColorImage;

/// Top-left corner of a patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PatchCoord {
    pub row: usize,
    pub col: usize,
}

impl PatchCoord {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    fn check(&self, dims: (usize, usize), p: usize) -> Result<()> {
        if p == 0 || self.row + p > dims.0 || self.col + p > dims.1 {
            return Err(Error::invalid(format!(
                "patch of size {p} at ({}, {}) does not fit a {}x{} image",
                self.row, self.col, dims.0, dims.1
            )));
        }
        Ok(())
    }
}

/// `3p² × M` matrix of vectorized patches; column `j` comes from `coords[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMatrix {
    pub data: DMatrix<f64>,
    pub coords: Vec<PatchCoord>,
    pub p: usize,
}

impl PatchMatrix {
    /// Key patch of the group (first column).
    pub fn key(&self) -> PatchCoord {
        self.coords[0]
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Same coordinates, different data. The shape must match.
    pub fn with_data(&self, data: DMatrix<f64>) -> Result<Self> {
        if data.shape() != self.data.shape() {
            return Err(Error::DimensionMismatch {
                expected: self.data.shape(),
                got: data.shape(),
            });
        }
        Ok(Self {
            data,
            coords: self.coords.clone(),
            p: self.p,
        })
    }

    /// Column `j` un-vectorized into a `p×p×3` patch, row-major and
    /// channel-interleaved like [`ColorImage`].
    pub fn patch(&self, j: usize) -> Vec<f64> {
        let p = self.p;
        let pp = p * p;
        let col = self.data.column(j);
        let mut out = vec![0.0; pp * 3];
        for c in 0..3 {
            for jj in 0..p {
                for i in 0..p {
                    out[(i * p + jj) * 3 + c] = col[c * pp + jj * p + i];
                }
            }
        }
        out
    }
}

fn grid(extent: usize, p: usize, stride: usize) -> Vec<usize> {
    let last = extent - p;
    // a step wider than the patch would leave uncovered gaps
    let mut g: Vec<usize> = (0..=last).step_by(stride.min(p)).collect();
    if *g.last().unwrap() != last {
        g.push(last);
    }
    g
}

/// Key patches on a `stride` grid whose last row and column are pinned to
/// `H − p` and `W − p`, so every pixel is covered. Row-major order.
///
/// A stride larger than `p` is reduced to `p`.
pub fn extract_key_patches(image: &ColorImage, p: usize, stride: usize) -> Result<Vec<PatchCoord>> {
    let (h, w) = image.dims();
    if stride == 0 {
        return Err(Error::invalid("stride must be at least 1"));
    }
    if p == 0 || p > h.min(w) {
        return Err(Error::invalid(format!(
            "patch size {p} must be in 1..={}",
            h.min(w)
        )));
    }
    let rows = grid(h, p, stride);
    let cols = grid(w, p, stride);
    Ok(rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| PatchCoord::new(r, c)))
        .collect())
}

/// Squared Euclidean distance between two `p×p×3` patches.
pub fn patch_distance(image: &ColorImage, a: PatchCoord, b: PatchCoord, p: usize) -> f64 {
    let w = image.width();
    let data = image.data();
    let mut acc = 0.0;
    for i in 0..p {
        let ra = ((a.row + i) * w + a.col) * 3;
        let rb = ((b.row + i) * w + b.col) * 3;
        for k in 0..3 * p {
            let d = data[ra + k] - data[rb + k];
            acc += d * d;
        }
    }
    acc
}

/// Inclusive range of top-left positions in an `s`-wide window centered on
/// `center`, clamped to `[0, max]`.
fn window(center: usize, s: usize, max: usize) -> (usize, usize) {
    let lo = center.saturating_sub(s / 2);
    let hi = (center + s - s / 2 - 1).min(max);
    (lo, hi)
}

/// The `m` patches most similar to `key` among the top-left positions of an
/// `s×s` window centered on the key's corner.
///
/// Sorted by distance; the key comes first and ties are broken by `(row, col)`.
/// Fewer than `m` entries are returned when the window is smaller.
pub fn block_match(
    image: &ColorImage,
    key: PatchCoord,
    p: usize,
    s: usize,
    m: usize,
) -> Result<Vec<PatchCoord>> {
    Ok(block_match_with_distances(image, key, p, s, m)?
        .into_iter()
        .map(|(c, _)| c)
        .collect())
}

/// [`block_match`] that also returns the squared distances.
pub fn block_match_with_distances(
    image: &ColorImage,
    key: PatchCoord,
    p: usize,
    s: usize,
    m: usize,
) -> Result<Vec<(PatchCoord, f64)>> {
    if m == 0 {
        return Err(Error::invalid("group size must be at least 1"));
    }
    if s < p {
        return Err(Error::invalid(format!(
            "search window {s} is smaller than the patch size {p}"
        )));
    }
    let (h, w) = image.dims();
    key.check((h, w), p)?;
    let (r0, r1) = window(key.row, s, h - p);
    let (c0, c1) = window(key.col, s, w - p);

    let mut cands: Vec<(PatchCoord, f64)> = Vec::with_capacity((r1 - r0 + 1) * (c1 - c0 + 1));
    for r in r0..=r1 {
        for c in c0..=c1 {
            let coord = PatchCoord::new(r, c);
            let d = if coord == key {
                0.0
            } else {
                patch_distance(image, key, coord, p)
            };
            cands.push((coord, d));
        }
    }
    let order = |a: &(PatchCoord, f64), b: &(PatchCoord, f64)| -> Ordering {
        (a.0 != key)
            .cmp(&(b.0 != key))
            .then(a.1.total_cmp(&b.1))
            .then(a.0.cmp(&b.0))
    };
    if cands.len() > m {
        cands.select_nth_unstable_by(m - 1, order);
        cands.truncate(m);
    }
    cands.sort_by(order);
    Ok(cands)
}

pub fn form_patch_matrix(
    image: &ColorImage,
    coords: &[PatchCoord],
    p: usize,
) -> Result<PatchMatrix> {
    if coords.is_empty() {
        return Err(Error::invalid("a patch matrix needs at least one patch"));
    }
    for c in coords {
        c.check(image.dims(), p)?;
    }
    let pp = p * p;
    let mut data = DMatrix::zeros(3 * pp, coords.len());
    for (j, coord) in coords.iter().enumerate() {
        let mut col = data.column_mut(j);
        for jj in 0..p {
            for i in 0..p {
                for c in 0..3 {
                    col[c * pp + jj * p + i] = image.get(coord.row + i, coord.col + jj, c);
                }
            }
        }
    }
    Ok(PatchMatrix {
        data,
        coords: coords.to_vec(),
        p,
    })
}

/// Per-pixel sum and count of patch samples, to be divided at the end.
#[derive(Debug, Clone)]
pub struct Accumulator {
    height: usize,
    width: usize,
    sum: Vec<f64>,
    count: Vec<u32>,
}

impl Accumulator {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            sum: vec![0.0; height * width * 3],
            count: vec![0; height * width],
        }
    }

    pub fn add(&mut self, group: &PatchMatrix) -> Result<()> {
        let p = group.p;
        let pp = p * p;
        if group.data.nrows() != 3 * pp || group.data.ncols() != group.coords.len() {
            return Err(Error::DimensionMismatch {
                expected: (3 * pp, group.coords.len()),
                got: group.data.shape(),
            });
        }
        for (j, coord) in group.coords.iter().enumerate() {
            coord.check((self.height, self.width), p)?;
            let col = group.data.column(j);
            for jj in 0..p {
                for i in 0..p {
                    let px = (coord.row + i) * self.width + coord.col + jj;
                    self.count[px] += 1;
                    for c in 0..3 {
                        self.sum[px * 3 + c] += col[c * pp + jj * p + i];
                    }
                }
            }
        }
        Ok(())
    }

    pub fn finish(self) -> Result<ColorImage> {
        let mut data = self.sum;
        for (px, &n) in self.count.iter().enumerate() {
            if n == 0 {
                return Err(Error::Consistency(format!(
                    "pixel ({}, {}) is not covered by any patch",
                    px / self.width,
                    px % self.width
                )));
            }
            let inv = 1.0 / f64::from(n);
            for v in &mut data[px * 3..px * 3 + 3] {
                *v *= inv;
            }
        }
        ColorImage::new(self.height, self.width, data)
    }
}

/// Averages all patch samples covering each pixel (uniform weights).
pub fn aggregate<'a>(
    groups: impl IntoIterator<Item = &'a PatchMatrix>,
    dims: (usize, usize),
) -> Result<ColorImage> {
    let mut acc = Accumulator::new(dims.0, dims.1);
    for g in groups {
        acc.add(g)?;
    }
    acc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> ColorImage {
        ColorImage::from_fn(h, w, |r, c, ch| (r * 31 + c * 7 + ch * 101) as f64 % 255.0)
    }

    #[test]
    fn stride_wider_than_patch_still_covers() {
        let img = ramp(20, 20);
        let keys = extract_key_patches(&img, 4, 6).unwrap();
        let rows: Vec<usize> = keys.iter().filter(|k| k.col == 0).map(|k| k.row).collect();
        assert_eq!(rows, vec![0, 4, 8, 12, 16]);
        let groups: Vec<_> = keys
            .iter()
            .map(|&k| form_patch_matrix(&img, &[k], 4).unwrap())
            .collect();
        assert_eq!(aggregate(&groups, (20, 20)).unwrap(), img);
    }

    #[test]
    fn exact_tiling() {
        let img = ColorImage::zeros(12, 12);
        let k = extract_key_patches(&img, 6, 6).unwrap();
        let want: Vec<_> = [(0, 0), (0, 6), (6, 0), (6, 6)]
            .iter()
            .map(|&(r, c)| PatchCoord::new(r, c))
            .collect();
        assert_eq!(k, want);
    }

    #[test]
    fn clamped_grid() {
        let img = ColorImage::zeros(13, 13);
        let k = extract_key_patches(&img, 6, 6).unwrap();
        assert_eq!(k.len(), 9);
        let rows: Vec<usize> = k.iter().step_by(3).map(|c| c.row).collect();
        assert_eq!(rows, vec![0, 6, 7]);
    }

    #[test]
    fn single_patch_grid() {
        let img = ColorImage::zeros(6, 6);
        assert_eq!(
            extract_key_patches(&img, 6, 4).unwrap(),
            vec![PatchCoord::new(0, 0)]
        );
    }

    #[test]
    fn grid_rejects_oversized_patch() {
        let img = ColorImage::zeros(6, 9);
        assert!(extract_key_patches(&img, 7, 2).is_err());
        assert!(extract_key_patches(&img, 3, 0).is_err());
    }

    #[test]
    fn constant_image_ties_are_lexicographic() {
        let img = ColorImage::filled(30, 30, [5.0, 6.0, 7.0]);
        let key = PatchCoord::new(10, 10);
        let got = block_match(&img, key, 4, 6, 5).unwrap();
        assert_eq!(got[0], key);
        let want: Vec<_> = [(7, 7), (7, 8), (7, 9), (7, 10)]
            .iter()
            .map(|&(r, c)| PatchCoord::new(r, c))
            .collect();
        assert_eq!(&got[1..], &want[..]);
    }

    #[test]
    fn window_saturates() {
        let img = ramp(10, 10);
        // corner key, window of 4 → offsets -2..=1 clamped → rows/cols 0..=1
        let got = block_match_with_distances(&img, PatchCoord::new(0, 0), 3, 4, 100).unwrap();
        assert_eq!(got.len(), 4);
        assert_eq!(got[0], (PatchCoord::new(0, 0), 0.0));
        assert!(got.windows(2).all(|w| w[0].1 <= w[1].1));
    }

    #[test]
    fn block_match_argument_checks() {
        let img = ramp(10, 10);
        assert!(block_match(&img, PatchCoord::new(0, 0), 4, 3, 5).is_err());
        assert!(block_match(&img, PatchCoord::new(0, 0), 4, 8, 0).is_err());
        assert!(block_match(&img, PatchCoord::new(7, 0), 4, 8, 3).is_err());
    }

    #[test]
    fn single_pixel_patch() {
        let img = ramp(5, 5);
        let pm = form_patch_matrix(&img, &[PatchCoord::new(2, 3)], 1).unwrap();
        assert_eq!(pm.data.shape(), (3, 1));
        for c in 0..3 {
            assert_eq!(pm.data[(c, 0)], img.get(2, 3, c));
        }
    }

    #[test]
    fn constant_patch_matrix() {
        let img = ColorImage::filled(8, 8, [3.5; 3]);
        let coords = [PatchCoord::new(0, 0), PatchCoord::new(4, 2)];
        let pm = form_patch_matrix(&img, &coords, 3).unwrap();
        assert!(pm.data.iter().all(|&v| v == 3.5));
    }

    #[test]
    fn vectorization_order() {
        let img = ramp(6, 6);
        let pm = form_patch_matrix(&img, &[PatchCoord::new(1, 2)], 2).unwrap();
        // channel block c, entry j*p + i ↔ pixel (1 + i, 2 + j)
        for c in 0..3 {
            for j in 0..2 {
                for i in 0..2 {
                    assert_eq!(pm.data[(c * 4 + j * 2 + i, 0)], img.get(1 + i, 2 + j, c));
                }
            }
        }
    }

    #[test]
    fn patch_round_trip() {
        let img = ramp(9, 11);
        let coords = [PatchCoord::new(4, 6), PatchCoord::new(0, 1)];
        let pm = form_patch_matrix(&img, &coords, 4).unwrap();
        for (j, coord) in coords.iter().enumerate() {
            let patch = pm.patch(j);
            for i in 0..4 {
                for jj in 0..4 {
                    for c in 0..3 {
                        assert_eq!(
                            patch[(i * 4 + jj) * 3 + c],
                            img.get(coord.row + i, coord.col + jj, c)
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn form_rejects_out_of_bounds() {
        let img = ramp(6, 6);
        assert!(form_patch_matrix(&img, &[PatchCoord::new(3, 0)], 4).is_err());
        assert!(form_patch_matrix(&img, &[], 4).is_err());
    }

    #[test]
    fn overlapping_patches_average() {
        let a = PatchMatrix {
            data: DMatrix::from_element(3, 1, 1.0),
            coords: vec![PatchCoord::new(0, 0)],
            p: 1,
        };
        let b = PatchMatrix {
            data: DMatrix::from_element(3, 1, 3.0),
            coords: vec![PatchCoord::new(0, 0)],
            p: 1,
        };
        let out = aggregate([&a, &b], (1, 1)).unwrap();
        assert_eq!(out.data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn uncovered_pixel_is_an_error() {
        let a = PatchMatrix {
            data: DMatrix::from_element(3, 1, 1.0),
            coords: vec![PatchCoord::new(0, 0)],
            p: 1,
        };
        assert!(matches!(
            aggregate([&a], (1, 2)),
            Err(Error::Consistency(_))
        ));
    }

    #[test]
    fn identity_round_trip() {
        let img = ramp(17, 23);
        let keys = extract_key_patches(&img, 5, 3).unwrap();
        let groups: Vec<_> = keys
            .iter()
            .map(|&k| {
                let coords = block_match(&img, k, 5, 8, 6).unwrap();
                form_patch_matrix(&img, &coords, 5).unwrap()
            })
            .collect();
        let out = aggregate(&groups, img.dims()).unwrap();
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() <= 1e-10);
        }
    }
}
