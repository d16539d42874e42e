use super::{GeometryError, MaskGrid, Result};

fn check_dims(a: &MaskGrid, b: &MaskGrid) -> Result<()> {
    if a.dims() != b.dims() || a.bits.len() != b.bits.len() {
        return Err(GeometryError::DimensionMismatch(a.dims(), b.dims()));
    }
    Ok(())
}

fn iou_bits(a: &[bool], b: &[bool]) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// `|a ∩ b| / |a ∪ b|`, defined as 1 when both masks are empty.
pub fn mask_iou(a: &MaskGrid, b: &MaskGrid) -> Result<f64> {
    check_dims(a, b)?;
    Ok(iou_bits(&a.bits, &b.bits))
}

/// Erosion by a `(2d+1) x (2d+1)` square; pixels beyond the grid count as
/// background. Computed as a separable running minimum.
pub fn erode(m: &MaskGrid, d: usize) -> MaskGrid {
    let (h, w) = m.dims();
    let window_all = |line: &[bool]| -> Vec<bool> {
        let n = line.len();
        // prefix counts of set pixels
        let mut pre = vec![0usize; n + 1];
        for i in 0..n {
            pre[i + 1] = pre[i] + line[i] as usize;
        }
        (0..n)
            .map(|i| {
                if i < d || i + d >= n {
                    return false;
                }
                pre[i + d + 1] - pre[i - d] == 2 * d + 1
            })
            .collect()
    };
    let mut rows = MaskGrid::new(h, w);
    for r in 0..h {
        let out = window_all(&m.bits[r * w..(r + 1) * w]);
        rows.bits[r * w..(r + 1) * w].copy_from_slice(&out);
    }
    let mut out = MaskGrid::new(h, w);
    let mut col = vec![false; h];
    for c in 0..w {
        for r in 0..h {
            col[r] = rows.bits[r * w + c];
        }
        for (r, v) in window_all(&col).into_iter().enumerate() {
            out.bits[r * w + c] = v;
        }
    }
    out
}

/// The `d`-pixel inner boundary band: mask minus its erosion by `d`.
pub fn boundary_band(m: &MaskGrid, d: usize) -> MaskGrid {
    let er = erode(m, d);
    MaskGrid {
        height: m.height,
        width: m.width,
        bits: m.bits.iter().zip(&er.bits).map(|(&x, &e)| x && !e).collect(),
    }
}

/// IoU of the two masks' `d`-pixel inner boundary bands.
pub fn boundary_iou(a: &MaskGrid, b: &MaskGrid, d: usize) -> Result<f64> {
    check_dims(a, b)?;
    if d == 0 {
        return Err(GeometryError::InvalidArgument("boundary width must be >= 1".into()));
    }
    Ok(iou_bits(&boundary_band(a, d).bits, &boundary_band(b, d).bits))
}
