use crate::error::{Error, Result};
use crate::tensor::{Dims, Scalar, Tensor};

/// Original extents of a padded tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropRecord {
    pub height: usize,
    pub width: usize,
}

/// Mirror index `i` into `0..n` without repeating the edge sample,
/// folding as often as needed.
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

fn check_multiple(m: usize) -> Result<()> {
    if m == 0 || !m.is_power_of_two() {
        return Err(Error::invalid(format!("padding multiple must be a power of two, got {m}")));
    }
    Ok(())
}

/// Reflect-pad right and bottom up to the next multiples of `m`.
pub fn pad_to_multiple<T: Scalar>(t: &Tensor<T>, m: usize) -> Result<(Tensor<T>, CropRecord)> {
    check_multiple(m)?;
    let d = t.dims();
    let record = CropRecord {
        height: d.h,
        width: d.w,
    };
    let (ph, pw) = (d.h.next_multiple_of(m).max(m), d.w.next_multiple_of(m).max(m));
    if d.h == 0 || d.w == 0 {
        return Err(Error::invalid("cannot pad an empty image"));
    }
    let out = Tensor::from_fn(Dims::new(d.n, d.c, ph, pw), |n, c, y, x| {
        t.at(n, c, reflect(y, d.h), reflect(x, d.w))
    });
    Ok((out, record))
}

/// Like [`pad_to_multiple`] but reuses `t` when no padding is needed.
pub(crate) fn pad_owned<T: Scalar>(t: Tensor<T>, m: usize) -> Result<(Tensor<T>, CropRecord)> {
    check_multiple(m)?;
    let d = t.dims();
    if d.h > 0 && d.w > 0 && d.h.is_multiple_of(m) && d.w.is_multiple_of(m) {
        return Ok((t, CropRecord { height: d.h, width: d.w }));
    }
    pad_to_multiple(&t, m)
}

/// Undo [`pad_to_multiple`]: keep the top-left `record` extents.
pub fn unpad<T: Scalar>(t: &Tensor<T>, record: &CropRecord) -> Result<Tensor<T>> {
    window(t, 0, 0, record.height, record.width)
}

pub(crate) fn unpad_owned<T: Scalar>(t: Tensor<T>, record: &CropRecord) -> Result<Tensor<T>> {
    let d = t.dims();
    if d.h == record.height && d.w == record.width {
        return Ok(t);
    }
    unpad(&t, record)
}

/// Copy of the `h x w` window at `(row, col)` of every plane.
pub(crate) fn window<T: Scalar>(t: &Tensor<T>, row: usize, col: usize, h: usize, w: usize) -> Result<Tensor<T>> {
    let d = t.dims();
    if row + h > d.h || col + w > d.w {
        return Err(Error::invalid(format!(
            "window {h}x{w} at ({row}, {col}) exceeds {}x{}",
            d.h, d.w
        )));
    }
    let mut data = Vec::with_capacity(d.n * d.c * h * w);
    for n in 0..d.n {
        for c in 0..d.c {
            let plane = t.plane(n, c);
            for y in row..row + h {
                data.extend_from_slice(&plane[y * d.w + col..y * d.w + col + w]);
            }
        }
    }
    Tensor::from_vec(Dims::new(d.n, d.c, h, w), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflection_folds_repeatedly() {
        let seq: Vec<usize> = (0..8).map(|i| reflect(i, 3)).collect();
        assert_eq!(seq, [0, 1, 2, 1, 0, 1, 2, 1]);
        assert!((0..20).all(|i| reflect(i, 1) == 0));
    }

    #[test]
    fn non_power_of_two_is_rejected() {
        let t = Tensor::<f32>::zeros(Dims::new(1, 1, 4, 4));
        assert!(pad_to_multiple(&t, 12).is_err());
        assert!(pad_to_multiple(&t, 0).is_err());
    }
}
