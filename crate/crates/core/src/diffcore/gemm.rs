//! Dense row-major matrix products.

use ndarray::linalg::general_mat_mul;
use ndarray::ArrayView2;
use ndarray::ArrayViewMut2;

use super::Real;

/// Row-major `rows x cols` view of `data`, transposed when `t` is set.
fn view<T: Real>(data: &[T], rows: usize, cols: usize, t: bool) -> ArrayView2<'_, T> {
    let v = ArrayView2::from_shape((rows, cols), data).expect("matrix extent");
    if t {
        v.reversed_axes()
    } else {
        v
    }
}

/// `c = op(a) · op(b) + beta · c` with `op(a)` of shape `m x k` and `op(b)`
/// of shape `k x n`. `a` is stored as `k x m` when `ta` is set, `b` as
/// `n x k` when `tb` is set.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Real>(m: usize, n: usize, k: usize, a: &[T], ta: bool, b: &[T], tb: bool, beta: T, c: &mut [T]) {
    let a = if ta { view(a, k, m, true) } else { view(a, m, k, false) };
    let b = if tb { view(b, n, k, true) } else { view(b, k, n, false) };
    let mut c = ArrayViewMut2::from_shape((m, n), c).expect("matrix extent");
    general_mat_mul(T::one(), &a, &b, beta, &mut c);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transposes_agree_with_the_plain_product() {
        // a: 2x3, b: 3x2
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0];
        let mut c = [0.0f64; 4];
        gemm(2, 2, 3, &a, false, &b, false, 0.0, &mut c);
        assert_eq!(c, [58.0, 64.0, 139.0, 154.0]);
        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        let bt = [7.0, 9.0, 11.0, 8.0, 10.0, 12.0];
        let mut d = [1.0f64; 4];
        gemm(2, 2, 3, &at, true, &bt, true, 1.0, &mut d);
        assert_eq!(d, [59.0, 65.0, 140.0, 155.0]);
    }
}
