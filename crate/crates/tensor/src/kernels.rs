// Row-major dense kernels. All `*_acc` variants add into `out`.

use crate::element::Element;

/// out[m,n] += a[m,k] · b[k,n]
pub(crate) fn mm_acc<T: Element>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// out[m,n] += a[m,k] · b[n,k]ᵀ
pub(crate) fn mm_bt_acc<T: Element>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut s = T::zero();
            for (&x, &y) in a_row.iter().zip(b_row) {
                s += x * y;
            }
            out[i * n + j] += s;
        }
    }
}

/// out[k,n] += a[m,k]ᵀ · b[m,n]
pub(crate) fn mm_at_acc<T: Element>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// Row-wise softmax of `x + mask` (mask optional, same shape), written to `out`.
pub(crate) fn softmax_rows<T: Element>(x: &[T], mask: Option<&[T]>, out: &mut [T], cols: usize) {
    for (r, (xr, or)) in x.chunks(cols).zip(out.chunks_mut(cols)).enumerate() {
        match mask {
            Some(m) => {
                let mr = &m[r * cols..(r + 1) * cols];
                for ((o, &v), &mv) in or.iter_mut().zip(xr).zip(mr) {
                    *o = v + mv;
                }
            }
            None => or.copy_from_slice(xr),
        }
        let max = or.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for o in or.iter_mut() {
            *o = (*o - max).exp();
            sum += *o;
        }
        for o in or.iter_mut() {
            *o = *o / sum;
        }
    }
}
