use super::{NnError, Tensor};

/// `y += x . w` with `w` stored row-major as `x.len() x y.len()`.
/// Zero inputs are skipped, which makes sparse inputs (grids, ReLU outputs) cheap.
#[inline]
pub(crate) fn accumulate(x: &[f64], w: &[f64], y: &mut [f64]) {
    let out = y.len();
    debug_assert_eq!(w.len(), x.len() * out);
    for (xi, row) in x.iter().zip(w.chunks_exact(out)) {
        if *xi == 0.0 {
            continue;
        }
        for (yo, wo) in y.iter_mut().zip(row) {
            *yo += xi * wo;
        }
    }
}

/// Reverse of [`accumulate`]: `dw += x^T dy` and optionally `dx += w dy`.
#[inline]
pub(crate) fn accumulate_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    let out = dy.len();
    for (xi, drow) in x.iter().zip(dw.chunks_exact_mut(out)) {
        if *xi == 0.0 {
            continue;
        }
        for (d, g) in drow.iter_mut().zip(dy) {
            *d += xi * g;
        }
    }
    if let Some(dx) = dx {
        for (dxi, row) in dx.iter_mut().zip(w.chunks_exact(out)) {
            *dxi += row.iter().zip(dy).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Softmax into `out`; `-inf` entries become exactly 0.
pub(crate) fn softmax_into(scores: &[f64], out: &mut [f64]) -> Result<(), NnError> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(NnError::Usage("softmax needs at least one finite score".into()));
    }
    if !max.is_finite() {
        return Err(NnError::Numerical(format!("softmax score {max}")));
    }
    let mut total = 0.0;
    for (o, s) in out.iter_mut().zip(scores) {
        *o = (s - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
    Ok(())
}

pub fn softmax(scores: &[f64]) -> Result<Vec<f64>, NnError> {
    if scores.iter().any(|s| s.is_nan()) {
        return Err(NnError::Numerical("NaN softmax score".into()));
    }
    let mut out = vec![0.0; scores.len()];
    softmax_into(scores, &mut out)?;
    Ok(out)
}

/// `input . weight + bias` for a vector or a batch of row vectors.
pub fn affine(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor, NnError> {
    if weight.shape().len() != 2 {
        return Err(NnError::Shape(format!("weight must be 2-D, got {:?}", weight.shape())));
    }
    let (inner, out) = (weight.shape()[0], weight.shape()[1]);
    let (rows, in_dim) = match input.shape() {
        [n] => (1, *n),
        [r, c] => (*r, *c),
        s => return Err(NnError::Shape(format!("input must be 1-D or 2-D, got {s:?}"))),
    };
    if in_dim != inner {
        return Err(NnError::Shape(format!(
            "inner dimensions differ: input {in_dim}, weight {inner}"
        )));
    }
    if let Some(b) = bias {
        if b.len() != out {
            return Err(NnError::Shape(format!("bias length {} != {out}", b.len())));
        }
    }
    let mut data = vec![0.0; rows * out];
    for (x, y) in input.data().chunks_exact(in_dim).zip(data.chunks_exact_mut(out)) {
        if let Some(b) = bias {
            y.copy_from_slice(b.data());
        }
        accumulate(x, weight.data(), y);
    }
    let shape = if input.shape().len() == 1 { vec![out] } else { vec![rows, out] };
    Tensor::new(shape, data)
}

/// Valid 2x2 convolution with stride 2 over an `H x W x C` input, kernels shaped
/// `2 x 2 x C x O`. No activation.
pub fn conv2d(input: &Tensor, kernels: &Tensor, bias: Option<&Tensor>) -> Result<Tensor, NnError> {
    let [h, w, c] = input.shape() else {
        return Err(NnError::Shape(format!("conv input must be H x W x C, got {:?}", input.shape())));
    };
    let [2, 2, kc, o] = kernels.shape() else {
        return Err(NnError::Shape(format!("kernels must be 2 x 2 x C x O, got {:?}", kernels.shape())));
    };
    if h % 2 != 0 || w % 2 != 0 {
        return Err(NnError::Shape(format!("spatial dims {h} x {w} must be even")));
    }
    if kc != c {
        return Err(NnError::Shape(format!("kernel channels {kc} != input channels {c}")));
    }
    if let Some(b) = bias {
        if b.len() != *o {
            return Err(NnError::Shape(format!("bias length {} != {o}", b.len())));
        }
    }
    let mut out = vec![0.0; (h / 2) * (w / 2) * o];
    conv_forward(input.data(), (*h, *w, *c), kernels.data(), bias.map(|b| b.data()), *o, &mut out);
    Tensor::new(vec![h / 2, w / 2, *o], out)
}

/// Input offset of tap `(di, dj)` for output cell `(p, q)`.
#[inline]
fn tap(p: usize, q: usize, di: usize, dj: usize, w: usize, c: usize) -> usize {
    ((2 * p + di) * w + 2 * q + dj) * c
}

pub(crate) fn conv_forward(
    x: &[f64],
    (h, w, c): (usize, usize, usize),
    kernels: &[f64],
    bias: Option<&[f64]>,
    o: usize,
    out: &mut [f64],
) {
    let (oh, ow) = (h / 2, w / 2);
    for p in 0..oh {
        for q in 0..ow {
            let y = &mut out[(p * ow + q) * o..(p * ow + q + 1) * o];
            match bias {
                Some(b) => y.copy_from_slice(b),
                None => y.fill(0.0),
            }
            for (k, (di, dj)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                let start = tap(p, q, di, dj, w, c);
                accumulate(&x[start..start + c], &kernels[k * c * o..(k + 1) * c * o], y);
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    x: &[f64],
    (h, w, c): (usize, usize, usize),
    kernels: &[f64],
    o: usize,
    dy: &[f64],
    dk: &mut [f64],
    mut db: Option<&mut [f64]>,
    mut dx: Option<&mut [f64]>,
) {
    let (oh, ow) = (h / 2, w / 2);
    for p in 0..oh {
        for q in 0..ow {
            let g = &dy[(p * ow + q) * o..(p * ow + q + 1) * o];
            if g.iter().all(|v| *v == 0.0) {
                continue;
            }
            if let Some(db) = db.as_deref_mut() {
                for (d, v) in db.iter_mut().zip(g) {
                    *d += v;
                }
            }
            for (k, (di, dj)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                let start = tap(p, q, di, dj, w, c);
                let range = k * c * o..(k + 1) * c * o;
                accumulate_backward(
                    &x[start..start + c],
                    &kernels[range.clone()],
                    g,
                    &mut dk[range],
                    dx.as_deref_mut().map(|d| &mut d[start..start + c]),
                );
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn affine_identity_and_bias() {
        let x = Tensor::vector(vec![1.5, -2.0, 0.25]);
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        assert_eq!(affine(&x, &eye, Some(&Tensor::zeros(&[3]))).unwrap(), x);
        let b = Tensor::vector(vec![0.5, 1.0]);
        let y = affine(&x, &Tensor::zeros(&[3, 2]), Some(&b)).unwrap();
        assert_eq!(y.data(), b.data());
    }

    #[test]
    fn affine_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&mut rng, &[3, 4]);
        let w = random(&mut rng, &[4, 5]);
        let b = random(&mut rng, &[5]);
        let y = affine(&x, &w, Some(&b)).unwrap();
        for i in 0..3 {
            for j in 0..5 {
                let mut s = b.data()[j];
                for k in 0..4 {
                    s += x.data()[i * 4 + k] * w.data()[k * 5 + j];
                }
                assert!((y.data()[i * 5 + j] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn affine_shape_mismatch() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        assert!(matches!(affine(&x, &Tensor::zeros(&[3, 2]), None), Err(NnError::Shape(_))));
    }

    #[test]
    fn softmax_cases() {
        assert_eq!(softmax(&[0.3; 4]).unwrap(), vec![0.25; 4]);
        assert_eq!(softmax(&[-7.0]).unwrap(), vec![1.0]);
        let s = softmax(&[0.0, 2f64.ln()]).unwrap();
        assert!((s[0] - 1.0 / 3.0).abs() < 1e-15 && (s[1] - 2.0 / 3.0).abs() < 1e-15);
        let masked = softmax(&[1.0, f64::NEG_INFINITY, 1.0]).unwrap();
        assert_eq!(masked, vec![0.5, 0.0, 0.5]);
        assert!(softmax(&[f64::NEG_INFINITY; 2]).is_err());
        assert!(softmax(&[1000.0, 0.0]).unwrap()[0] == 1.0);
    }

    #[test]
    fn conv_trivial_cases() {
        let ones = Tensor::new(vec![4, 4, 1], vec![1.0; 16]).unwrap();
        let k = Tensor::new(vec![2, 2, 1, 1], vec![1.0; 4]).unwrap();
        let y = conv2d(&ones, &k, Some(&Tensor::zeros(&[1]))).unwrap();
        assert_eq!(y.shape(), &[2, 2, 1]);
        assert_eq!(y.data(), &[4.0; 4]);
        let b = Tensor::vector(vec![0.5, -1.0]);
        let k2 = Tensor::new(vec![2, 2, 1, 2], vec![3.0; 8]).unwrap();
        let z = conv2d(&Tensor::zeros(&[4, 4, 1]), &k2, Some(&b)).unwrap();
        assert_eq!(z.data(), &[0.5, -1.0, 0.5, -1.0, 0.5, -1.0, 0.5, -1.0]);
        assert!(conv2d(&Tensor::zeros(&[3, 4, 1]), &k, None).is_err());
    }

    #[test]
    fn conv_matches_nested_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (h, w, c, o) = (8, 8, 3, 4);
        let x = random(&mut rng, &[h, w, c]);
        let k = random(&mut rng, &[2, 2, c, o]);
        let b = random(&mut rng, &[o]);
        let y = conv2d(&x, &k, Some(&b)).unwrap();
        for p in 0..h / 2 {
            for q in 0..w / 2 {
                for oc in 0..o {
                    let mut s = b.data()[oc];
                    for di in 0..2 {
                        for dj in 0..2 {
                            for ic in 0..c {
                                let xv = x.data()[((2 * p + di) * w + 2 * q + dj) * c + ic];
                                let kv = k.data()[((di * 2 + dj) * c + ic) * o + oc];
                                s += xv * kv;
                            }
                        }
                    }
                    let got = y.data()[(p * (w / 2) + q) * o + oc];
                    assert!((got - s).abs() < 1e-12);
                }
            }
        }
    }
}
