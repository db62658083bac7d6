use super::ops::{accumulate, accumulate_backward, conv_backward, conv_forward};

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum LayerKind {
    Dense { inp: usize, out: usize },
    /// 2x2 kernel, stride 2, input `h x w x c`.
    Conv { h: usize, w: usize, c: usize, o: usize },
}

/// One parametric layer addressing the flat parameter vector by offset.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layer {
    pub kind: LayerKind,
    pub weight: usize,
    pub bias: Option<usize>,
    pub relu: bool,
}

impl Layer {
    pub fn in_len(&self) -> usize {
        match self.kind {
            LayerKind::Dense { inp, .. } => inp,
            LayerKind::Conv { h, w, c, .. } => h * w * c,
        }
    }

    pub fn out_len(&self) -> usize {
        match self.kind {
            LayerKind::Dense { out, .. } => out,
            LayerKind::Conv { h, w, o, .. } => (h / 2) * (w / 2) * o,
        }
    }

    fn weight_len(&self) -> usize {
        match self.kind {
            LayerKind::Dense { inp, out } => inp * out,
            LayerKind::Conv { c, o, .. } => 4 * c * o,
        }
    }

    fn bias_len(&self) -> usize {
        match self.kind {
            LayerKind::Dense { out, .. } => out,
            LayerKind::Conv { o, .. } => o,
        }
    }

    pub fn forward(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        let w = &params[self.weight..self.weight + self.weight_len()];
        let b = self.bias.map(|b| &params[b..b + self.bias_len()]);
        let mut y = vec![0.0; self.out_len()];
        match self.kind {
            LayerKind::Dense { .. } => {
                if let Some(b) = b {
                    y.copy_from_slice(b);
                }
                accumulate(x, w, &mut y);
            }
            LayerKind::Conv { h, w: width, c, o } => conv_forward(x, (h, width, c), w, b, o, &mut y),
        }
        if self.relu {
            for v in &mut y {
                // also maps NaN to 0; callers check finiteness of inputs and parameters
                if !(*v > 0.0) {
                    *v = 0.0;
                }
            }
        }
        y
    }

    /// `dy` is the gradient w.r.t. this layer's output (post-activation); `y` the output.
    pub fn backward(
        &self,
        params: &[f64],
        x: &[f64],
        y: &[f64],
        dy: &mut [f64],
        grads: &mut [f64],
        dx: Option<&mut [f64]>,
    ) {
        if self.relu {
            for (g, v) in dy.iter_mut().zip(y) {
                if *v <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        let wl = self.weight_len();
        let w = &params[self.weight..self.weight + wl];
        let (bias_grad, weight_grad) = split_grads(grads, self.weight, wl, self.bias, self.bias_len());
        match self.kind {
            LayerKind::Dense { .. } => {
                if let Some(db) = bias_grad {
                    for (d, g) in db.iter_mut().zip(dy.iter()) {
                        *d += g;
                    }
                }
                accumulate_backward(x, w, dy, weight_grad, dx);
            }
            LayerKind::Conv { h, w: width, c, o } => {
                conv_backward(x, (h, width, c), w, o, dy, weight_grad, bias_grad, dx)
            }
        }
    }
}

/// Disjoint mutable views of a layer's bias and weight gradients.
fn split_grads(
    grads: &mut [f64],
    weight: usize,
    weight_len: usize,
    bias: Option<usize>,
    bias_len: usize,
) -> (Option<&mut [f64]>, &mut [f64]) {
    match bias {
        None => (None, &mut grads[weight..weight + weight_len]),
        Some(b) if b >= weight + weight_len => {
            let (lo, hi) = grads.split_at_mut(b);
            (Some(&mut hi[..bias_len]), &mut lo[weight..weight + weight_len])
        }
        Some(b) => {
            assert!(b + bias_len <= weight, "overlapping parameter ranges");
            let (lo, hi) = grads.split_at_mut(weight);
            (Some(&mut lo[b..b + bias_len]), &mut hi[..weight_len])
        }
    }
}

/// Chain of layers; activations are recorded for the backward pass.
#[derive(Debug, Clone, PartialEq, Default)]
pub(crate) struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    /// Outputs of every layer, in order.
    pub fn forward(&self, params: &[f64], x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = acts.last().map_or(x, |a| a.as_slice());
            let y = layer.forward(params, input);
            acts.push(y);
        }
        acts
    }

    /// Accumulates parameter gradients; returns the input gradient when `want_dx`.
    pub fn backward(
        &self,
        params: &[f64],
        x: &[f64],
        acts: &[Vec<f64>],
        dy: &[f64],
        grads: &mut [f64],
        want_dx: bool,
    ) -> Option<Vec<f64>> {
        let mut g = dy.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = if i == 0 { x } else { acts[i - 1].as_slice() };
            let need_dx = i > 0 || want_dx;
            let mut dx = need_dx.then(|| vec![0.0; layer.in_len()]);
            layer.backward(params, input, &acts[i], &mut g, grads, dx.as_deref_mut());
            g = dx?;
        }
        Some(g)
    }
}
