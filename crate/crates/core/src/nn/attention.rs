use serde::{Deserialize, Serialize};

use super::layers::Sequential;
use super::ops::{accumulate, accumulate_backward, dot, softmax_into};
use super::{NnError, Tensor};

/// Per-head attention weights over `(ego, others...)`, from the last attention layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    pub heads: Vec<Vec<f64>>,
}

/// Projection matrices of one head, each `d_x x d_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub query: Tensor,
    pub key: Tensor,
    pub value: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub heads: Vec<HeadParams>,
    /// `(heads * d_k) x d_x`
    pub combine: Tensor,
    pub combine_bias: Option<Tensor>,
}

struct HeadView<'a> {
    query: &'a [f64],
    key: &'a [f64],
    value: &'a [f64],
}

#[derive(Debug, Clone)]
pub(crate) struct HeadCache {
    q: Vec<f64>,
    keys: Vec<f64>,
    values: Vec<f64>,
    pub weights: Vec<f64>,
    out: Vec<f64>,
}

/// `e` is `n x d_x` with row 0 the ego; masked rows get `-inf` scores.
fn head_forward(
    head: &HeadView,
    d_x: usize,
    d_k: usize,
    e: &[f64],
    mask: &[bool],
) -> Result<HeadCache, NnError> {
    let n = mask.len();
    let mut q = vec![0.0; d_k];
    accumulate(&e[..d_x], head.query, &mut q);
    let mut keys = vec![0.0; n * d_k];
    let mut values = vec![0.0; n * d_k];
    let mut scores = vec![f64::NEG_INFINITY; n];
    let scale = (d_k as f64).sqrt();
    for i in (0..n).filter(|i| mask[*i]) {
        let row = &e[i * d_x..(i + 1) * d_x];
        let k = &mut keys[i * d_k..(i + 1) * d_k];
        accumulate(row, head.key, k);
        accumulate(row, head.value, &mut values[i * d_k..(i + 1) * d_k]);
        scores[i] = dot(&q, k) / scale;
    }
    let mut weights = vec![0.0; n];
    softmax_into(&scores, &mut weights)?;
    let mut out = vec![0.0; d_k];
    for i in (0..n).filter(|i| mask[*i]) {
        for (o, v) in out.iter_mut().zip(&values[i * d_k..(i + 1) * d_k]) {
            *o += weights[i] * v;
        }
    }
    Ok(HeadCache {
        q,
        keys,
        values,
        weights,
        out,
    })
}

#[derive(Debug, Clone)]
pub(crate) struct LayerCache {
    e: Vec<f64>,
    pub heads: Vec<HeadCache>,
    concat: Vec<f64>,
}

/// Heads, concatenation, combination map and residual. Returns the new ego feature.
fn layer_forward(
    heads: &[HeadView],
    combine: &[f64],
    bias: Option<&[f64]>,
    d_x: usize,
    d_k: usize,
    e: Vec<f64>,
    mask: &[bool],
) -> Result<(Vec<f64>, LayerCache), NnError> {
    let caches = heads
        .iter()
        .map(|h| head_forward(h, d_x, d_k, &e, mask))
        .collect::<Result<Vec<_>, _>>()?;
    let concat: Vec<f64> = caches.iter().flat_map(|c| c.out.iter().copied()).collect();
    let mut y = match bias {
        Some(b) => b.to_vec(),
        None => vec![0.0; d_x],
    };
    accumulate(&concat, combine, &mut y);
    for (yi, ei) in y.iter_mut().zip(&e[..d_x]) {
        *yi += ei;
    }
    Ok((
        y,
        LayerCache {
            e,
            heads: caches,
            concat,
        },
    ))
}

fn check_params(params: &AttentionParams, d_x: usize) -> Result<usize, NnError> {
    let first = params
        .heads
        .first()
        .ok_or_else(|| NnError::Shape("attention needs at least one head".into()))?;
    let d_k = first.query.cols();
    for h in &params.heads {
        for m in [&h.query, &h.key, &h.value] {
            if m.shape() != [d_x, d_k] {
                return Err(NnError::Shape(format!(
                    "projection shape {:?}, expected [{d_x}, {d_k}]",
                    m.shape()
                )));
            }
        }
    }
    if params.combine.shape() != [params.heads.len() * d_k, d_x] {
        return Err(NnError::Shape(format!(
            "combination shape {:?}, expected [{}, {d_x}]",
            params.combine.shape(),
            params.heads.len() * d_k
        )));
    }
    if params.combine_bias.as_ref().is_some_and(|b| b.len() != d_x) {
        return Err(NnError::Shape("combination bias length".into()));
    }
    Ok(d_k)
}

fn view(h: &HeadParams) -> HeadView<'_> {
    HeadView {
        query: h.query.data(),
        key: h.key.data(),
        value: h.value.data(),
    }
}

/// Single head: the ego emits the only query; keys and values come from every row of
/// `all_embeddings`, ego included. Returns the head output and its attention weights.
pub fn attention_head(
    ego_embedding: &[f64],
    all_embeddings: &Tensor,
    params: &HeadParams,
) -> Result<(Vec<f64>, Vec<f64>), NnError> {
    let [n, d_x] = all_embeddings.shape() else {
        return Err(NnError::Shape("embeddings must be 2-D".into()));
    };
    if ego_embedding.len() != *d_x {
        return Err(NnError::Shape("ego embedding width".into()));
    }
    let d_k = params.query.cols();
    for m in [&params.query, &params.key, &params.value] {
        if m.shape() != [*d_x, d_k] {
            return Err(NnError::Shape(format!("projection shape {:?}", m.shape())));
        }
    }
    let mut e = all_embeddings.data().to_vec();
    e[..*d_x].copy_from_slice(ego_embedding);
    let cache = head_forward(&view(params), *d_x, d_k, &e, &vec![true; *n])?;
    Ok((cache.out, cache.weights))
}

/// Multi-head ego-attention over `(1 + N) x d_x` embeddings (row 0 the ego), followed by
/// the combination map and the residual connection to the ego embedding.
pub fn ego_attention_forward(
    embeddings: &Tensor,
    params: &AttentionParams,
) -> Result<(Vec<f64>, AttentionTrace), NnError> {
    let [n, d_x] = embeddings.shape() else {
        return Err(NnError::Shape("embeddings must be 2-D".into()));
    };
    let d_k = check_params(params, *d_x)?;
    let heads: Vec<HeadView> = params.heads.iter().map(view).collect();
    let (y, cache) = layer_forward(
        &heads,
        params.combine.data(),
        params.combine_bias.as_ref().map(|b| b.data()),
        *d_x,
        d_k,
        embeddings.data().to_vec(),
        &vec![true; *n],
    )?;
    let trace = AttentionTrace {
        heads: cache.heads.into_iter().map(|h| h.weights).collect(),
    };
    Ok((y, trace))
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct HeadIdx {
    pub query: usize,
    pub key: usize,
    pub value: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct AttentionLayerIdx {
    pub heads: Vec<HeadIdx>,
    pub combine: usize,
    pub combine_bias: Option<usize>,
}

/// Encoders, ego-attention layers and decoder of the attention Q-model.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct AttentionNet {
    pub ego_encoder: Sequential,
    pub others_encoder: Sequential,
    pub layers: Vec<AttentionLayerIdx>,
    pub decoder: Sequential,
    pub d_x: usize,
    pub d_k: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct AttentionCache {
    rows: Vec<f64>,
    mask: Vec<bool>,
    ego_acts: Vec<Vec<f64>>,
    others_acts: Vec<Option<Vec<Vec<f64>>>>,
    layers: Vec<LayerCache>,
    decoder_input: Vec<f64>,
    decoder_acts: Vec<Vec<f64>>,
}

impl AttentionCache {
    pub fn trace(&self) -> AttentionTrace {
        let last = self.layers.last().expect("at least one attention layer");
        AttentionTrace {
            heads: last.heads.iter().map(|h| h.weights.clone()).collect(),
        }
    }

    pub fn output(&self) -> &[f64] {
        self.decoder_acts.last().expect("decoder output")
    }

    pub fn activations(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.ego_acts
            .iter()
            .chain(self.others_acts.iter().flatten().flatten())
            .chain(self.decoder_acts.iter())
    }
}

impl AttentionNet {
    fn head_views<'a>(&self, p: &'a [f64], layer: &AttentionLayerIdx) -> Vec<HeadView<'a>> {
        let m = self.d_x * self.d_k;
        layer
            .heads
            .iter()
            .map(|h| HeadView {
                query: &p[h.query..h.query + m],
                key: &p[h.key..h.key + m],
                value: &p[h.value..h.value + m],
            })
            .collect()
    }

    /// `rows` is `n x 7` row-major; `mask[0]` must be true.
    pub fn forward(&self, p: &[f64], rows: &[f64], mask: &[bool]) -> Result<AttentionCache, NnError> {
        let width = self.ego_encoder.layers[0].in_len();
        let n = mask.len();
        if rows.len() != n * width || n == 0 || !mask[0] {
            return Err(NnError::Usage("attention input needs a present ego row".into()));
        }
        let ego_acts = self.ego_encoder.forward(p, &rows[..width]);
        let others_acts: Vec<Option<Vec<Vec<f64>>>> = (0..n)
            .map(|i| {
                (i > 0 && mask[i]).then(|| self.others_encoder.forward(p, &rows[i * width..(i + 1) * width]))
            })
            .collect();
        let d_x = self.d_x;
        let mut x = ego_acts.last().expect("encoder output").clone();
        let mut layer_caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let mut e = vec![0.0; n * d_x];
            e[..d_x].copy_from_slice(&x);
            for (i, acts) in others_acts.iter().enumerate() {
                if let Some(acts) = acts {
                    e[i * d_x..(i + 1) * d_x].copy_from_slice(acts.last().expect("encoder output"));
                }
            }
            let combine = &p[layer.combine..layer.combine + layer.heads.len() * self.d_k * d_x];
            let bias = layer.combine_bias.map(|b| &p[b..b + d_x]);
            let (y, cache) = layer_forward(&self.head_views(p, layer), combine, bias, d_x, self.d_k, e, mask)?;
            x = y;
            layer_caches.push(cache);
        }
        let decoder_acts = self.decoder.forward(p, &x);
        Ok(AttentionCache {
            rows: rows.to_vec(),
            mask: mask.to_vec(),
            ego_acts,
            others_acts,
            layers: layer_caches,
            decoder_input: x,
            decoder_acts,
        })
    }

    pub fn backward(&self, p: &[f64], cache: &AttentionCache, dq: &[f64], grads: &mut [f64]) {
        let (d_x, d_k) = (self.d_x, self.d_k);
        let n = cache.mask.len();
        let scale = (d_k as f64).sqrt();
        let mut d = self
            .decoder
            .backward(p, &cache.decoder_input, &cache.decoder_acts, dq, grads, true)
            .expect("input gradient requested");
        let mut d_others = vec![0.0; n * d_x];
        let present: Vec<usize> = (0..n).filter(|i| cache.mask[*i]).collect();
        for (layer, lc) in self.layers.iter().zip(&cache.layers).rev() {
            let mut de = vec![0.0; n * d_x];
            for (a, b) in de[..d_x].iter_mut().zip(&d) {
                *a += b;
            }
            if let Some(b) = layer.combine_bias {
                for (g, v) in grads[b..b + d_x].iter_mut().zip(&d) {
                    *g += v;
                }
            }
            let cl = layer.heads.len() * d_k * d_x;
            let mut dconcat = vec![0.0; layer.heads.len() * d_k];
            let combine = &p[layer.combine..layer.combine + cl];
            accumulate_backward(
                &lc.concat,
                combine,
                &d,
                &mut grads[layer.combine..layer.combine + cl],
                Some(&mut dconcat),
            );
            let m = d_x * d_k;
            for ((hidx, hc), dout) in layer.heads.iter().zip(&lc.heads).zip(dconcat.chunks_exact(d_k)) {
                let dw: Vec<f64> = (0..n)
                    .map(|i| if cache.mask[i] { dot(dout, &hc.values[i * d_k..(i + 1) * d_k]) } else { 0.0 })
                    .collect();
                let mean = dot(&hc.weights, &dw);
                let mut dqv = vec![0.0; d_k];
                for &i in &present {
                    let ds = hc.weights[i] * (dw[i] - mean);
                    let row = &lc.e[i * d_x..(i + 1) * d_x];
                    let dk: Vec<f64> = hc.q.iter().map(|q| ds * q / scale).collect();
                    for (a, k) in dqv.iter_mut().zip(&hc.keys[i * d_k..(i + 1) * d_k]) {
                        *a += ds * k / scale;
                    }
                    let dv: Vec<f64> = dout.iter().map(|g| hc.weights[i] * g).collect();
                    let de_row = &mut de[i * d_x..(i + 1) * d_x];
                    accumulate_backward(row, &p[hidx.key..hidx.key + m], &dk, &mut grads[hidx.key..hidx.key + m], Some(&mut *de_row));
                    accumulate_backward(row, &p[hidx.value..hidx.value + m], &dv, &mut grads[hidx.value..hidx.value + m], Some(de_row));
                }
                accumulate_backward(
                    &lc.e[..d_x],
                    &p[hidx.query..hidx.query + m],
                    &dqv,
                    &mut grads[hidx.query..hidx.query + m],
                    Some(&mut de[..d_x]),
                );
            }
            for (a, b) in d_others[d_x..].iter_mut().zip(&de[d_x..]) {
                *a += b;
            }
            d = de[..d_x].to_vec();
        }
        let width = self.ego_encoder.layers[0].in_len();
        self.ego_encoder
            .backward(p, &cache.rows[..width], &cache.ego_acts, &d, grads, false);
        for (i, acts) in cache.others_acts.iter().enumerate() {
            if let Some(acts) = acts {
                self.others_encoder.backward(
                    p,
                    &cache.rows[i * width..(i + 1) * width],
                    acts,
                    &d_others[i * d_x..(i + 1) * d_x],
                    grads,
                    false,
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

    fn random_params(rng: &mut ChaCha8Rng, d_x: usize, d_k: usize, heads: usize) -> AttentionParams {
        AttentionParams {
            heads: (0..heads)
                .map(|_| HeadParams {
                    query: random(rng, &[d_x, d_k]),
                    key: random(rng, &[d_x, d_k]),
                    value: random(rng, &[d_x, d_k]),
                })
                .collect(),
            combine: random(rng, &[heads * d_k, d_x]),
            combine_bias: Some(random(rng, &[d_x])),
        }
    }

    #[test]
    fn single_row_attends_to_itself() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_params(&mut rng, 4, 2, 1);
        let e = random(&mut rng, &[1, 4]);
        let (out, w) = attention_head(e.data(), &e, &p.heads[0]).unwrap();
        assert_eq!(w, vec![1.0]);
        let v0 = super::super::affine(&Tensor::vector(e.data().to_vec()), &p.heads[0].value, None).unwrap();
        assert_eq!(out, v0.data());
    }

    #[test]
    fn identical_rows_give_uniform_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_params(&mut rng, 6, 3, 1);
        let row: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let e = Tensor::new(vec![4, 6], row.repeat(4)).unwrap();
        let (_, w) = attention_head(&row, &e, &p.heads[0]).unwrap();
        for wi in w {
            assert!((wi - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn hand_sized_head() {
        // d_x = d_k = 2, embeddings [[1, 0], [0, 1], [1, 1]]
        let eye = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let key = Tensor::new(vec![2, 2], vec![2.0, 0.0, 0.0, 1.0]).unwrap();
        let value = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let head = HeadParams {
            query: eye.clone(),
            key,
            value,
        };
        let e = Tensor::new(vec![3, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let (out, w) = attention_head(&[1.0, 0.0], &e, &head).unwrap();
        // q = (1, 0); K = [[2,0],[0,1],[2,1]]; scores = (2, 0, 2)/sqrt 2
        let s = [2.0 / 2f64.sqrt(), 0.0, 2.0 / 2f64.sqrt()];
        let z: f64 = s.iter().map(|v| v.exp()).sum();
        let expected_w: Vec<f64> = s.iter().map(|v| v.exp() / z).collect();
        // V = [[1,2],[3,4],[4,6]]
        let v = [[1.0, 2.0], [3.0, 4.0], [4.0, 6.0]];
        let expected_out = [
            (0..3).map(|i| expected_w[i] * v[i][0]).sum::<f64>(),
            (0..3).map(|i| expected_w[i] * v[i][1]).sum::<f64>(),
        ];
        for (a, b) in w.iter().zip(&expected_w) {
            assert!((a - b).abs() < 1e-14);
        }
        for (a, b) in out.iter().zip(&expected_out) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn scores_are_scaled_by_sqrt_dk() {
        // q0 . k1 = 32 * 1 = 32 and q0 . k0 = 0, so the weight ratio is exp(32 / sqrt 32)
        let d = 32;
        let mut query = Tensor::zeros(&[d, d]);
        let mut key = Tensor::zeros(&[d, d]);
        for j in 0..d {
            query.data_mut()[j] = 1.0; // row 0 of L_q: ego feature 0 -> all ones
            key.data_mut()[d + j] = 1.0; // row 1 of L_k: feature 1 -> all ones
        }
        let head = HeadParams {
            query,
            key,
            value: Tensor::zeros(&[d, d]),
        };
        let mut e = vec![0.0; 2 * d];
        e[0] = 1.0;
        e[d + 1] = 1.0;
        let e = Tensor::new(vec![2, d], e).unwrap();
        let (_, w) = attention_head(&e.data()[..d], &e, &head).unwrap();
        let ratio = w[1] / w[0];
        assert!((ratio.ln() - 32.0 / 32f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn zero_combination_returns_ego_embedding() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = random_params(&mut rng, 8, 4, 2);
        p.combine = Tensor::zeros(&[8, 8]);
        p.combine_bias = Some(Tensor::zeros(&[8]));
        let e = random(&mut rng, &[3, 8]);
        let (y, trace) = ego_attention_forward(&e, &p).unwrap();
        assert_eq!(y, e.data()[..8]);
        assert_eq!(trace.heads.len(), 2);
    }

    #[test]
    fn swapping_others_swaps_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = random_params(&mut rng, 8, 4, 2);
        let e = random(&mut rng, &[3, 8]);
        let mut swapped = e.data().to_vec();
        swapped[8..16].copy_from_slice(&e.data()[16..24]);
        swapped[16..24].copy_from_slice(&e.data()[8..16]);
        let swapped = Tensor::new(vec![3, 8], swapped).unwrap();
        let (y1, t1) = ego_attention_forward(&e, &p).unwrap();
        let (y2, t2) = ego_attention_forward(&swapped, &p).unwrap();
        for (a, b) in y1.iter().zip(&y2) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
        for (h1, h2) in t1.heads.iter().zip(&t2.heads) {
            assert!((h1[1] - h2[2]).abs() < 1e-15 && (h1[2] - h2[1]).abs() < 1e-15);
        }
        let (y3, _) = ego_attention_forward(&e, &p).unwrap();
        assert_eq!(y1, y3);
    }
}
