//! Causal transformer forward pass (one position at a time, with a KV cache)
//! and its exact reverse-mode backward pass.
//!
//! Full-sequence evaluation and autoregressive sampling share the same
//! per-position code path, so the log-probabilities recorded while sampling are
//! bit-identical to those recomputed later from the same parameters.

use crate::error::{Result, UrpError};
use crate::numeric::{axpy, dot, matvec, matvec_backward, Real};

use super::params::{LayerOffsets, PolicyParams};
use super::prompt::{PrefixInput, Prompt};

const RMS_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Prefix(usize),
    Token(usize),
}

#[derive(Debug, Default, Clone)]
struct LayerCache<T> {
    x_in: Vec<T>,
    r1: Vec<T>,
    n1: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    att: Vec<T>,
    a: Vec<T>,
    x_mid: Vec<T>,
    r2: Vec<T>,
    n2: Vec<T>,
    h_pre: Vec<T>,
    h_act: Vec<T>,
}

/// Activations of one (growing) sequence.
#[derive(Debug, Clone)]
pub struct Session<'a, T: Real> {
    params: &'a PolicyParams<T>,
    features: Option<Vec<T>>,
    prefix: Vec<T>,
    slots: Vec<Slot>,
    layers: Vec<LayerCache<T>>,
    x_final: Vec<T>,
    r_final: Vec<T>,
    n_final: Vec<T>,
    logits: Vec<T>,
}

fn rms_norm<T: Real>(x: &[T], gain: &[T], out: &mut Vec<T>) -> T {
    let d = T::lit(x.len() as f64);
    let r = (dot(x, x) / d + T::lit(RMS_EPS)).sqrt();
    out.extend(x.iter().zip(gain).map(|(&xi, &g)| g * xi / r));
    r
}

/// Accumulates `dx` and `dgain` for `y = gain * x / rms(x)`.
fn rms_norm_backward<T: Real>(x: &[T], r: T, gain: &[T], dy: &[T], dgain: &mut [T], dx: &mut [T]) {
    let d = T::lit(x.len() as f64);
    let mut ux = T::zero();
    for i in 0..x.len() {
        dgain[i] += dy[i] * x[i] / r;
        ux += dy[i] * gain[i] * x[i];
    }
    let coef = ux / (d * r * r * r);
    for i in 0..x.len() {
        dx[i] += dy[i] * gain[i] / r - x[i] * coef;
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[inline]
fn gelu<T: Real>(x: T) -> T {
    let c = T::lit(GELU_C);
    let u = c * (x + T::lit(0.044715) * x * x * x);
    T::lit(0.5) * x * (T::one() + u.tanh())
}

#[inline]
fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::lit(GELU_C);
    let u = c * (x + T::lit(0.044715) * x * x * x);
    let th = u.tanh();
    T::lit(0.5) * (T::one() + th)
        + T::lit(0.5) * x * (T::one() - th * th) * c * (T::one() + T::lit(3.0 * 0.044715) * x * x)
}

#[inline]
fn att_offset(t: usize, heads: usize) -> usize {
    heads * t * (t + 1) / 2
}

impl<'a, T: Real> Session<'a, T> {
    pub fn new(params: &'a PolicyParams<T>, prefix: &PrefixInput) -> Result<Self> {
        let cfg = &params.config;
        let lay = &params.layout;
        let d = cfg.d_model;
        let pd = cfg.n_prefix * d;
        let (features, prefix_vecs) = match prefix {
            PrefixInput::Raster(f) => {
                if f.len() != cfg.raster_features {
                    return Err(UrpError::Domain(format!(
                        "expected {} raster features, got {}",
                        cfg.raster_features,
                        f.len()
                    )));
                }
                let f: Vec<T> = f.iter().map(|&v| T::lit(v)).collect();
                let mut out = vec![T::zero(); pd];
                matvec(&params.data[lay.raster_w..lay.raster_w + pd * f.len()], f.len(), &f, &mut out);
                for (o, &b) in out.iter_mut().zip(&params.data[lay.raster_b..lay.raster_b + pd]) {
                    *o += b;
                }
                (Some(f), out)
            }
            PrefixInput::Null => {
                let null = &params.data[lay.null_prefix..lay.null_prefix + d];
                (None, null.iter().copied().cycle().take(pd).collect())
            }
        };
        Ok(Session {
            params,
            features,
            prefix: prefix_vecs,
            slots: Vec::new(),
            layers: vec![LayerCache::default(); cfg.n_layers],
            x_final: Vec::new(),
            r_final: Vec::new(),
            n_final: Vec::new(),
            logits: Vec::new(),
        })
    }

    /// Starts a session and feeds every prefix slot and prompt token.
    pub fn start(params: &'a PolicyParams<T>, prompt: &Prompt) -> Result<Self> {
        let mut s = Self::new(params, &prompt.prefix)?;
        for p in 0..params.config.n_prefix {
            s.push(Slot::Prefix(p))?;
        }
        for &tok in &prompt.tokens {
            s.push_token(tok)?;
        }
        Ok(s)
    }

    /// Feeds `prompt` and `targets[..n-1]`; row `first + t` of the logits then
    /// predicts `targets[t]`. Returns the session and `first`.
    pub fn teacher_forced(params: &'a PolicyParams<T>, prompt: &Prompt, targets: &[usize]) -> Result<(Self, usize)> {
        let cfg = &params.config;
        let needed = cfg.n_prefix + prompt.tokens.len() + targets.len().saturating_sub(1);
        if needed > cfg.context {
            return Err(UrpError::Capacity {
                len: needed,
                limit: cfg.context,
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= cfg.vocab_size) {
            return Err(UrpError::Domain(format!("token id {bad} outside the vocabulary")));
        }
        let mut s = Self::start(params, prompt)?;
        let first = s.len().checked_sub(1).ok_or_else(|| {
            UrpError::Domain("a prompt needs at least one prefix slot or token".into())
        })?;
        for &tok in targets.iter().take(targets.len().saturating_sub(1)) {
            s.push_token(tok)?;
        }
        Ok((s, first))
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn vocab_size(&self) -> usize {
        self.params.config.vocab_size
    }

    pub fn logits_row(&self, t: usize) -> &[T] {
        let v = self.vocab_size();
        &self.logits[t * v..(t + 1) * v]
    }

    pub fn last_logits(&self) -> &[T] {
        self.logits_row(self.len() - 1)
    }

    pub fn push_token(&mut self, id: usize) -> Result<&[T]> {
        if id >= self.vocab_size() {
            return Err(UrpError::Domain(format!("token id {id} outside the vocabulary")));
        }
        self.push(Slot::Token(id))
    }

    fn push(&mut self, slot: Slot) -> Result<&[T]> {
        let p = self.params;
        let cfg = &p.config;
        let lay = &p.layout;
        let w = &p.data;
        let (d, ff, heads, hd) = (cfg.d_model, cfg.ff_dim(), cfg.n_heads, cfg.head_dim());
        let t = self.slots.len();
        if t >= cfg.context {
            return Err(UrpError::Capacity {
                len: t + 1,
                limit: cfg.context,
            });
        }
        let mut x: Vec<T> = match slot {
            Slot::Prefix(i) => self.prefix[i * d..(i + 1) * d].to_vec(),
            Slot::Token(id) => w[lay.tok_emb + id * d..lay.tok_emb + (id + 1) * d].to_vec(),
        };
        axpy(T::one(), &w[lay.pos_emb + t * d..lay.pos_emb + (t + 1) * d], &mut x);
        let scale = T::one() / T::lit(hd as f64).sqrt();

        for (lo, c) in lay.layers.iter().zip(self.layers.iter_mut()) {
            c.x_in.extend_from_slice(&x);
            let n1_start = c.n1.len();
            let r1 = rms_norm(&x, &w[lo.ln1..lo.ln1 + d], &mut c.n1);
            c.r1.push(r1);
            let n1 = c.n1[n1_start..].to_vec();
            for (buf, off) in [(&mut c.q, lo.wq), (&mut c.k, lo.wk), (&mut c.v, lo.wv)] {
                let start = buf.len();
                buf.resize(start + d, T::zero());
                matvec(&w[off..off + d * d], d, &n1, &mut buf[start..]);
            }
            let mut a = vec![T::zero(); d];
            for h in 0..heads {
                let q = &c.q[t * d + h * hd..t * d + (h + 1) * hd];
                let mut scores: Vec<T> = (0..=t)
                    .map(|j| dot(q, &c.k[j * d + h * hd..j * d + (h + 1) * hd]) * scale)
                    .collect();
                let max = scores.iter().fold(T::neg_infinity(), |m, &s| m.max(s));
                let mut sum = T::zero();
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                    sum += *s;
                }
                for (j, s) in scores.iter_mut().enumerate() {
                    *s /= sum;
                    axpy(*s, &c.v[j * d + h * hd..j * d + (h + 1) * hd], &mut a[h * hd..(h + 1) * hd]);
                }
                c.att.extend_from_slice(&scores);
            }
            let mut o = vec![T::zero(); d];
            matvec(&w[lo.wo..lo.wo + d * d], d, &a, &mut o);
            c.a.extend_from_slice(&a);
            axpy(T::one(), &o, &mut x);
            c.x_mid.extend_from_slice(&x);

            let n2_start = c.n2.len();
            let r2 = rms_norm(&x, &w[lo.ln2..lo.ln2 + d], &mut c.n2);
            c.r2.push(r2);
            let mut h_pre = vec![T::zero(); ff];
            matvec(&w[lo.w1..lo.w1 + ff * d], d, &c.n2[n2_start..], &mut h_pre);
            for (hv, &b) in h_pre.iter_mut().zip(&w[lo.b1..lo.b1 + ff]) {
                *hv += b;
            }
            let h_act: Vec<T> = h_pre.iter().map(|&v| gelu(v)).collect();
            let mut m = vec![T::zero(); d];
            matvec(&w[lo.w2..lo.w2 + d * ff], ff, &h_act, &mut m);
            for i in 0..d {
                x[i] += m[i] + w[lo.b2 + i];
            }
            c.h_pre.extend_from_slice(&h_pre);
            c.h_act.extend_from_slice(&h_act);
        }

        self.x_final.extend_from_slice(&x);
        let nf_start = self.n_final.len();
        let rf = rms_norm(&x, &w[lay.ln_f..lay.ln_f + d], &mut self.n_final);
        self.r_final.push(rf);
        let v = cfg.vocab_size;
        let start = self.logits.len();
        self.logits.resize(start + v, T::zero());
        matvec(&w[lay.out_w..lay.out_w + v * d], d, &self.n_final[nf_start..], &mut self.logits[start..]);
        for (l, &b) in self.logits[start..].iter_mut().zip(&w[lay.out_b..lay.out_b + v]) {
            *l += b;
        }
        self.slots.push(slot);
        Ok(&self.logits[start..])
    }

    /// Accumulates into `grad` the gradient of `sum_r <dlogits[r], logits[first + r]>`.
    pub fn backward(&self, first: usize, dlogits: &[T], grad: &mut [T]) {
        let p = self.params;
        let cfg = &p.config;
        let lay = &p.layout;
        let w = &p.data;
        let (d, ff, heads, hd, v) = (cfg.d_model, cfg.ff_dim(), cfg.n_heads, cfg.head_dim(), cfg.vocab_size);
        let n = self.len();
        debug_assert_eq!(grad.len(), lay.total);
        let mut dx = vec![T::zero(); n * d];

        for (r, dl) in dlogits.chunks(v).enumerate() {
            if dl.iter().all(|&g| g == T::zero()) {
                continue;
            }
            let t = first + r;
            for (g, &x) in grad[lay.out_b..lay.out_b + v].iter_mut().zip(dl) {
                *g += x;
            }
            let mut dn = vec![T::zero(); d];
            matvec_backward(
                &w[lay.out_w..lay.out_w + v * d],
                d,
                &self.n_final[t * d..(t + 1) * d],
                dl,
                &mut grad[lay.out_w..lay.out_w + v * d],
                &mut dn,
            );
            rms_norm_backward(
                &self.x_final[t * d..(t + 1) * d],
                self.r_final[t],
                &w[lay.ln_f..lay.ln_f + d],
                &dn,
                &mut grad[lay.ln_f..lay.ln_f + d],
                &mut dx[t * d..(t + 1) * d],
            );
        }

        for (lo, c) in lay.layers.iter().zip(&self.layers).rev() {
            dx = self.layer_backward(lo, c, dx, grad, d, ff, heads, hd);
        }

        let pd = cfg.n_prefix * d;
        let mut dprefix = vec![T::zero(); pd];
        for (t, slot) in self.slots.iter().enumerate() {
            let g = &dx[t * d..(t + 1) * d];
            axpy(T::one(), g, &mut grad[lay.pos_emb + t * d..lay.pos_emb + (t + 1) * d]);
            match *slot {
                Slot::Token(id) => axpy(T::one(), g, &mut grad[lay.tok_emb + id * d..lay.tok_emb + (id + 1) * d]),
                Slot::Prefix(i) => axpy(T::one(), g, &mut dprefix[i * d..(i + 1) * d]),
            }
        }
        match &self.features {
            Some(f) => {
                let nf = f.len();
                let mut unused = vec![T::zero(); nf];
                matvec_backward(
                    &w[lay.raster_w..lay.raster_w + pd * nf],
                    nf,
                    f,
                    &dprefix,
                    &mut grad[lay.raster_w..lay.raster_w + pd * nf],
                    &mut unused,
                );
                axpy(T::one(), &dprefix, &mut grad[lay.raster_b..lay.raster_b + pd]);
            }
            None => {
                for chunk in dprefix.chunks(d) {
                    axpy(T::one(), chunk, &mut grad[lay.null_prefix..lay.null_prefix + d]);
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn layer_backward(
        &self,
        lo: &LayerOffsets,
        c: &LayerCache<T>,
        dx_out: Vec<T>,
        grad: &mut [T],
        d: usize,
        ff: usize,
        heads: usize,
        hd: usize,
    ) -> Vec<T> {
        let w = &self.params.data;
        let n = self.len();
        let row = |t: usize| t * d..(t + 1) * d;
        let frow = |t: usize| t * ff..(t + 1) * ff;

        // MLP branch: x_out = x_mid + W2 gelu(W1 n2 + b1) + b2
        let mut dx_mid = dx_out.clone();
        for t in 0..n {
            let g = &dx_out[row(t)];
            axpy(T::one(), g, &mut grad[lo.b2..lo.b2 + d]);
            let mut dh = vec![T::zero(); ff];
            matvec_backward(&w[lo.w2..lo.w2 + d * ff], ff, &c.h_act[frow(t)], g, &mut grad[lo.w2..lo.w2 + d * ff], &mut dh);
            for (dhi, &hp) in dh.iter_mut().zip(&c.h_pre[frow(t)]) {
                *dhi *= gelu_grad(hp);
            }
            axpy(T::one(), &dh, &mut grad[lo.b1..lo.b1 + ff]);
            let mut dn2 = vec![T::zero(); d];
            matvec_backward(&w[lo.w1..lo.w1 + ff * d], d, &c.n2[row(t)], &dh, &mut grad[lo.w1..lo.w1 + ff * d], &mut dn2);
            rms_norm_backward(
                &c.x_mid[row(t)],
                c.r2[t],
                &w[lo.ln2..lo.ln2 + d],
                &dn2,
                &mut grad[lo.ln2..lo.ln2 + d],
                &mut dx_mid[row(t)],
            );
        }

        // Attention branch: x_mid = x_in + Wo a
        let scale = T::one() / T::lit(hd as f64).sqrt();
        let mut da = vec![T::zero(); n * d];
        for t in 0..n {
            matvec_backward(&w[lo.wo..lo.wo + d * d], d, &c.a[row(t)], &dx_mid[row(t)], &mut grad[lo.wo..lo.wo + d * d], &mut da[row(t)]);
        }
        let mut dq = vec![T::zero(); n * d];
        let mut dk = vec![T::zero(); n * d];
        let mut dv = vec![T::zero(); n * d];
        for t in 0..n {
            let base = att_offset(t, heads);
            for h in 0..heads {
                let probs = &c.att[base + h * (t + 1)..base + (h + 1) * (t + 1)];
                let hs = h * hd..(h + 1) * hd;
                let da_t = &da[t * d + hs.start..t * d + hs.end];
                let mut dp: Vec<T> = (0..=t)
                    .map(|j| dot(da_t, &c.v[j * d + hs.start..j * d + hs.end]))
                    .collect();
                let s: T = probs.iter().zip(&dp).map(|(&p, &g)| p * g).sum();
                for j in 0..=t {
                    axpy(probs[j], da_t, &mut dv[j * d + hs.start..j * d + hs.end]);
                    dp[j] = probs[j] * (dp[j] - s) * scale;
                }
                for j in 0..=t {
                    let (qs, ks) = (t * d + hs.start, j * d + hs.start);
                    for i in 0..hd {
                        dq[qs + i] += dp[j] * c.k[ks + i];
                        dk[ks + i] += dp[j] * c.q[qs + i];
                    }
                }
            }
        }
        let mut dx_in = dx_mid;
        for t in 0..n {
            let mut dn1 = vec![T::zero(); d];
            for (dbuf, off) in [(&dq, lo.wq), (&dk, lo.wk), (&dv, lo.wv)] {
                matvec_backward(&w[off..off + d * d], d, &c.n1[row(t)], &dbuf[row(t)], &mut grad[off..off + d * d], &mut dn1);
            }
            rms_norm_backward(
                &c.x_in[row(t)],
                c.r1[t],
                &w[lo.ln1..lo.ln1 + d],
                &dn1,
                &mut grad[lo.ln1..lo.ln1 + d],
                &mut dx_in[row(t)],
            );
        }
        dx_in
    }
}

/// Logits at every position after feeding the prompt and `tokens`.
pub fn forward_logits<T: Real>(params: &PolicyParams<T>, prompt: &Prompt, tokens: &[usize]) -> Result<Vec<Vec<T>>> {
    let needed = params.config.n_prefix + prompt.tokens.len() + tokens.len();
    if needed > params.config.context {
        return Err(UrpError::Capacity {
            len: needed,
            limit: params.config.context,
        });
    }
    let mut s = Session::start(params, prompt)?;
    for &t in tokens {
        s.push_token(t)?;
    }
    Ok((0..s.len()).map(|t| s.logits_row(t).to_vec()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::params::ModelConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> ModelConfig {
        ModelConfig {
            vocab_size: 7,
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            n_prefix: 2,
            context: 16,
            raster_features: 5,
            ..ModelConfig::default()
        }
    }

    fn raster_prompt() -> Prompt {
        Prompt {
            prefix: PrefixInput::Raster(vec![0.1, -0.3, 0.2, 0.4, -0.1]),
            tokens: vec![1, 4, 2],
        }
    }

    #[test]
    fn appending_leaves_earlier_logits_unchanged() {
        let p = PolicyParams::<f64>::init(&tiny(), 1).unwrap();
        let a = forward_logits(&p, &raster_prompt(), &[3]).unwrap();
        let b = forward_logits(&p, &raster_prompt(), &[3, 5, 0]).unwrap();
        assert_eq!(a[..], b[..a.len()]);
        let c = forward_logits(&p, &raster_prompt(), &[6, 5, 0]).unwrap();
        assert_eq!(a[..a.len() - 1], c[..a.len() - 1]);
        assert_ne!(a.last(), c.get(a.len() - 1));
    }

    #[test]
    fn zero_output_projection_is_uniform() {
        let mut p = PolicyParams::<f64>::init(&tiny(), 1).unwrap();
        p.tensor_mut("out.weight").unwrap().fill(0.0);
        for row in forward_logits(&p, &raster_prompt(), &[3, 2]).unwrap() {
            assert!(row.iter().all(|&l| l == 0.0));
        }
    }

    #[test]
    fn overlong_sequence_is_a_capacity_error() {
        let p = PolicyParams::<f64>::init(&tiny(), 1).unwrap();
        let long = vec![1; 12];
        assert!(matches!(
            forward_logits(&p, &raster_prompt(), &long),
            Err(UrpError::Capacity { .. })
        ));
        assert!(forward_logits(&p, &raster_prompt(), &long[..11]).is_ok());
    }

    #[test]
    fn wrong_feature_count_is_rejected() {
        let p = PolicyParams::<f64>::init(&tiny(), 1).unwrap();
        let prompt = Prompt {
            prefix: PrefixInput::Raster(vec![0.0; 4]),
            tokens: vec![1],
        };
        assert!(Session::start(&p, &prompt).is_err());
    }

    fn directional(p: &PolicyParams<f64>, prompt: &Prompt, targets: &[usize], dir: &[f64]) -> f64 {
        let (s, first) = Session::teacher_forced(p, prompt, targets).unwrap();
        (0..targets.len())
            .map(|t| dot(s.logits_row(first + t), &dir[t * 7..(t + 1) * 7]))
            .sum()
    }

    fn check_fd(prompt: Prompt) {
        let mut p = PolicyParams::<f64>::init(&tiny(), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // larger weights so every path carries signal
        p.data.iter_mut().for_each(|x| *x += rng.random_range(-0.3..0.3));
        let targets = [2, 5, 1, 3];
        let dir: Vec<f64> = (0..targets.len() * 7).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (s, first) = Session::teacher_forced(&p, &prompt, &targets).unwrap();
        let mut g = vec![0.0; p.data.len()];
        s.backward(first, &dir, &mut g);
        let h = 1e-5;
        let mut worst = 0.0f64;
        for i in 0..p.data.len() {
            let orig = p.data[i];
            p.data[i] = orig + h;
            let up = directional(&p, &prompt, &targets, &dir);
            p.data[i] = orig - h;
            let down = directional(&p, &prompt, &targets, &dir);
            p.data[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let err = (fd - g[i]).abs() / (fd.abs() + g[i].abs()).max(1e-6);
            worst = worst.max(err);
        }
        assert!(worst < 1e-5, "worst relative error {worst}");
    }

    #[test]
    fn backward_matches_finite_differences_with_raster() {
        check_fd(raster_prompt());
    }

    #[test]
    fn backward_matches_finite_differences_with_null_prefix() {
        check_fd(Prompt {
            prefix: PrefixInput::Null,
            tokens: vec![0, 6],
        });
    }

    #[test]
    fn f32_tracks_f64() {
        let p64 = PolicyParams::<f64>::init(&tiny(), 4).unwrap();
        let p32 = PolicyParams::<f32>::from_f64(&tiny(), &p64.to_f64()).unwrap();
        let a = forward_logits(&p64, &raster_prompt(), &[1, 2]).unwrap();
        let b = forward_logits(&p32, &raster_prompt(), &[1, 2]).unwrap();
        for (ra, rb) in a.iter().zip(&b) {
            for (x, y) in ra.iter().zip(rb) {
                assert!((x - *y as f64).abs() < 1e-4);
            }
        }
    }
}
