//! Forward passes and hand-written reverse-mode gradients.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use super::gaussian::{kl_diag_gaussian, log_normal, GaussianDiag};
use super::params::AnpParams;
use super::AnpError;
use crate::dataset::{ContextTargetSplit, Points};

/// Smallest distance the latent sigmoid keeps from 0 and 1, so the latent
/// std stays strictly inside (0.1, 1.0) even for huge logits.
const SIGMOID_EPS: f64 = 1e-12;
const SOFTPLUS_FLOOR: f64 = 1e-12;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Latent std from its raw head output, with d std / d raw.
pub(crate) fn latent_std(raw: f64) -> (f64, f64) {
    let sg = sigmoid(raw);
    if sg < SIGMOID_EPS {
        (0.1 + 0.9 * SIGMOID_EPS, 0.0)
    } else if sg > 1.0 - SIGMOID_EPS {
        (0.1 + 0.9 * (1.0 - SIGMOID_EPS), 0.0)
    } else {
        (0.1 + 0.9 * sg, 0.9 * sg * (1.0 - sg))
    }
}

/// Decoder std from its raw output, with d std / d raw.
pub(crate) fn decoder_std(raw: f64) -> (f64, f64) {
    let sp = softplus(raw);
    if sp < SOFTPLUS_FLOOR {
        (0.1 + 0.9 * SOFTPLUS_FLOOR, 0.0)
    } else {
        (0.1 + 0.9 * sp, 0.9 * sigmoid(raw))
    }
}

fn linear_forward(p: &AnpParams, layer: usize, x: &Array2<f64>) -> Array2<f64> {
    let (w, b) = p.linear(layer);
    x.dot(&w) + &b
}

/// Accumulates weight gradients and returns the gradient w.r.t. the input.
fn linear_backward(
    p: &AnpParams,
    grads: &mut [f64],
    layer: usize,
    x: &Array2<f64>,
    dout: &Array2<f64>,
) -> Array2<f64> {
    let (w, _) = p.linear(layer);
    let (mut gw, mut gb) = p.linear_grad(grads, layer);
    gw += &x.t().dot(dout);
    gb += &dout.sum_axis(Axis(0));
    dout.dot(&w.t())
}

/// Returns the output and the input of every linear layer.
fn mlp_forward(p: &AnpParams, first: usize, depth: usize, x: Array2<f64>) -> (Array2<f64>, Vec<Array2<f64>>) {
    let mut inputs = Vec::with_capacity(depth);
    let mut act = x;
    for l in 0..depth {
        let out = linear_forward(p, first + l, &act);
        inputs.push(act);
        act = if l + 1 < depth { out.mapv(|v| v.max(0.0)) } else { out };
    }
    (act, inputs)
}

fn mlp_backward(
    p: &AnpParams,
    grads: &mut [f64],
    first: usize,
    inputs: &[Array2<f64>],
    dout: Array2<f64>,
) -> Array2<f64> {
    let mut d = dout;
    for l in (0..inputs.len()).rev() {
        if l + 1 < inputs.len() {
            d.zip_mut_with(&inputs[l + 1], |g, &a| {
                if a <= 0.0 {
                    *g = 0.0;
                }
            });
        }
        d = linear_backward(p, grads, first + l, &inputs[l], &d);
    }
    d
}

fn xy(points: &Points) -> Array2<f64> {
    concatenate(Axis(1), &[points.x.view(), points.y.view().insert_axis(Axis(1))]).expect("row counts match")
}

fn softmax_rows(a: &mut Array2<f64>) {
    for mut row in a.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let total: f64 = row.sum();
        row /= total;
    }
}

struct DetTrace {
    enc: Vec<Array2<f64>>,
    rc: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Array2<f64>,
}

fn det_forward(p: &AnpParams, ctx: &Points, xq: &Array2<f64>) -> (Array2<f64>, Option<DetTrace>) {
    let arch = p.architecture();
    let h = arch.width;
    if ctx.is_empty() {
        return (Array2::zeros((xq.nrows(), h)), None);
    }
    let ids = arch.ids();
    let (rc, enc) = mlp_forward(p, ids.det, arch.encoder_layers, xy(ctx));
    let q = linear_forward(p, ids.query, xq);
    let k = linear_forward(p, ids.key, &ctx.x);
    let v = linear_forward(p, ids.value, &rc);
    let mut attn = q.dot(&k.t()) / (h as f64).sqrt();
    softmax_rows(&mut attn);
    let r = attn.dot(&v);
    (r, Some(DetTrace { enc, rc, q, k, v, attn }))
}

fn det_backward(
    p: &AnpParams,
    grads: &mut [f64],
    ctx: &Points,
    xq: &Array2<f64>,
    tr: &DetTrace,
    dr: &Array2<f64>,
) {
    let ids = p.architecture().ids();
    let scale = 1.0 / (p.architecture().width as f64).sqrt();
    let da = dr.dot(&tr.v.t());
    let dv = tr.attn.t().dot(dr);
    let row_dot = (&tr.attn * &da).sum_axis(Axis(1)).insert_axis(Axis(1));
    let ds = &tr.attn * &(da - &row_dot) * scale;
    let dq = ds.dot(&tr.k);
    let dk = ds.t().dot(&tr.q);
    linear_backward(p, grads, ids.query, xq, &dq);
    linear_backward(p, grads, ids.key, &ctx.x, &dk);
    let drc = linear_backward(p, grads, ids.value, &tr.rc, &dv);
    mlp_backward(p, grads, ids.det, &tr.enc, drc);
}

struct LatTrace {
    enc: Vec<Array2<f64>>,
    n: usize,
    sbar: Array1<f64>,
    dstd: Array1<f64>,
}

fn latent_forward(p: &AnpParams, set: &Points) -> (Array1<f64>, Array1<f64>, LatTrace) {
    let arch = p.architecture();
    let (ids, h) = (arch.ids(), arch.latent_dim());
    let (sbar, enc) = if set.is_empty() {
        (Array1::zeros(arch.width), Vec::new())
    } else {
        let (s, enc) = mlp_forward(p, ids.lat, arch.encoder_layers, xy(set));
        (s.sum_axis(Axis(0)) / set.len() as f64, enc)
    };
    let (w, b) = p.linear(ids.lat_head);
    let head = sbar.dot(&w) + &b;
    let mean = head.slice(s![..h]).to_owned();
    let (std, dstd): (Vec<f64>, Vec<f64>) = head.slice(s![h..]).iter().map(|&r| latent_std(r)).unzip();
    (mean, Array1::from(std), LatTrace { enc, n: set.len(), sbar, dstd: Array1::from(dstd) })
}

fn latent_backward(p: &AnpParams, grads: &mut [f64], tr: &LatTrace, dmean: &Array1<f64>, dstd: &Array1<f64>) {
    let ids = p.architecture().ids();
    let dhead = concatenate(Axis(0), &[dmean.view(), (dstd * &tr.dstd).view()]).expect("same rank");
    let (w, _) = p.linear(ids.lat_head);
    {
        let (mut gw, mut gb) = p.linear_grad(grads, ids.lat_head);
        gw += &tr.sbar.view().insert_axis(Axis(1)).dot(&dhead.view().insert_axis(Axis(0)));
        gb += &dhead;
    }
    if tr.n > 0 {
        let dsbar = w.dot(&dhead) / tr.n as f64;
        let ds = dsbar.broadcast((tr.n, dsbar.len())).expect("broadcast row").to_owned();
        mlp_backward(p, grads, ids.lat, &tr.enc, ds);
    }
}

struct DecOut {
    mean: Array1<f64>,
    std: Array1<f64>,
    dstd: Array1<f64>,
    inputs: Vec<Array2<f64>>,
}

fn decoder_forward(p: &AnpParams, xq: &Array2<f64>, r: &Array2<f64>, z: ArrayView1<f64>) -> DecOut {
    let arch = p.architecture();
    let zrows = z.broadcast((xq.nrows(), z.len())).expect("broadcast z");
    let input = concatenate(Axis(1), &[xq.view(), r.view(), zrows]).expect("row counts match");
    let (out, inputs) = mlp_forward(p, arch.ids().dec, arch.decoder_layers, input);
    let (std, dstd): (Vec<f64>, Vec<f64>) = out.column(1).iter().map(|&r| decoder_std(r)).unzip();
    DecOut { mean: out.column(0).to_owned(), std: Array1::from(std), dstd: Array1::from(dstd), inputs }
}

/// ELBO of one split together with the gradient of its negation.
#[derive(Clone, Debug, PartialEq)]
pub struct Elbo {
    pub value: f64,
    /// Mean over z samples of the summed target log-likelihood.
    pub log_likelihood: f64,
    pub kl: f64,
    /// d(−value)/d(params), laid out like the parameter vector.
    pub grad: Vec<f64>,
}

fn check_finite<'a>(what: &'static str, values: impl IntoIterator<Item = &'a f64>) -> Result<(), AnpError> {
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(AnpError::NonFinite(what))
    }
}

impl AnpParams {
    fn check_points(&self, what: &'static str, points: &Points) -> Result<(), AnpError> {
        let d = self.architecture().x_dim;
        if points.dim() != d && !(points.is_empty() && points.dim() == 0) {
            return Err(AnpError::Shape(format!("{what} has dimension {}, model expects {d}", points.dim())));
        }
        check_finite(what, points.x.iter().chain(points.y.iter()))
    }

    fn check_query(&self, query_x: &ArrayView2<f64>) -> Result<(), AnpError> {
        let d = self.architecture().x_dim;
        if query_x.nrows() == 0 {
            return Err(AnpError::EmptyQuery);
        }
        if query_x.ncols() != d {
            return Err(AnpError::Shape(format!("query has dimension {}, model expects {d}", query_x.ncols())));
        }
        check_finite("query", query_x.iter())
    }

    fn normalized(&self, points: &Points) -> Points {
        if points.is_empty() {
            Points::empty(self.architecture().x_dim)
        } else {
            points.clone()
        }
    }

    /// Cross-attention representation r*(x) for every query row.
    pub fn encode_deterministic(&self, context: &Points, query_x: ArrayView2<f64>) -> Result<Array2<f64>, AnpError> {
        self.check_points("context", context)?;
        self.check_query(&query_x)?;
        Ok(det_forward(self, &self.normalized(context), &query_x.to_owned()).0)
    }

    /// Latent distribution from mean-aggregated encodings of `set`.
    pub fn encode_latent(&self, set: &Points) -> Result<GaussianDiag, AnpError> {
        self.check_points("set", set)?;
        let (mean, std, _) = latent_forward(self, &self.normalized(set));
        Ok(GaussianDiag { mean: mean.to_vec(), std: std.to_vec() })
    }

    /// Predictive distribution of y at each query row.
    pub fn decode(&self, query_x: ArrayView2<f64>, r_star: ArrayView2<f64>, z: &[f64]) -> Result<GaussianDiag, AnpError> {
        self.check_query(&query_x)?;
        let arch = self.architecture();
        if r_star.dim() != (query_x.nrows(), arch.width) || z.len() != arch.latent_dim() {
            return Err(AnpError::Shape(format!(
                "decoder got r* {:?} and z of length {} for {} queries",
                r_star.dim(),
                z.len(),
                query_x.nrows()
            )));
        }
        check_finite("r*", r_star.iter())?;
        check_finite("z", z.iter())?;
        let out = decoder_forward(self, &query_x.to_owned(), &r_star.to_owned(), ArrayView1::from(z));
        Ok(GaussianDiag { mean: out.mean.to_vec(), std: out.std.to_vec() })
    }

    /// Posterior-mean prediction: z is fixed to the mean of q(z | context).
    pub fn predict(&self, context: &Points, query_x: ArrayView2<f64>) -> Result<GaussianDiag, AnpError> {
        self.check_points("context", context)?;
        self.check_query(&query_x)?;
        let ctx = self.normalized(context);
        let xq = query_x.to_owned();
        let (r, _) = det_forward(self, &ctx, &xq);
        let (z, _, _) = latent_forward(self, &ctx);
        let out = decoder_forward(self, &xq, &r, z.view());
        Ok(GaussianDiag { mean: out.mean.to_vec(), std: out.std.to_vec() })
    }

    /// ELBO with `n_z` reparameterized samples drawn from `rng`.
    pub fn elbo<R: Rng + ?Sized>(&self, split: &ContextTargetSplit, n_z: usize, rng: &mut R) -> Result<Elbo, AnpError> {
        let h = self.architecture().latent_dim();
        let noise = Array2::from_shape_simple_fn((n_z, h), || rng.sample(StandardNormal));
        self.elbo_with_noise(split, noise.view())
    }

    /// ELBO with explicit standard-normal noise, one row per z sample.
    pub fn elbo_with_noise(&self, split: &ContextTargetSplit, noise: ArrayView2<f64>) -> Result<Elbo, AnpError> {
        let arch = *self.architecture();
        let (d, h) = (arch.x_dim, arch.latent_dim());
        if split.target.is_empty() {
            return Err(AnpError::EmptyTarget);
        }
        if noise.nrows() == 0 || noise.ncols() != h {
            return Err(AnpError::Shape(format!("noise must be n_z × {h} with n_z ≥ 1, got {:?}", noise.dim())));
        }
        self.check_points("context", &split.context)?;
        self.check_points("target", &split.target)?;
        check_finite("noise", noise.iter())?;

        let ctx = self.normalized(&split.context);
        let tar = &split.target;
        let ids = arch.ids();
        let (r, det_tr) = det_forward(self, &ctx, &tar.x);
        let (mu_tar, sd_tar, tar_tr) = latent_forward(self, tar);
        let (mu_ctx, sd_ctx, ctx_tr) = latent_forward(self, &ctx);

        let mut grads = vec![0.0; self.len()];
        let weight = 1.0 / noise.nrows() as f64;
        let mut log_likelihood = 0.0;
        let mut dr = Array2::<f64>::zeros(r.raw_dim());
        let mut dmu_tar = Array1::<f64>::zeros(h);
        let mut dsd_tar = Array1::<f64>::zeros(h);
        for xi in noise.rows() {
            let z = &mu_tar + &(&sd_tar * &xi);
            let out = decoder_forward(self, &tar.x, &r, z.view());
            let mut dout = Array2::<f64>::zeros((tar.len(), 2));
            let mut ll = 0.0;
            for t in 0..tar.len() {
                let (y, m, sd) = (tar.y[t], out.mean[t], out.std[t]);
                let resid = y - m;
                ll += log_normal(y, m, sd);
                dout[[t, 0]] = -weight * resid / (sd * sd);
                dout[[t, 1]] = -weight * (-1.0 / sd + resid * resid / (sd * sd * sd)) * out.dstd[t];
            }
            log_likelihood += weight * ll;
            let din = mlp_backward(self, &mut grads, ids.dec, &out.inputs, dout);
            dr += &din.slice(s![.., d..d + h]);
            let dz = din.slice(s![.., d + h..]).sum_axis(Axis(0));
            dsd_tar += &(&dz * &xi);
            dmu_tar += &dz;
        }

        let q = GaussianDiag { mean: mu_tar.to_vec(), std: sd_tar.to_vec() };
        let pr = GaussianDiag { mean: mu_ctx.to_vec(), std: sd_ctx.to_vec() };
        let kl = kl_diag_gaussian(&q, &pr)?;
        let mut dmu_ctx = Array1::<f64>::zeros(h);
        let mut dsd_ctx = Array1::<f64>::zeros(h);
        for i in 0..h {
            let (qm, qs, pm, ps) = (mu_tar[i], sd_tar[i], mu_ctx[i], sd_ctx[i]);
            let diff = qm - pm;
            dmu_tar[i] += diff / (ps * ps);
            dmu_ctx[i] -= diff / (ps * ps);
            dsd_tar[i] += -1.0 / qs + qs / (ps * ps);
            dsd_ctx[i] += 1.0 / ps - (qs * qs + diff * diff) / (ps * ps * ps);
        }
        latent_backward(self, &mut grads, &tar_tr, &dmu_tar, &dsd_tar);
        latent_backward(self, &mut grads, &ctx_tr, &dmu_ctx, &dsd_ctx);
        if let Some(tr) = &det_tr {
            det_backward(self, &mut grads, &ctx, &tar.x, tr, &dr);
        }
        Ok(Elbo { value: log_likelihood - kl, log_likelihood, kl, grad: grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anp::{Architecture, ModelSpec};
    use crate::seed;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_points(n: usize, d: usize, rng: &mut seed::Rng) -> Points {
        Points::new(
            Array2::from_shape_simple_fn((n, d), || rng.random_range(0.0..1.0)),
            Array1::from_shape_simple_fn(n, || rng.random_range(-1.0..1.0)),
        )
    }

    fn small(d: usize, h: usize, seed: u64) -> AnpParams {
        let arch = Architecture::new(d, &ModelSpec { width: h, encoder_layers: 2, decoder_layers: 2 }).unwrap();
        AnpParams::init(arch, seed)
    }

    /// Small random biases, so no parameter sits exactly at a ReLU kink.
    fn perturbed(d: usize, h: usize, seed: u64) -> AnpParams {
        let mut p = small(d, h, seed);
        let mut rng = seed::rng(seed ^ 0xb1a5);
        let biases: Vec<_> = p.tensors().iter().filter(|t| t.name.ends_with(".b")).cloned().collect();
        for t in biases {
            for v in &mut p.values_mut()[t.offset..t.offset + t.len()] {
                *v = rng.random_range(-0.1..0.1);
            }
        }
        p
    }

    #[test]
    fn std_parameterizations_stay_in_bounds() {
        let mut raw = -1e6;
        while raw <= 1e6 {
            let (ls, _) = latent_std(raw);
            assert!(ls > 0.1 && ls < 1.0, "latent std {ls} at {raw}");
            let (ds, _) = decoder_std(raw);
            assert!(ds > 0.1 && ds.is_finite(), "decoder std {ds} at {raw}");
            raw = if raw.abs() < 1.0 { raw + 0.125 } else if raw < 0.0 { raw / 1.7 } else { raw * 1.7 };
        }
        for raw in [f64::MAX, f64::MIN, 0.0, 40.0, -40.0, 1e6, -1e6] {
            let (ls, _) = latent_std(raw);
            assert!(ls > 0.1 && ls < 1.0);
            assert!(decoder_std(raw).0 > 0.1);
        }
    }

    /// Attention computed with explicit loops over keys.
    fn attention_oracle(q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>) -> Array2<f64> {
        let h = q.ncols();
        let mut out = Array2::zeros((q.nrows(), v.ncols()));
        for t in 0..q.nrows() {
            let scores: Vec<f64> = (0..k.nrows())
                .map(|c| (0..h).map(|j| q[[t, j]] * k[[c, j]]).sum::<f64>() / (h as f64).sqrt())
                .collect();
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            for c in 0..k.nrows() {
                for j in 0..v.ncols() {
                    out[[t, j]] += exps[c] / total * v[[c, j]];
                }
            }
        }
        out
    }

    #[test]
    fn attention_matches_brute_force() {
        let (d, h) = (2, 3);
        let arch = Architecture::new(d, &ModelSpec { width: h, encoder_layers: 2, decoder_layers: 2 }).unwrap();
        let mut p = AnpParams::zeros(arch);
        // Identity-like encoder so r_c is easy to write down.
        p.tensor_mut("det.0.w").unwrap().assign(&array![[1.0, 0.0, 0.5], [0.0, 1.0, -0.5], [0.3, 0.2, 1.0]]);
        p.tensor_mut("det.1.w").unwrap().assign(&Array2::eye(3));
        p.tensor_mut("attn.query.w").unwrap().assign(&array![[0.7, -0.2, 0.4], [0.1, 0.9, -0.3]]);
        p.tensor_mut("attn.query.b").unwrap().assign(&array![[0.05, 0.0, -0.1]]);
        p.tensor_mut("attn.key.w").unwrap().assign(&array![[1.2, 0.3, 0.0], [-0.4, 0.8, 0.6]]);
        p.tensor_mut("attn.value.w").unwrap().assign(&array![[0.5, 0.0, 0.2], [0.0, 1.0, 0.0], [0.3, -0.7, 1.1]]);
        p.tensor_mut("attn.value.b").unwrap().assign(&array![[0.0, 0.1, 0.2]]);
        let ctx = Points::new(array![[0.2, 0.9], [0.6, 0.1], [0.4, 0.4]], array![0.5, -0.3, 1.0]);
        let xq = array![[0.3, 0.3], [0.9, 0.5]];

        let rc = {
            let mut m = Array2::zeros((3, 3));
            for c in 0..3 {
                let inp = [ctx.x[[c, 0]], ctx.x[[c, 1]], ctx.y[c]];
                let w = p.tensor("det.0.w").unwrap();
                for j in 0..3 {
                    m[[c, j]] = (0..3).map(|i| inp[i] * w[[i, j]]).sum::<f64>().max(0.0);
                }
            }
            m
        };
        let q = xq.dot(&p.tensor("attn.query.w").unwrap()) + &p.tensor("attn.query.b").unwrap().row(0);
        let k = ctx.x.dot(&p.tensor("attn.key.w").unwrap());
        let v = rc.dot(&p.tensor("attn.value.w").unwrap()) + &p.tensor("attn.value.b").unwrap().row(0);
        let expected = attention_oracle(&q, &k, &v);
        let got = p.encode_deterministic(&ctx, xq.view()).unwrap();
        for (a, b) in got.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-14, "{got} vs {expected}");
        }
    }

    #[test]
    fn singleton_and_empty_context() {
        let p = small(3, 4, 1);
        let mut rng = seed::rng(2);
        let ctx = random_points(1, 3, &mut rng);
        let xq = Array2::from_shape_simple_fn((5, 3), || rng.random_range(0.0..1.0));
        let r = p.encode_deterministic(&ctx, xq.view()).unwrap();
        for row in r.rows() {
            assert_eq!(row, r.row(0));
        }
        let zero = p.encode_deterministic(&Points::empty(3), xq.view()).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        let pred = p.predict(&Points::empty(3), xq.view()).unwrap();
        assert!(pred.mean.iter().chain(&pred.std).all(|v| v.is_finite()));
        assert!(p.encode_deterministic(&ctx, Array2::zeros((0, 3)).view()).is_err());
        assert!(p.encode_deterministic(&ctx, Array2::zeros((2, 2)).view()).is_err());
    }

    #[test]
    fn latent_duplicates_and_permutations() {
        let p = small(2, 5, 3);
        let one = Points::new(array![[0.1, 0.7]], array![0.4]);
        let two = Points::new(array![[0.1, 0.7], [0.1, 0.7]], array![0.4, 0.4]);
        assert_eq!(p.encode_latent(&one).unwrap(), p.encode_latent(&two).unwrap());
        let mut rng = seed::rng(4);
        let set = random_points(7, 2, &mut rng);
        let rows = [3, 0, 6, 1, 5, 2, 4];
        let perm = Points::new(set.x.select(Axis(0), &rows), set.y.select(Axis(0), &rows));
        let (a, b) = (p.encode_latent(&set).unwrap(), p.encode_latent(&perm).unwrap());
        for (u, v) in a.mean.iter().chain(&a.std).zip(b.mean.iter().chain(&b.std)) {
            assert!((u - v).abs() < 1e-14);
        }
        let empty = p.encode_latent(&Points::empty(2)).unwrap();
        assert!(empty.std.iter().all(|&s| s > 0.1 && s < 1.0));
    }

    #[test]
    fn affine_decoder_and_closed_form_log_likelihood() {
        let arch = Architecture::new(2, &ModelSpec { width: 2, encoder_layers: 2, decoder_layers: 2 }).unwrap();
        let mut p = AnpParams::zeros(arch);
        p.tensor_mut("dec.1.b").unwrap().assign(&array![[0.7, -0.3]]);
        let xq = array![[0.1, 0.2], [5.0, -3.0]];
        let out = p.decode(xq.view(), Array2::zeros((2, 2)).view(), &[1.0, -2.0]).unwrap();
        assert_eq!(out.mean, vec![0.7, 0.7]);
        let sd = 0.1 + 0.9 * (1.0 + (-0.3f64).exp()).ln();
        assert!((out.std[0] - sd).abs() < 1e-15);

        // One hidden unit reading x0 with unit weight.
        p.tensor_mut("dec.0.w").unwrap()[[0, 0]] = 1.0;
        p.tensor_mut("dec.1.w").unwrap()[[0, 0]] = 2.0;
        let x = array![[0.25, 0.0]];
        let y = 1.5;
        let out = p.decode(x.view(), Array2::zeros((1, 2)).view(), &[0.0, 0.0]).unwrap();
        let mean = 0.7 + 2.0 * 0.25;
        let hand = -0.5 * (2.0 * std::f64::consts::PI).ln() - sd.ln() - 0.5 * ((y - mean) / sd).powi(2);
        assert!((out.log_prob(&[y]) - hand).abs() < 1e-10);
        assert!(p.decode(x.view(), Array2::zeros((1, 2)).view(), &[f64::NAN, 0.0]).is_err());
    }

    fn split(seed_: u64, d: usize, n_c: usize, n_t: usize) -> ContextTargetSplit {
        let mut rng = seed::rng(seed_);
        ContextTargetSplit { task: 0, context: random_points(n_c, d, &mut rng), target: random_points(n_t, d, &mut rng) }
    }

    #[test]
    fn kl_vanishes_when_context_equals_target() {
        let p = small(2, 4, 9);
        let s = split(1, 2, 0, 4);
        let same = ContextTargetSplit { task: 0, context: s.target.clone(), target: s.target.clone() };
        let e = p.elbo_with_noise(&same, Array2::zeros((1, 4)).view()).unwrap();
        assert_eq!(e.kl, 0.0);
        assert_eq!(e.value, e.log_likelihood);
    }

    #[test]
    fn zero_noise_is_reproducible() {
        let p = small(3, 6, 2);
        let s = split(5, 3, 4, 3);
        let a = p.elbo_with_noise(&s, Array2::zeros((2, 6)).view()).unwrap();
        let b = p.elbo_with_noise(&s, Array2::zeros((2, 6)).view()).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.grad, b.grad);
        assert!(matches!(p.elbo_with_noise(&split(5, 3, 4, 0), Array2::zeros((1, 6)).view()), Err(AnpError::EmptyTarget)));
    }

    /// Central differences against the analytic gradient for every parameter.
    fn gradient_check(p: &AnpParams, s: &ContextTargetSplit, noise: &Array2<f64>) -> (usize, f64) {
        let analytic = p.elbo_with_noise(s, noise.view()).unwrap().grad;
        let step = 1e-5;
        let mut worst = 0.0f64;
        let mut probe = p.clone();
        for i in 0..p.len() {
            let orig = p.values()[i];
            probe.values_mut()[i] = orig + step;
            let up = -probe.elbo_with_noise(s, noise.view()).unwrap().value;
            probe.values_mut()[i] = orig - step;
            let down = -probe.elbo_with_noise(s, noise.view()).unwrap().value;
            probe.values_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let err = (numeric - analytic[i]).abs() / numeric.abs().max(analytic[i].abs()).max(1e-6);
            worst = worst.max(err);
        }
        (p.len(), worst)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let p = perturbed(4, 8, 11);
        let s = split(12, 4, 3, 2);
        let mut rng = seed::rng(13);
        let noise = Array2::from_shape_simple_fn((1, 8), || rng.sample(StandardNormal));
        let (n, worst) = gradient_check(&p, &s, &noise);
        assert!(n > 500);
        assert!(worst < 1e-3, "worst relative error {worst}");
    }

    #[test]
    fn gradients_with_empty_context_and_several_samples() {
        let p = perturbed(2, 4, 21);
        let s = split(22, 2, 0, 3);
        let mut rng = seed::rng(23);
        let noise = Array2::from_shape_simple_fn((3, 4), || rng.sample(StandardNormal));
        let (_, worst) = gradient_check(&p, &s, &noise);
        assert!(worst < 1e-3, "worst relative error {worst}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn predictions_are_permutation_invariant_and_floored(seed_ in 0u64..1000, n in 1usize..8) {
            let p = small(3, 4, seed_);
            let mut rng = seed::rng(seed_ + 1);
            let ctx = random_points(n, 3, &mut rng);
            let xq = Array2::from_shape_simple_fn((4, 3), || rng.random_range(-2.0..2.0));
            let rows: Vec<usize> = (0..n).rev().collect();
            let rev = Points::new(ctx.x.select(Axis(0), &rows), ctx.y.select(Axis(0), &rows));
            let a = p.predict(&ctx, xq.view()).unwrap();
            let b = p.predict(&rev, xq.view()).unwrap();
            for (u, v) in a.mean.iter().chain(&a.std).zip(b.mean.iter().chain(&b.std)) {
                prop_assert!((u - v).abs() < 1e-12);
            }
            prop_assert!(a.std.iter().all(|&s| s > 0.1));
            let lat = p.encode_latent(&ctx).unwrap();
            prop_assert!(lat.std.iter().all(|&s| s > 0.1 && s < 1.0));
        }
    }
}
