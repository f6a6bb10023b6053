//! Parameterised layers built on the tape, plus pure forward helpers.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Graph, ParamId, ParamStore, Tensor, Var};

/// Uniform `(-1/√fan_in, 1/√fan_in)` initialisation.
pub fn init_uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("sized")
}

pub(crate) fn bind(g: &mut Graph, store: &ParamStore, id: ParamId, train: bool) -> Var {
    if train {
        g.param(store, id)
    } else {
        g.frozen(store, id)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        inp: usize,
        out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w = store.add(format!("{name}.w"), init_uniform(rng, &[inp, out], inp))?;
        let b = store.add(format!("{name}.b"), init_uniform(rng, &[out], inp))?;
        Ok(Self { w, b })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, train: bool) -> Result<Var> {
        let w = bind(g, store, self.w, train);
        let b = bind(g, store, self.b, train);
        g.linear(x, w, Some(b))
    }

    /// Bind weight and bias once, for reuse across time steps.
    pub fn bind(&self, g: &mut Graph, store: &ParamStore, train: bool) -> (Var, Var) {
        (bind(g, store, self.w, train), bind(g, store, self.b, train))
    }

    pub fn out_dim(&self, store: &ParamStore) -> usize {
        store.get(self.w).shape()[1]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Lstm {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

/// LSTM weights bound into one graph, reused across time steps.
#[derive(Debug, Clone, Copy)]
pub struct BoundLstm {
    w_ih: Var,
    w_hh: Var,
    b: Var,
}

impl BoundLstm {
    pub fn step(&self, g: &mut Graph, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        g.lstm_step(x, h, c, self.w_ih, self.w_hh, self.b)
    }
}

impl Lstm {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        inp: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w_ih = store.add(
            format!("{name}.w_ih"),
            init_uniform(rng, &[inp, 4 * hidden], hidden),
        )?;
        let w_hh = store.add(
            format!("{name}.w_hh"),
            init_uniform(rng, &[hidden, 4 * hidden], hidden),
        )?;
        let b = store.add(
            format!("{name}.b"),
            init_uniform(rng, &[4 * hidden], hidden),
        )?;
        Ok(Self {
            w_ih,
            w_hh,
            b,
            hidden,
        })
    }

    pub fn bind(&self, g: &mut Graph, store: &ParamStore, train: bool) -> BoundLstm {
        BoundLstm {
            w_ih: bind(g, store, self.w_ih, train),
            w_hh: bind(g, store, self.w_hh, train),
            b: bind(g, store, self.b, train),
        }
    }
}

/// Two `(conv 3×3 same → ReLU → max-pool 2×2)` stages.
#[derive(Debug, Clone, Copy)]
pub struct ConvStack {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl ConvStack {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        filters: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w1 = store.add(
            format!("{name}.conv1.w"),
            init_uniform(rng, &[9 * cin, filters], 9 * cin),
        )?;
        let b1 = store.add(
            format!("{name}.conv1.b"),
            init_uniform(rng, &[filters], 9 * cin),
        )?;
        let w2 = store.add(
            format!("{name}.conv2.w"),
            init_uniform(rng, &[9 * filters, filters], 9 * filters),
        )?;
        let b2 = store.add(
            format!("{name}.conv2.b"),
            init_uniform(rng, &[filters], 9 * filters),
        )?;
        Ok(Self { w1, b1, w2, b2 })
    }

    /// `x [n, H, W, C]` → `[n, H/4, W/4, filters]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, train: bool) -> Result<Var> {
        let (w1, b1) = (
            bind(g, store, self.w1, train),
            bind(g, store, self.b1, train),
        );
        let (w2, b2) = (
            bind(g, store, self.w2, train),
            bind(g, store, self.b2, train),
        );
        let y = g.conv3x3(x, w1, b1)?;
        let y = g.relu(y);
        let y = g.max_pool2(y)?;
        let y = g.conv3x3(y, w2, b2)?;
        let y = g.relu(y);
        g.max_pool2(y)
    }
}

/// Numerically stable softmax of a single vector.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::invalid("softmax of an empty vector"));
    }
    if logits.iter().any(|x| x.is_nan()) {
        return Err(Error::NonFinite("softmax input".into()));
    }
    let mut g = Graph::new();
    let x = g.constant(Tensor::row(logits));
    let y = g.softmax_rows(x)?;
    Ok(g.value(y).data().to_vec())
}

/// `x · W + b` for `x [n, in]` (or a single vector), without a learnable context.
pub fn linear_forward(w: &Tensor, b: &Tensor, x: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let xv = if x.shape().len() == 1 {
        g.constant(Tensor::row(x.data()))
    } else {
        g.constant(x.clone())
    };
    let (wv, bv) = (g.constant(w.clone()), g.constant(b.clone()));
    let y = g.linear(xv, wv, Some(bv))?;
    Ok(g.value(y).clone())
}

/// One LSTM step on plain tensors: returns `(h', c')`.
pub fn lstm_cell_step(
    w_ih: &Tensor,
    w_hh: &Tensor,
    b: &Tensor,
    x: &Tensor,
    h: &Tensor,
    c: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let mut g = Graph::new();
    let as_row = |t: &Tensor| {
        if t.shape().len() == 1 {
            Tensor::row(t.data())
        } else {
            t.clone()
        }
    };
    let (xv, hv, cv) = (
        g.constant(as_row(x)),
        g.constant(as_row(h)),
        g.constant(as_row(c)),
    );
    let (wi, wh, bv) = (
        g.constant(w_ih.clone()),
        g.constant(w_hh.clone()),
        g.constant(b.clone()),
    );
    let (h2, c2) = g.lstm_step(xv, hv, cv, wi, wh, bv)?;
    Ok((g.value(h2).clone(), g.value(c2).clone()))
}

/// Side length of the occupancy patch fed to the scene CNN.
pub const PATCH_SIZE: usize = 32;

/// Two conv/ReLU/pool stages on one `32×32×1` patch → `[8, 8, filters]`.
pub fn conv_maxpool_forward(
    store: &ParamStore,
    stack: &ConvStack,
    patch: &Tensor,
) -> Result<Tensor> {
    let s = patch.shape();
    let ok = matches!(s, [h, w] | [h, w, 1] if *h == PATCH_SIZE && *w == PATCH_SIZE);
    if !ok {
        return Err(Error::shape(
            "conv_maxpool_forward patch",
            s,
            &[PATCH_SIZE, PATCH_SIZE, 1],
        ));
    }
    let mut g = Graph::new();
    let x = g.constant(patch.clone().reshaped(&[1, PATCH_SIZE, PATCH_SIZE, 1])?);
    let y = stack.forward(&mut g, store, x, false)?;
    let t = g.value(y).clone();
    let shape = t.shape()[1..].to_vec();
    t.reshaped(&shape)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_examples() {
        let x = Tensor::new(&[2], vec![5.0, 5.0]).unwrap();
        let y = linear_forward(
            &Tensor::zeros(&[2, 2]),
            &Tensor::new(&[2], vec![1.0, 2.0]).unwrap(),
            &x,
        )
        .unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);

        let eye = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let x = Tensor::new(&[2], vec![3.0, 4.0]).unwrap();
        assert_eq!(
            linear_forward(&eye, &Tensor::zeros(&[2]), &x)
                .unwrap()
                .data(),
            &[3.0, 4.0]
        );

        // Row vector times W: [1,1]·[[1,2],[3,4]] = [1+3, 2+4].
        let w = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let x = Tensor::new(&[2], vec![1.0, 1.0]).unwrap();
        assert_eq!(
            linear_forward(&w, &Tensor::zeros(&[2]), &x).unwrap().data(),
            &[4.0, 6.0]
        );
    }

    #[test]
    fn linear_shape_error_names_shapes() {
        let err = linear_forward(
            &Tensor::zeros(&[3, 2]),
            &Tensor::zeros(&[2]),
            &Tensor::zeros(&[2]),
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("[1, 2]") && err.contains("[3, 2]"), "{err}");
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let s = softmax(&[1000.0, 0.0]).unwrap();
        assert!((s[0] - 1.0).abs() < 1e-12 && s[1].abs() < 1e-12);
        let s = softmax(&[2f64.ln(), 0.0]).unwrap();
        assert!((s[0] - 2.0 / 3.0).abs() < 1e-12 && (s[1] - 1.0 / 3.0).abs() < 1e-12);
        assert!(softmax(&[f64::NAN, 0.0]).is_err());
        assert!(softmax(&[]).is_err());
    }

    fn hand_lstm(
        w_ih: &Tensor,
        w_hh: &Tensor,
        b: &Tensor,
        x: &[f64],
        h: &[f64],
        c: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let hid = h.len();
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let pre = |gate: usize, k: usize| {
            let col = gate * hid + k;
            let mut s = b.data()[col];
            for (i, xi) in x.iter().enumerate() {
                s += xi * w_ih.data()[i * 4 * hid + col];
            }
            for (j, hj) in h.iter().enumerate() {
                s += hj * w_hh.data()[j * 4 * hid + col];
            }
            s
        };
        let mut h2 = vec![0.0; hid];
        let mut c2 = vec![0.0; hid];
        for k in 0..hid {
            let i = sig(pre(0, k));
            let f = sig(pre(1, k));
            let gg = pre(2, k).tanh();
            let o = sig(pre(3, k));
            c2[k] = f * c[k] + i * gg;
            h2[k] = o * c2[k].tanh();
        }
        (h2, c2)
    }

    #[test]
    fn lstm_zero_params_zero_state() {
        let (i, h) = (3, 4);
        let x = Tensor::new(&[3], vec![0.3, -2.0, 5.0]).unwrap();
        let (h2, c2) = lstm_cell_step(
            &Tensor::zeros(&[i, 4 * h]),
            &Tensor::zeros(&[h, 4 * h]),
            &Tensor::zeros(&[4 * h]),
            &x,
            &Tensor::zeros(&[h]),
            &Tensor::zeros(&[h]),
        )
        .unwrap();
        assert!(h2.data().iter().all(|v| *v == 0.0));
        assert!(c2.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn lstm_saturated_forget_gate_preserves_cell() {
        let (i, h) = (2, 3);
        let mut b = vec![0.0; 4 * h];
        b[h..2 * h].iter_mut().for_each(|v| *v = 20.0);
        let c = Tensor::new(&[h], vec![0.5, -1.5, 2.0]).unwrap();
        let (_, c2) = lstm_cell_step(
            &Tensor::zeros(&[i, 4 * h]),
            &Tensor::zeros(&[h, 4 * h]),
            &Tensor::new(&[4 * h], b).unwrap(),
            &Tensor::new(&[i], vec![1.0, 1.0]).unwrap(),
            &Tensor::zeros(&[h]),
            &c,
        )
        .unwrap();
        assert!(c2.max_abs_diff(&Tensor::row(c.data())) < 1e-7);
    }

    #[test]
    fn lstm_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (i, h) = (3, 5);
        let w_ih = init_uniform(&mut rng, &[i, 4 * h], 2);
        let w_hh = init_uniform(&mut rng, &[h, 4 * h], 2);
        let b = init_uniform(&mut rng, &[4 * h], 2);
        let x = init_uniform(&mut rng, &[i], 1);
        let h0 = init_uniform(&mut rng, &[h], 1);
        let c0 = init_uniform(&mut rng, &[h], 1);
        let (h2, c2) = lstm_cell_step(&w_ih, &w_hh, &b, &x, &h0, &c0).unwrap();
        let (eh, ec) = hand_lstm(&w_ih, &w_hh, &b, x.data(), h0.data(), c0.data());
        for k in 0..h {
            assert!((h2.data()[k] - eh[k]).abs() < 1e-12);
            assert!((c2.data()[k] - ec[k]).abs() < 1e-12);
        }
    }

    fn stack(store: &mut ParamStore) -> ConvStack {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        ConvStack::new(store, "cnn", 1, 16, &mut rng).unwrap()
    }

    #[test]
    fn conv_zero_filters_give_zero_map() {
        let mut store = ParamStore::new();
        let s = stack(&mut store);
        store.zero_all();
        let patch = Tensor::full(&[32, 32, 1], 1.0);
        let out = conv_maxpool_forward(&store, &s, &patch).unwrap();
        assert_eq!(out.shape(), &[8, 8, 16]);
        assert!(out.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn conv_rejects_wrong_patch() {
        let mut store = ParamStore::new();
        let s = stack(&mut store);
        assert!(conv_maxpool_forward(&store, &s, &Tensor::zeros(&[16, 16, 1])).is_err());
        let out = conv_maxpool_forward(&store, &s, &Tensor::zeros(&[32, 32])).unwrap();
        assert_eq!(out.shape(), &[8, 8, 16]);
    }

    #[test]
    fn one_hot_filter_on_constant_patch() {
        // Hand oracle on a 4×4 constant-one input: a centre-tap filter copies
        // the input, so every pre-pool activation is exactly 1.
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[1, 4, 4, 1], 1.0));
        let mut w = vec![0.0; 9];
        w[4] = 1.0;
        let w = g.constant(Tensor::new(&[9, 1], w).unwrap());
        let b = g.constant(Tensor::zeros(&[1]));
        let y = g.conv3x3(x, w, b).unwrap();
        assert!(g.value(y).data().iter().all(|v| *v == 1.0));

        // An all-ones 3×3 filter counts in-bounds neighbours: 4 at corners,
        // 6 on edges, 9 in the interior.
        let w9 = g.constant(Tensor::full(&[9, 1], 1.0));
        let y = g.conv3x3(x, w9, b).unwrap();
        let want = [
            4., 6., 6., 4., 6., 9., 9., 6., 6., 9., 9., 6., 4., 6., 6., 4.,
        ];
        assert_eq!(g.value(y).data(), &want);
    }
}
