use rand::Rng;

use crate::error::Result;
use crate::model::input::{EncoderBatch, ATT_CELLS};
use crate::nn::{ConvStack, Graph, Linear, Lstm, ParamStore, Tensor, Var};
use crate::sim::PRED_LEN;

pub const ENC_HIDDEN: usize = 32;
pub const FEAT: usize = 32;
pub const COND: usize = 3 * FEAT;
pub const DEC_HIDDEN: usize = 48;
pub const PM_HIDDEN: usize = 48;
pub const CONV_FILTERS: usize = 16;
pub const ATT_HIDDEN: usize = 32;
pub const SOCIAL_HIDDEN: usize = 16;
pub const TRAJ_HIDDEN: usize = 64;
pub const TRAJ_FEAT: usize = 32;
pub const HEAD_HIDDEN: usize = 64;
pub const LEAKY_SLOPE: f64 = 0.2;
/// Flattened relative future: 12 steps × (x, y).
pub const TRAJ_DIM: usize = 2 * PRED_LEN;

/// Dynamics, physical-attention and social-attention encoder producing the
/// condition `c = [d, v, s]`.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub lstm: Lstm,
    pub proj: Linear,
    pub cnn: ConvStack,
    pub att_feat: Linear,
    pub att_dyn: Linear,
    pub att_score: Linear,
    pub att_out: Linear,
    pub soc_hidden: Linear,
    pub soc_score: Linear,
    pub soc_proj: Linear,
}

/// Encoder outputs kept for inspection.
#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    pub c: Var,
    pub d: Var,
    pub v: Var,
    pub s: Var,
    /// Attention weights over the 64 cells, `[n·64, 1]`.
    pub attention: Var,
}

/// Normalised (col, row) coordinates of the attention cells, tiled `n` times.
fn cell_coords(n: usize) -> Tensor {
    let side = (ATT_CELLS as f64).sqrt() as usize;
    let half = (side as f64 - 1.0) / 2.0;
    let mut data = Vec::with_capacity(n * ATT_CELLS * 2);
    for _ in 0..n {
        for k in 0..ATT_CELLS {
            data.push(((k % side) as f64 - half) / half);
            data.push(((k / side) as f64 - half) / half);
        }
    }
    Tensor::new(&[n * ATT_CELLS, 2], data).expect("sized")
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, rng: &mut R) -> Result<Self> {
        let p = |s: &str| format!("{name}.{s}");
        Ok(Self {
            lstm: Lstm::new(store, &p("lstm"), 2, ENC_HIDDEN, rng)?,
            proj: Linear::new(store, &p("proj"), ENC_HIDDEN, FEAT, rng)?,
            cnn: ConvStack::new(store, &p("cnn"), 1, CONV_FILTERS, rng)?,
            att_feat: Linear::new(store, &p("att.feat"), CONV_FILTERS + 2, ATT_HIDDEN, rng)?,
            att_dyn: Linear::new(store, &p("att.dyn"), FEAT, ATT_HIDDEN, rng)?,
            att_score: Linear::new(store, &p("att.score"), ATT_HIDDEN, 1, rng)?,
            att_out: Linear::new(store, &p("att.out"), CONV_FILTERS, FEAT, rng)?,
            soc_hidden: Linear::new(store, &p("soc.hidden"), 4, SOCIAL_HIDDEN, rng)?,
            soc_score: Linear::new(store, &p("soc.score"), SOCIAL_HIDDEN, 1, rng)?,
            soc_proj: Linear::new(store, &p("soc.proj"), FEAT, FEAT, rng)?,
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        b: &EncoderBatch,
        train: bool,
    ) -> Result<Encoded> {
        let n = b.n;
        let m = b.neighbor_rows();
        let rows = n + m;

        let lstm = self.lstm.bind(g, store, train);
        let mut h = g.constant(Tensor::zeros(&[rows, ENC_HIDDEN]));
        let mut cell = g.constant(Tensor::zeros(&[rows, ENC_HIDDEN]));
        for step in &b.steps {
            let x = g.constant(step.clone());
            (h, cell) = lstm.step(g, x, h, cell)?;
        }
        let d_all = self.proj.forward(g, store, h, train)?;
        let d = if m == 0 {
            d_all
        } else {
            g.gather_rows(d_all, &(0..n).collect::<Vec<_>>())?
        };

        // Physical attention over the pooled feature map.
        let patches = g.constant(b.patches.clone());
        let fmap = self.cnn.forward(g, store, patches, train)?;
        let u = b.patches.shape()[0];
        let fmap = g.reshape(fmap, &[u, ATT_CELLS * CONV_FILTERS])?;
        let fmap = g.gather_rows(fmap, &b.patch_of)?;
        let cells = g.reshape(fmap, &[n * ATT_CELLS, CONV_FILTERS])?;
        let coords = g.constant(cell_coords(n));
        let cell_in = g.concat_cols(&[cells, coords])?;
        let sf = self.att_feat.forward(g, store, cell_in, train)?;
        let sd = self.att_dyn.forward(g, store, d, train)?;
        let rep: Vec<usize> = (0..n * ATT_CELLS).map(|k| k / ATT_CELLS).collect();
        let sd = g.gather_rows(sd, &rep)?;
        let e = g.add(sf, sd)?;
        let e = g.tanh(e);
        let score = self.att_score.forward(g, store, e, train)?;
        let seg = vec![ATT_CELLS; n];
        let attention = g.segment_softmax(score, &seg)?;
        let pooled = g.segment_weighted_sum(attention, cells, &seg)?;
        let v = self.att_out.forward(g, store, pooled, train)?;

        // Social attention over neighbours.
        let s = if m == 0 {
            g.constant(Tensor::zeros(&[n, FEAT]))
        } else {
            let dn = g.gather_rows(d_all, &(n..rows).collect::<Vec<_>>())?;
            let ds = g.gather_rows(d, &b.owner)?;
            let dot = g.row_dot(ds, dn)?;
            let geom = g.constant(b.geometry.clone());
            let feat = g.concat_cols(&[geom, dot])?;
            let hid = self.soc_hidden.forward(g, store, feat, train)?;
            let hid = g.relu(hid);
            let score = self.soc_score.forward(g, store, hid, train)?;
            let a = g.segment_softmax(score, &b.seg)?;
            let pj = self.soc_proj.forward(g, store, dn, train)?;
            g.segment_weighted_sum(a, pj, &b.seg)?
        };
        let c = g.concat_cols(&[d, v, s])?;
        Ok(Encoded {
            c,
            d,
            v,
            s,
            attention,
        })
    }
}

/// One decoder `G_g`: `h⁰ = W[c, z]`, then an LSTM fed with its own
/// previous displacement.
#[derive(Debug, Clone)]
pub struct Generator {
    pub init: Linear,
    pub lstm: Lstm,
    pub out: Linear,
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        noise: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            init: Linear::new(
                store,
                &format!("{name}.init"),
                COND + noise,
                DEC_HIDDEN,
                rng,
            )?,
            lstm: Lstm::new(store, &format!("{name}.lstm"), 2, DEC_HIDDEN, rng)?,
            out: Linear::new(store, &format!("{name}.out"), DEC_HIDDEN, 2, rng)?,
        })
    }

    /// `c [r, 96]`, `z [r, noise]`, `last_disp [r, 2]` → relative positions `[r, 24]`.
    pub fn decode(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        c: Var,
        z: Var,
        last_disp: Var,
        train: bool,
    ) -> Result<Var> {
        let r = g.shape(c)[0];
        let cz = g.concat_cols(&[c, z])?;
        let mut h = self.init.forward(g, store, cz, train)?;
        let mut cell = g.constant(Tensor::zeros(&[r, DEC_HIDDEN]));
        let lstm = self.lstm.bind(g, store, train);
        let (w, b) = self.out.bind(g, store, train);
        let mut x = last_disp;
        let mut pos = g.constant(Tensor::zeros(&[r, 2]));
        let mut outs = Vec::with_capacity(PRED_LEN);
        for _ in 0..PRED_LEN {
            (h, cell) = lstm.step(g, x, h, cell)?;
            let dx = g.linear(h, w, Some(b))?;
            pos = g.add(pos, dx)?;
            outs.push(pos);
            x = dx;
        }
        g.concat_cols(&outs)
    }
}

/// `c → π`: 3-layer ReLU MLP with a softmax output.
#[derive(Debug, Clone)]
pub struct PmNet {
    pub l1: Linear,
    pub l2: Linear,
    pub l3: Linear,
}

impl PmNet {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        n_generators: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            l1: Linear::new(store, &format!("{name}.l1"), COND, PM_HIDDEN, rng)?,
            l2: Linear::new(store, &format!("{name}.l2"), PM_HIDDEN, PM_HIDDEN, rng)?,
            l3: Linear::new(store, &format!("{name}.l3"), PM_HIDDEN, n_generators, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, c: Var, train: bool) -> Result<Var> {
        let h = self.l1.forward(g, store, c, train)?;
        let h = g.relu(h);
        let h = self.l2.forward(g, store, h, train)?;
        let h = g.relu(h);
        let logits = self.l3.forward(g, store, h, train)?;
        g.softmax_rows(logits)
    }
}

/// Discriminator and classifier heads over a shared scene encoder and a
/// shared trajectory MLP.
#[derive(Debug, Clone)]
pub struct Critic {
    pub enc: Encoder,
    pub traj1: Linear,
    pub traj2: Linear,
    pub d1: Linear,
    pub d2: Linear,
    /// Absent when there is nothing to classify (a single class).
    pub classifier: Option<(Linear, Linear)>,
}

impl Critic {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        n_classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let p = |s: &str| format!("{name}.{s}");
        let enc = Encoder::new(store, &p("enc"), rng)?;
        let traj1 = Linear::new(store, &p("traj1"), TRAJ_DIM, TRAJ_HIDDEN, rng)?;
        let traj2 = Linear::new(store, &p("traj2"), TRAJ_HIDDEN, TRAJ_FEAT, rng)?;
        let d1 = Linear::new(store, &p("d.l1"), COND + TRAJ_FEAT, HEAD_HIDDEN, rng)?;
        let d2 = Linear::new(store, &p("d.l2"), HEAD_HIDDEN, 1, rng)?;
        let classifier = if n_classes > 1 {
            Some((
                Linear::new(store, &p("c.l1"), COND + TRAJ_FEAT, HEAD_HIDDEN, rng)?,
                Linear::new(store, &p("c.l2"), HEAD_HIDDEN, n_classes, rng)?,
            ))
        } else {
            None
        };
        Ok(Self {
            enc,
            traj1,
            traj2,
            d1,
            d2,
            classifier,
        })
    }

    /// Joint features `[r, 128]` of trajectories `traj [r, 24]` whose
    /// conditions are rows `owner` of `cond`.
    pub fn features(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        cond: Var,
        owner: &[usize],
        traj: Var,
        train: bool,
    ) -> Result<Var> {
        let t = self.traj1.forward(g, store, traj, train)?;
        let t = g.leaky_relu(t, LEAKY_SLOPE);
        let t = self.traj2.forward(g, store, t, train)?;
        let t = g.leaky_relu(t, LEAKY_SLOPE);
        let c = g.gather_rows(cond, owner)?;
        g.concat_cols(&[c, t])
    }

    /// Probability of being real, `[r, 1]`.
    pub fn discriminate(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        feat: Var,
        train: bool,
    ) -> Result<Var> {
        let h = self.d1.forward(g, store, feat, train)?;
        let h = g.leaky_relu(h, LEAKY_SLOPE);
        let logit = self.d2.forward(g, store, h, train)?;
        Ok(g.sigmoid(logit))
    }

    /// Class distribution `[r, n_classes]`, or `None` without a classifier.
    pub fn classify(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        feat: Var,
        train: bool,
    ) -> Result<Option<Var>> {
        let Some((l1, l2)) = &self.classifier else {
            return Ok(None);
        };
        let h = l1.forward(g, store, feat, train)?;
        let h = g.leaky_relu(h, LEAKY_SLOPE);
        let logits = l2.forward(g, store, h, train)?;
        Ok(Some(g.softmax_rows(logits)?))
    }
}
