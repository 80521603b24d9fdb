use rand::Rng;

use super::matrix::Matrix;
use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Matrix {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.gen_range(-bound..=bound))
        .collect();
    Matrix::from_vec(fan_in, fan_out, data)
}

/// Affine map `x W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub name: String,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, input: usize, output: usize) -> Self {
        Self {
            name: name.into(),
            input,
            output,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.w", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.b", self.name)
    }

    pub fn register(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        store.insert(self.weight_name(), glorot_uniform(rng, self.input, self.output))?;
        store.insert(self.bias_name(), Matrix::zeros(1, self.output))
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let got = tape.value(x).cols();
        if got != self.input {
            return Err(Error::Shape {
                op: "linear",
                detail: format!("{}: input width {got}, expected {}", self.name, self.input),
            });
        }
        let w = tape.param(store, &self.weight_name())?;
        let b = tape.param(store, &self.bias_name())?;
        let y = tape.matmul(x, w);
        Ok(tape.add_bias(y, b))
    }
}

/// Stack of affine layers with `tanh` between them; the last layer is affine.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedForward {
    pub layers: Vec<Linear>,
}

impl FeedForward {
    /// `widths = [in, h1, ..., out]`.
    pub fn new(name: &str, widths: &[usize]) -> Self {
        assert!(widths.len() >= 2, "feed-forward needs at least one layer");
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(format!("{name}.l{i}"), w[0], w[1]))
            .collect();
        Self { layers }
    }

    pub fn register(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        self.layers.iter().try_for_each(|l| l.register(store, rng))
    }
}

pub fn ff_forward(net: &FeedForward, store: &ParamStore, x: Var, tape: &mut Tape) -> Result<Var> {
    let mut h = x;
    let last = net.layers.len() - 1;
    for (i, layer) in net.layers.iter().enumerate() {
        h = layer.forward(tape, store, h)?;
        if i < last {
            h = tape.tanh(h);
        }
    }
    Ok(h)
}

/// Gated recurrent cell:
///
/// ```text
/// z  = sigmoid(x Wz + h Uz + bz)
/// r  = sigmoid(x Wr + h Ur + br)
/// n  = tanh(x Wn + (r * h) Un + bn)
/// h' = (1 - z) * n + z * h
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct GruCell {
    pub name: String,
    pub input: usize,
    pub hidden: usize,
}

const GATES: [&str; 3] = ["z", "r", "n"];

impl GruCell {
    pub fn new(name: impl Into<String>, input: usize, hidden: usize) -> Self {
        Self {
            name: name.into(),
            input,
            hidden,
        }
    }

    fn pname(&self, kind: &str, gate: &str) -> String {
        format!("{}.{kind}_{gate}", self.name)
    }

    pub fn register(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        for g in GATES {
            store.insert(self.pname("w", g), glorot_uniform(rng, self.input, self.hidden))?;
            store.insert(self.pname("u", g), glorot_uniform(rng, self.hidden, self.hidden))?;
            store.insert(self.pname("b", g), Matrix::zeros(1, self.hidden))?;
        }
        Ok(())
    }

    fn gate_pre(&self, tape: &mut Tape, store: &ParamStore, gate: &str, x: Var, h: Var) -> Result<Var> {
        let w = tape.param(store, &self.pname("w", gate))?;
        let u = tape.param(store, &self.pname("u", gate))?;
        let b = tape.param(store, &self.pname("b", gate))?;
        let xw = tape.matmul(x, w);
        let hu = tape.matmul(h, u);
        let s = tape.add(xw, hu);
        Ok(tape.add_bias(s, b))
    }

    /// One recurrent update.
    pub fn step(&self, tape: &mut Tape, store: &ParamStore, x: Var, h: Var) -> Result<Var> {
        let (_, xin) = tape.value(x).shape();
        if xin != self.input || tape.value(h).cols() != self.hidden {
            return Err(Error::Shape {
                op: "gru_step",
                detail: format!("{}: input {xin}/{}, hidden {}/{}", self.name, self.input, tape.value(h).cols(), self.hidden),
            });
        }
        let zp = self.gate_pre(tape, store, "z", x, h)?;
        let z = tape.sigmoid(zp);
        let rp = self.gate_pre(tape, store, "r", x, h)?;
        let r = tape.sigmoid(rp);
        let rh = tape.mul(r, h);
        let np = self.gate_pre(tape, store, "n", x, rh)?;
        let n = tape.tanh(np);
        // h' = n + z * (h - n)
        let diff = tape.sub(h, n);
        let zd = tape.mul(z, diff);
        Ok(tape.add(n, zd))
    }
}

pub struct GruOutput {
    pub last: Var,
    pub states: Vec<Var>,
}

/// Runs `cell` over `steps`; the initial state defaults to zeros.
pub fn gru_forward(
    cell: &GruCell,
    store: &ParamStore,
    steps: &[Var],
    h0: Option<Var>,
    tape: &mut Tape,
) -> Result<GruOutput> {
    let first = *steps.first().ok_or(Error::Empty("gru input sequence"))?;
    let width = tape.value(first).cols();
    if let Some(bad) = steps.iter().find(|&&s| tape.value(s).cols() != width) {
        return Err(Error::Shape {
            op: "gru_forward",
            detail: format!("step width {} differs from {width}", tape.value(*bad).cols()),
        });
    }
    let rows = tape.value(first).rows();
    let mut h = match h0 {
        Some(h) => h,
        None => tape.constant(Matrix::zeros(rows, cell.hidden)),
    };
    let mut states = Vec::with_capacity(steps.len());
    for &x in steps {
        h = cell.step(tape, store, x, h)?;
        states.push(h);
    }
    Ok(GruOutput { last: h, states })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tape::sigmoid;
    use crate::rng::{normal_matrix, rng_for};

    fn zero_store(cell: &GruCell) -> ParamStore {
        let mut s = ParamStore::new();
        cell.register(&mut s, &mut rng_for(0, &[])).unwrap();
        let names: Vec<String> = s.names().map(str::to_owned).collect();
        for n in names {
            s.value_mut(&n).unwrap().fill(0.0);
        }
        s
    }

    #[test]
    fn ff_zero_weights_give_zero_output() {
        let net = FeedForward::new("ff", &[3, 4, 2]);
        let mut s = ParamStore::new();
        net.register(&mut s, &mut rng_for(1, &[])).unwrap();
        let names: Vec<String> = s.names().map(str::to_owned).collect();
        for n in names {
            s.value_mut(&n).unwrap().fill(0.0);
        }
        let mut t = Tape::new();
        let x = t.constant(Matrix::from_vec(1, 3, vec![1.0, -2.0, 0.5]));
        let y = ff_forward(&net, &s, x, &mut t).unwrap();
        assert_eq!(t.value(y).as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn ff_identity_affine_returns_input() {
        let net = FeedForward::new("ff", &[3, 3]);
        let mut s = ParamStore::new();
        net.register(&mut s, &mut rng_for(1, &[])).unwrap();
        *s.value_mut("ff.l0.w").unwrap() = Matrix::identity(3);
        let mut t = Tape::new();
        let xv = Matrix::from_vec(2, 3, vec![1.0, -2.0, 0.5, 3.0, 0.0, 7.0]);
        let x = t.constant(xv.clone());
        let y = ff_forward(&net, &s, x, &mut t).unwrap();
        assert_eq!(t.value(y), &xv);
    }

    #[test]
    fn ff_matches_hand_coded_forward() {
        let net = FeedForward::new("ff", &[2, 3, 2]);
        let mut s = ParamStore::new();
        net.register(&mut s, &mut rng_for(9, &[])).unwrap();
        *s.value_mut("ff.l0.b").unwrap() = Matrix::row_vector(vec![0.1, -0.2, 0.3]);
        let x = [0.4, -1.3];
        let mut t = Tape::new();
        let xv = t.constant(Matrix::row_vector(x.to_vec()));
        let y = ff_forward(&net, &s, xv, &mut t).unwrap();

        let w0 = s.value("ff.l0.w").unwrap();
        let b0 = s.value("ff.l0.b").unwrap();
        let w1 = s.value("ff.l1.w").unwrap();
        let mut h = [0.0; 3];
        for j in 0..3 {
            h[j] = (x[0] * w0[(0, j)] + x[1] * w0[(1, j)] + b0[(0, j)]).tanh();
        }
        for k in 0..2 {
            let expect: f64 = (0..3).map(|j| h[j] * w1[(j, k)]).sum();
            assert!((t.value(y)[(0, k)] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn gru_zero_weights_keep_zero_state() {
        let cell = GruCell::new("g", 2, 4);
        let s = zero_store(&cell);
        let mut t = Tape::new();
        let steps: Vec<Var> = (0..5)
            .map(|i| t.constant(Matrix::filled(3, 2, i as f64)))
            .collect();
        let out = gru_forward(&cell, &s, &steps, None, &mut t).unwrap();
        for st in out.states {
            assert!(t.value(st).as_slice().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn gru_rejects_empty_and_ragged_sequences() {
        let cell = GruCell::new("g", 2, 4);
        let s = zero_store(&cell);
        let mut t = Tape::new();
        assert!(gru_forward(&cell, &s, &[], None, &mut t).is_err());
        let a = t.constant(Matrix::zeros(1, 2));
        let b = t.constant(Matrix::zeros(1, 3));
        assert!(gru_forward(&cell, &s, &[a, b], None, &mut t).is_err());
    }

    /// Hand-unrolled cell arithmetic for a single row.
    fn reference_cell(s: &ParamStore, name: &str, x: &[f64], h: &[f64]) -> Vec<f64> {
        let p = |k: &str| s.value(&format!("{name}.{k}")).unwrap();
        let hid = h.len();
        let pre = |w: &Matrix, u: &Matrix, b: &Matrix, hh: &[f64]| -> Vec<f64> {
            (0..hid)
                .map(|j| {
                    let mut v = b[(0, j)];
                    for (i, xi) in x.iter().enumerate() {
                        v += xi * w[(i, j)];
                    }
                    for (i, hi) in hh.iter().enumerate() {
                        v += hi * u[(i, j)];
                    }
                    v
                })
                .collect()
        };
        let z: Vec<f64> = pre(p("w_z"), p("u_z"), p("b_z"), h).into_iter().map(sigmoid).collect();
        let r: Vec<f64> = pre(p("w_r"), p("u_r"), p("b_r"), h).into_iter().map(sigmoid).collect();
        let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
        let n: Vec<f64> = pre(p("w_n"), p("u_n"), p("b_n"), &rh).into_iter().map(f64::tanh).collect();
        (0..hid).map(|j| (1.0 - z[j]) * n[j] + z[j] * h[j]).collect()
    }

    #[test]
    fn gru_three_steps_match_unrolled_reference() {
        let cell = GruCell::new("g", 2, 3);
        let mut s = ParamStore::new();
        cell.register(&mut s, &mut rng_for(4, &[])).unwrap();
        *s.value_mut("g.b_z").unwrap() = Matrix::row_vector(vec![0.2, -0.1, 0.05]);
        let mut r = rng_for(5, &[]);
        let xs: Vec<Matrix> = (0..3).map(|_| normal_matrix(&mut r, 1, 2)).collect();

        let mut t = Tape::new();
        let steps: Vec<Var> = xs.iter().map(|m| t.constant(m.clone())).collect();
        let out = gru_forward(&cell, &s, &steps, None, &mut t).unwrap();

        let mut h = vec![0.0; 3];
        for (k, x) in xs.iter().enumerate() {
            h = reference_cell(&s, "g", x.as_slice(), &h);
            for j in 0..3 {
                assert!((t.value(out.states[k])[(0, j)] - h[j]).abs() < 1e-12);
            }
        }
        assert_eq!(out.last, *out.states.last().unwrap());
    }
}
