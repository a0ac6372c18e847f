//! Network building blocks on top of the tape: GRU layers, dropout, and
//! weight initialization.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use rand::RngCore;

use crate::rng;
use crate::tape::{Tape, Var};
use crate::tensor::{ParamSet, Tensor, TensorError};

/// He-normal tensor with std sqrt(2 / fan_in).
pub fn he_normal<R: RngCore>(shape: Vec<usize>, fan_in: usize, rand: &mut R) -> Tensor {
    let std = crate::math::sqrt(2.0 / fan_in as f64);
    let numel: usize = shape.iter().product();
    let data: Vec<f64> = (0..numel).map(|_| std * rng::normal(rand)).collect();
    let mut t = Tensor::new(shape, data).expect("shape/data agree");
    t.set_requires_grad(true);
    t
}

/// Uniform(0, 1) tensor.
pub fn uniform01<R: RngCore>(shape: Vec<usize>, rand: &mut R) -> Tensor {
    let numel: usize = shape.iter().product();
    let data: Vec<f64> = (0..numel).map(|_| rand::Rng::gen::<f64>(rand)).collect();
    let mut t = Tensor::new(shape, data).expect("shape/data agree");
    t.set_requires_grad(true);
    t
}

pub fn zeros_param(shape: Vec<usize>) -> Tensor {
    let mut t = Tensor::zeros(shape);
    t.set_requires_grad(true);
    t
}

/// Names of the nine weight tensors of one GRU layer under `prefix`.
fn gru_names(prefix: &str) -> [String; 9] {
    [
        format!("{prefix}.w_z"),
        format!("{prefix}.u_z"),
        format!("{prefix}.b_z"),
        format!("{prefix}.w_r"),
        format!("{prefix}.u_r"),
        format!("{prefix}.b_r"),
        format!("{prefix}.w_c"),
        format!("{prefix}.u_c"),
        format!("{prefix}.b_c"),
    ]
}

/// Inserts He-initialized GRU weights (biases zero) for one layer.
pub fn init_gru_layer<R: RngCore>(
    params: &mut ParamSet,
    prefix: &str,
    input_dim: usize,
    hidden: usize,
    rand: &mut R,
) {
    let [w_z, u_z, b_z, w_r, u_r, b_r, w_c, u_c, b_c] = gru_names(prefix);
    for name in [w_z, w_r, w_c] {
        params.insert(name, he_normal(alloc::vec![hidden, input_dim], input_dim, rand));
    }
    for name in [u_z, u_r, u_c] {
        params.insert(name, he_normal(alloc::vec![hidden, hidden], hidden, rand));
    }
    for name in [b_z, b_r, b_c] {
        params.insert(name, zeros_param(alloc::vec![hidden]));
    }
}

/// Inserts all-zero GRU weights for one layer.
pub fn init_gru_layer_zeroed(params: &mut ParamSet, prefix: &str, input_dim: usize, hidden: usize) {
    let [w_z, u_z, b_z, w_r, u_r, b_r, w_c, u_c, b_c] = gru_names(prefix);
    for name in [w_z, w_r, w_c] {
        params.insert(name, zeros_param(alloc::vec![hidden, input_dim]));
    }
    for name in [u_z, u_r, u_c] {
        params.insert(name, zeros_param(alloc::vec![hidden, hidden]));
    }
    for name in [b_z, b_r, b_c] {
        params.insert(name, zeros_param(alloc::vec![hidden]));
    }
}

/// Every parameter of a set loaded onto a tape, with name lookup and a way
/// to pull gradients back after `backward`.
pub struct TapedParams {
    vars: Vec<(String, Var)>,
}

impl TapedParams {
    /// Loads all parameters as leaves. With `trainable` false they enter the
    /// graph as constants (a frozen pretrained model).
    pub fn load(tape: &mut Tape, params: &ParamSet, trainable: bool) -> Self {
        let mut vars = Vec::with_capacity(params.len());
        for (name, tensor) in params.iter() {
            let var = if trainable {
                tape.leaf(tensor)
            } else {
                let mut frozen = tensor.clone();
                frozen.set_requires_grad(false);
                tape.leaf(&frozen)
            };
            vars.push((name.clone(), var));
        }
        TapedParams { vars }
    }

    pub fn var(&self, name: &str) -> Result<Var, TensorError> {
        self.vars
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| TensorError::MissingGrad {
                name: String::from(name),
            })
    }

    pub fn gru_vars(&self, prefix: &str) -> Result<GruVars, TensorError> {
        let names = gru_names(prefix);
        Ok(GruVars {
            w_z: self.var(&names[0])?,
            u_z: self.var(&names[1])?,
            b_z: self.var(&names[2])?,
            w_r: self.var(&names[3])?,
            u_r: self.var(&names[4])?,
            b_r: self.var(&names[5])?,
            w_c: self.var(&names[6])?,
            u_c: self.var(&names[7])?,
            b_c: self.var(&names[8])?,
        })
    }

    /// Accumulates the tape's gradients into the parameter tensors. A
    /// parameter the loss never reached gets an explicit zero gradient so
    /// the optimizer still sees it.
    pub fn apply_grads(&self, tape: &Tape, params: &mut ParamSet) {
        for (name, var) in &self.vars {
            let Some(tensor) = params.get_mut(name) else {
                continue;
            };
            if !tensor.requires_grad() {
                continue;
            }
            match tape.grad(*var) {
                Some(g) => tensor.accumulate_grad(g),
                None => {
                    let zeros = alloc::vec![0.0; tensor.numel()];
                    tensor.accumulate_grad(&zeros);
                }
            }
        }
    }
}

/// Tape handles to one GRU layer's weights.
#[derive(Clone, Copy)]
pub struct GruVars {
    pub w_z: Var,
    pub u_z: Var,
    pub b_z: Var,
    pub w_r: Var,
    pub u_r: Var,
    pub b_r: Var,
    pub w_c: Var,
    pub u_c: Var,
    pub b_c: Var,
}

/// Loads one GRU layer's weights onto the tape. With `trainable` false the
/// weights enter as constants (frozen), which is how a pretrained language
/// model participates in the regularizer.
pub fn load_gru_vars(
    tape: &mut Tape,
    params: &ParamSet,
    prefix: &str,
    trainable: bool,
) -> Result<GruVars, TensorError> {
    let names = gru_names(prefix);
    let mut vars = Vec::with_capacity(9);
    for name in &names {
        let tensor = params.get(name).ok_or(TensorError::MissingGrad {
            name: name.clone(),
        })?;
        vars.push(if trainable {
            tape.leaf(tensor)
        } else {
            let mut frozen = tensor.clone();
            frozen.set_requires_grad(false);
            tape.leaf(&frozen)
        });
    }
    Ok(GruVars {
        w_z: vars[0],
        u_z: vars[1],
        b_z: vars[2],
        w_r: vars[3],
        u_r: vars[4],
        b_r: vars[5],
        w_c: vars[6],
        u_c: vars[7],
        b_c: vars[8],
    })
}

/// One GRU cell step.
///
/// z = sigmoid(W_z x + U_z h + b_z)
/// r = sigmoid(W_r x + U_r h + b_r)
/// c = tanh(W_c x + U_c (r .* h) + b_c)
/// h' = (1 - z) .* c + z .* h
pub fn gru_cell(tape: &mut Tape, x: Var, h: Var, g: &GruVars) -> Result<Var, TensorError> {
    let zx = tape.matvec(g.w_z, x)?;
    let zh = tape.matvec(g.u_z, h)?;
    let zs = tape.add(zx, zh)?;
    let zb = tape.add(zs, g.b_z)?;
    let z = tape.sigmoid(zb);

    let rx = tape.matvec(g.w_r, x)?;
    let rh = tape.matvec(g.u_r, h)?;
    let rs = tape.add(rx, rh)?;
    let rb = tape.add(rs, g.b_r)?;
    let r = tape.sigmoid(rb);

    let gated = tape.mul(r, h)?;
    let cx = tape.matvec(g.w_c, x)?;
    let ch = tape.matvec(g.u_c, gated)?;
    let cs = tape.add(cx, ch)?;
    let cb = tape.add(cs, g.b_c)?;
    let c = tape.tanh(cb);

    let keep = tape.mul(z, h)?;
    let zbar = tape.one_minus(z);
    let new = tape.mul(zbar, c)?;
    tape.add(keep, new)
}

/// Runs a GRU over `inputs` `[t_steps, d_in]` starting from `h0` `[hidden]`,
/// producing the hidden-state sequence `[t_steps, hidden]`.
pub fn gru_layer(
    tape: &mut Tape,
    inputs: Var,
    g: &GruVars,
    h0: Var,
) -> Result<Var, TensorError> {
    let steps = tape.shape(inputs)[0];
    let mut h = h0;
    let mut rows = Vec::with_capacity(steps);
    for t in 0..steps {
        let x = tape.select_row(inputs, t)?;
        h = gru_cell(tape, x, h, g)?;
        rows.push(h);
    }
    tape.stack_rows(&rows)
}

/// Inverted dropout: scales kept activations by 1/(1-p). Identity when
/// p == 0. Call only in training mode.
pub fn dropout<R: RngCore>(
    tape: &mut Tape,
    x: Var,
    p: f64,
    rand: &mut R,
) -> Result<Var, TensorError> {
    if p <= 0.0 {
        return Ok(x);
    }
    let keep = 1.0 - p;
    let shape = tape.shape(x).to_vec();
    let numel: usize = shape.iter().product();
    let mask: Vec<f64> = (0..numel)
        .map(|_| {
            if rand::Rng::gen::<f64>(rand) < keep {
                1.0 / keep
            } else {
                0.0
            }
        })
        .collect();
    let m = tape.constant(shape, mask)?;
    tape.mul(x, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{assert_grad_matches, finite_diff, max_abs_diff};
    use alloc::vec;
    use rand::Rng;

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// Scalar-loop GRU oracle mirroring the documented cell equations.
    #[allow(clippy::too_many_arguments)]
    fn gru_oracle(
        inputs: &[f64],
        steps: usize,
        d_in: usize,
        hidden: usize,
        w_z: &[f64],
        u_z: &[f64],
        b_z: &[f64],
        w_r: &[f64],
        u_r: &[f64],
        b_r: &[f64],
        w_c: &[f64],
        u_c: &[f64],
        b_c: &[f64],
        h0: &[f64],
    ) -> Vec<f64> {
        let matvec = |m: &[f64], v: &[f64], rows: usize, cols: usize| -> Vec<f64> {
            (0..rows)
                .map(|i| (0..cols).map(|j| m[i * cols + j] * v[j]).sum())
                .collect()
        };
        let mut h = h0.to_vec();
        let mut out = Vec::new();
        for t in 0..steps {
            let x = &inputs[t * d_in..(t + 1) * d_in];
            let zx = matvec(w_z, x, hidden, d_in);
            let zh = matvec(u_z, &h, hidden, hidden);
            let rx = matvec(w_r, x, hidden, d_in);
            let rh = matvec(u_r, &h, hidden, hidden);
            let z: Vec<f64> = (0..hidden).map(|i| sigmoid(zx[i] + zh[i] + b_z[i])).collect();
            let r: Vec<f64> = (0..hidden).map(|i| sigmoid(rx[i] + rh[i] + b_r[i])).collect();
            let gated: Vec<f64> = (0..hidden).map(|i| r[i] * h[i]).collect();
            let cx = matvec(w_c, x, hidden, d_in);
            let ch = matvec(u_c, &gated, hidden, hidden);
            let c: Vec<f64> = (0..hidden).map(|i| (cx[i] + ch[i] + b_c[i]).tanh()).collect();
            h = (0..hidden)
                .map(|i| (1.0 - z[i]) * c[i] + z[i] * h[i])
                .collect();
            out.extend_from_slice(&h);
        }
        out
    }

    struct GruFixture {
        params: ParamSet,
        d_in: usize,
        hidden: usize,
    }

    impl GruFixture {
        fn random(d_in: usize, hidden: usize, seed: u64) -> Self {
            let mut rand = crate::rng::seeded(seed);
            let mut params = ParamSet::new();
            init_gru_layer(&mut params, "g", d_in, hidden, &mut rand);
            GruFixture {
                params,
                d_in,
                hidden,
            }
        }

        fn run(&self, inputs: &[f64], steps: usize) -> Vec<f64> {
            let mut tape = Tape::new();
            let x = tape
                .constant(vec![steps, self.d_in], inputs.to_vec())
                .unwrap();
            let g = load_gru_vars(&mut tape, &self.params, "g", true).unwrap();
            let h0 = tape.constant(vec![self.hidden], vec![0.0; self.hidden]).unwrap();
            let y = gru_layer(&mut tape, x, &g, h0).unwrap();
            tape.data(y).to_vec()
        }

        fn oracle(&self, inputs: &[f64], steps: usize) -> Vec<f64> {
            let p = |n: &str| self.params.get(&alloc::format!("g.{n}")).unwrap().data();
            gru_oracle(
                inputs,
                steps,
                self.d_in,
                self.hidden,
                p("w_z"),
                p("u_z"),
                p("b_z"),
                p("w_r"),
                p("u_r"),
                p("b_r"),
                p("w_c"),
                p("u_c"),
                p("b_c"),
                &vec![0.0; self.hidden],
            )
        }
    }

    #[test]
    fn zero_everything_is_a_fixed_point() {
        let mut params = ParamSet::new();
        init_gru_layer_zeroed(&mut params, "g", 3, 4);
        let fx = GruFixture {
            params,
            d_in: 3,
            hidden: 4,
        };
        let out = fx.run(&[0.0; 15], 5);
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_step_matches_hand_computed_cell() {
        let fx = GruFixture::random(2, 3, 5);
        let inputs = [0.3, -0.7];
        let got = fx.run(&inputs, 1);
        let expect = fx.oracle(&inputs, 1);
        assert!(max_abs_diff(&got, &expect) < 1e-10);
    }

    #[test]
    fn four_step_sequence_matches_scalar_oracle() {
        let mut rand = crate::rng::seeded(11);
        let fx = GruFixture::random(3, 3, 6);
        let inputs: Vec<f64> = (0..12).map(|_| rand.gen::<f64>() * 2.0 - 1.0).collect();
        let got = fx.run(&inputs, 4);
        let expect = fx.oracle(&inputs, 4);
        assert!(max_abs_diff(&got, &expect) < 1e-10);
    }

    #[test]
    fn gru_gradients_match_finite_differences() {
        let d_in = 2;
        let hidden = 3;
        let steps = 4;
        let fx = GruFixture::random(d_in, hidden, 13);
        let mut rand = crate::rng::seeded(17);
        let x0: Vec<f64> = (0..steps * d_in).map(|_| rand.gen::<f64>() - 0.5).collect();

        let eval = |xs: &[f64]| -> (f64, Option<Vec<f64>>) {
            let mut tape = Tape::new();
            let xt = Tensor::param(vec![steps, d_in], xs.to_vec()).unwrap();
            let x = tape.leaf(&xt);
            let g = load_gru_vars(&mut tape, &fx.params, "g", true).unwrap();
            let h0 = tape.constant(vec![hidden], vec![0.0; hidden]).unwrap();
            let y = gru_layer(&mut tape, x, &g, h0).unwrap();
            let sq = tape.mul(y, y).unwrap();
            let loss = tape.sum(sq);
            let lv = tape.data(loss)[0];
            tape.backward(loss).unwrap();
            (lv, tape.grad(x).map(|v| v.to_vec()))
        };
        let (_, grad) = eval(&x0);
        let numeric = finite_diff(&mut |xs| eval(xs).0, &x0, 1e-5);
        assert_grad_matches(&grad.unwrap(), &numeric, 1e-4);
    }

    #[test]
    fn gru_weight_gradients_match_finite_differences() {
        let d_in = 2;
        let hidden = 2;
        let steps = 3;
        let mut rand = crate::rng::seeded(23);
        let inputs: Vec<f64> = (0..steps * d_in).map(|_| rand.gen::<f64>() - 0.5).collect();
        let fx = GruFixture::random(d_in, hidden, 29);

        for name in ["g.w_z", "g.u_r", "g.b_c", "g.w_c"] {
            let base = fx.params.get(name).unwrap().data().to_vec();
            let eval = |ws: &[f64]| -> (f64, Option<Vec<f64>>) {
                let mut params = fx.params.clone();
                params.get_mut(name).unwrap().data_mut().copy_from_slice(ws);
                let mut tape = Tape::new();
                let x = tape.constant(vec![steps, d_in], inputs.clone()).unwrap();
                let g = load_gru_vars(&mut tape, &params, "g", true).unwrap();
                let h0 = tape.constant(vec![hidden], vec![0.0; hidden]).unwrap();
                let y = gru_layer(&mut tape, x, &g, h0).unwrap();
                let sq = tape.mul(y, y).unwrap();
                let loss = tape.sum(sq);
                let lv = tape.data(loss)[0];
                tape.backward(loss).unwrap();
                let var = match name {
                    "g.w_z" => g.w_z,
                    "g.u_r" => g.u_r,
                    "g.b_c" => g.b_c,
                    "g.w_c" => g.w_c,
                    _ => unreachable!(),
                };
                (lv, tape.grad(var).map(|v| v.to_vec()))
            };
            let (_, grad) = eval(&base);
            let numeric = finite_diff(&mut |ws| eval(ws).0, &base, 1e-5);
            assert_grad_matches(&grad.unwrap(), &numeric, 1e-4);
        }
    }

    #[test]
    fn dropout_disabled_at_p_zero_and_scales_by_keep_rate() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![100], vec![1.0; 100]).unwrap();
        let mut rand = crate::rng::seeded(3);
        let same = dropout(&mut tape, x, 0.0, &mut rand).unwrap();
        assert_eq!(same, x);
        let dropped = dropout(&mut tape, x, 0.3, &mut rand).unwrap();
        let vals = tape.data(dropped);
        let kept: Vec<f64> = vals.iter().copied().filter(|&v| v != 0.0).collect();
        for v in &kept {
            assert!((v - 1.0 / 0.7).abs() < 1e-12);
        }
        assert!(kept.len() > 50 && kept.len() < 90);
    }
}
