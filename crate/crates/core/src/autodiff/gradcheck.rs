//! Central finite-difference checks of [`Graph::backward`].

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, ParamStore, Tensor, Var};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    /// Central difference step.
    pub step: f64,
    /// Coordinates checked per tensor (all if the tensor is smaller).
    pub coords_per_tensor: usize,
    /// Denominator floor for the relative error.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-5, coords_per_tensor: 6, floor: 1e-8, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: String,
    pub checked: usize,
    /// Relative error of the derivative along one random direction over all
    /// checked tensors at once.
    pub directional_rel_error: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol && self.directional_rel_error < tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Checks gradients with respect to both the graph inputs and all parameters.
/// `build` receives the graph and one variable per input tensor and returns
/// the scalar loss.
pub fn check<F>(store: &ParamStore<f64>, inputs: &[Tensor<f64>], build: F, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>,
{
    let eval = |store: &ParamStore<f64>, inputs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new(store);
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone(), false)).collect();
        let loss = build(&mut g, &vars)?;
        Ok(g.value(loss).item())
    };

    let mut g = Graph::new(store);
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone(), true)).collect();
    let loss = build(&mut g, &vars)?;
    let pgrads = g.backward(loss)?;
    let igrads: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let h = opts.step;
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: String::new(), checked: 0, directional_rel_error: 0.0 };
    let note = |report: &mut GradCheckReport, a: f64, n: f64, label: String| {
        let e = relative_error(a, n, opts.floor);
        report.checked += 1;
        if e >= report.max_rel_error {
            report.max_rel_error = e;
            report.worst = format!("{label}: analytic {a:e}, numeric {n:e}");
        }
    };

    let mut work_inputs = inputs.to_vec();
    for (ti, t) in inputs.iter().enumerate() {
        for k in pick(&mut rng, t, &igrads[ti], opts.coords_per_tensor) {
            let orig = t.data()[k];
            work_inputs[ti].data_mut()[k] = orig + h;
            let up = eval(store, &work_inputs)?;
            work_inputs[ti].data_mut()[k] = orig - h;
            let down = eval(store, &work_inputs)?;
            work_inputs[ti].data_mut()[k] = orig;
            note(&mut report, igrads[ti].data()[k], (up - down) / (2.0 * h), format!("input {ti}[{k}]"));
        }
    }
    let mut work = store.clone();
    for id in store.ids() {
        let t = store.get(id);
        for k in pick(&mut rng, t, pgrads.get(id), opts.coords_per_tensor) {
            let orig = t.data()[k];
            work.get_mut(id).data_mut()[k] = orig + h;
            let up = eval(&work, inputs)?;
            work.get_mut(id).data_mut()[k] = orig - h;
            let down = eval(&work, inputs)?;
            work.get_mut(id).data_mut()[k] = orig;
            note(&mut report, pgrads.get(id).data()[k], (up - down) / (2.0 * h), format!("{}[{k}]", store.name(id)));
        }
    }

    // one random direction through every input and parameter
    let mut random_like = |t: &Tensor<f64>| {
        let data = (0..t.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(t.shape(), data).expect("same shape")
    };
    let dir_in: Vec<Tensor<f64>> = inputs.iter().map(&mut random_like).collect();
    let dir_p: Vec<Tensor<f64>> = store.ids().map(|id| random_like(store.get(id))).collect();
    let mut analytic = 0.0;
    for (d, gr) in dir_in.iter().zip(&igrads) {
        analytic += d.dot(gr);
    }
    for (d, id) in dir_p.iter().zip(store.ids()) {
        analytic += d.dot(pgrads.get(id));
    }
    let shifted = |sign: f64| -> Result<f64> {
        let mut s = store.clone();
        for (d, id) in dir_p.iter().zip(store.ids()) {
            for (p, &dv) in s.get_mut(id).data_mut().iter_mut().zip(d.data()) {
                *p += sign * h * dv;
            }
        }
        let moved: Vec<Tensor<f64>> = inputs
            .iter()
            .zip(&dir_in)
            .map(|(t, d)| {
                let mut t = t.clone();
                for (p, &dv) in t.data_mut().iter_mut().zip(d.data()) {
                    *p += sign * h * dv;
                }
                t
            })
            .collect();
        eval(&s, &moved)
    };
    let numeric = (shifted(1.0)? - shifted(-1.0)?) / (2.0 * h);
    report.directional_rel_error = relative_error(analytic, numeric, opts.floor);
    Ok(report)
}

/// Largest-gradient coordinates first, then random ones.
fn pick(rng: &mut ChaCha8Rng, t: &Tensor<f64>, grad: &Tensor<f64>, count: usize) -> Vec<usize> {
    let n = t.len();
    if n <= count {
        return (0..n).collect();
    }
    let mut out = vec![(0..n)
        .max_by(|&a, &b| grad.data()[a].abs().total_cmp(&grad.data()[b].abs()))
        .unwrap_or(0)];
    for k in sample(rng, n, count).into_iter() {
        if out.len() == count {
            break;
        }
        if !out.contains(&k) {
            out.push(k);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use num_complex::Complex;

    use super::*;
    use crate::dsp::{FrameParams, SpectralSequence, Stft};

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
    }

    fn store_with(rng: &mut ChaCha8Rng, specs: &[(&str, &[usize])]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        for (name, shape) in specs {
            s.register(*name, rand_tensor(rng, shape, 0.5)).unwrap();
        }
        s
    }

    fn assert_ok(r: GradCheckReport) {
        assert!(r.passes(1e-4), "{r:?}");
        assert!(r.checked > 0);
    }

    #[test]
    fn conv_elu_add_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for (taps, stride) in [(3, 1), (3, 2), (4, 2), (1, 1)] {
            let store = store_with(&mut rng, &[("w", &[taps, 3, 2]), ("b", &[2]), ("w2", &[taps, 2, 2]), ("b2", &[2])]);
            let x = rand_tensor(&mut rng, &[2, 6, 3], 1.0);
            let target = rand_tensor(&mut rng, &[2, 6usize.div_ceil(stride), 2], 1.0);
            let r = check(
                &store,
                &[x, target],
                |g, v| {
                    let (w, b, w2, b2) = (g.param(ParamId(0)), g.param(ParamId(1)), g.param(ParamId(2)), g.param(ParamId(3)));
                    let h = g.conv(v[0], w, b, stride)?;
                    let h = g.elu(h);
                    let h2 = g.conv(h, w2, b2, 1)?;
                    let s = g.add(h, h2)?;
                    g.logmse(s, v[1])
                },
                GradCheckOptions::default(),
            )
            .unwrap();
            assert_ok(r);
        }
    }

    use super::super::ParamId;

    #[test]
    fn deconv_and_depthwise_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for taps in [3, 4] {
            let store = store_with(&mut rng, &[("w", &[taps, 3, 2]), ("b", &[2]), ("dw", &[taps, 2]), ("db", &[2])]);
            let x = rand_tensor(&mut rng, &[2, 5, 3], 1.0);
            let target = rand_tensor(&mut rng, &[2, 10, 2], 1.0);
            let r = check(
                &store,
                &[x, target],
                |g, v| {
                    let (w, b, dw, db) = (g.param(ParamId(0)), g.param(ParamId(1)), g.param(ParamId(2)), g.param(ParamId(3)));
                    let up = g.deconv(v[0], w, b, 2)?;
                    let d = g.depthwise(up, dw, db)?;
                    g.logmse(d, v[1])
                },
                GradCheckOptions::default(),
            )
            .unwrap();
            assert_ok(r);
        }
    }

    #[test]
    fn gru_and_reshaping_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let store = store_with(
            &mut rng,
            &[("a.wih", &[3, 9]), ("a.whh", &[3, 9]), ("a.b", &[9]), ("b.wih", &[3, 9]), ("b.whh", &[3, 9]), ("b.b", &[9])],
        );
        let x = rand_tensor(&mut rng, &[5, 3, 2], 1.0);
        let target = rand_tensor(&mut rng, &[5, 6], 1.0);
        let r = check(
            &store,
            &[x, target],
            |g, v| {
                let flat = g.reshape(v[0], &[5, 6])?;
                let mut outs = Vec::new();
                for grp in 0..2 {
                    let chunk = g.slice_cols(flat, grp * 3, 3)?;
                    let (wih, whh, b) =
                        (g.param(ParamId(grp * 3)), g.param(ParamId(grp * 3 + 1)), g.param(ParamId(grp * 3 + 2)));
                    outs.push(g.gru(chunk, wih, whh, b, None)?);
                }
                let cat = g.concat_cols(&outs)?;
                let index: Vec<usize> = (0..30).map(|i| (i / 6) * 6 + [0, 3, 1, 4, 2, 5][i % 6]).collect();
                let perm = g.gather(cat, index, &[5, 6])?;
                g.logmse(perm, v[1])
            },
            GradCheckOptions::default(),
        )
        .unwrap();
        assert_ok(r);
    }

    #[test]
    fn convlstm_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let store = store_with(&mut rng, &[("wx", &[3, 2, 8]), ("wh", &[3, 2, 8]), ("b", &[8])]);
        let x = rand_tensor(&mut rng, &[4, 5, 2], 1.0);
        let target = rand_tensor(&mut rng, &[4, 5, 2], 0.5);
        let r = check(
            &store,
            &[x, target],
            |g, v| {
                let (wx, wh, b) = (g.param(ParamId(0)), g.param(ParamId(1)), g.param(ParamId(2)));
                let h = g.convlstm(v[0], wx, wh, b, None)?;
                g.logmse(h, v[1])
            },
            GradCheckOptions { coords_per_tensor: 10, ..Default::default() },
        )
        .unwrap();
        assert_ok(r);
    }

    #[test]
    fn mask_chain_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let params = FrameParams::default();
        let stft = Arc::new(Stft::<f64>::new(params));
        let frames = 4;
        let y = SpectralSequence::from_vec(
            frames,
            257,
            (0..frames * 257).map(|_| Complex::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect(),
        )
        .unwrap();
        let y = Arc::new(y);
        let m = rand_tensor(&mut rng, &[frames, 264, 2], 1.5);
        let len = params.synthesis_len(frames) - 300;
        let target = rand_tensor(&mut rng, &[len], 0.1);
        let store = ParamStore::new();
        let r = check(
            &store,
            &[m, target],
            |g, v| {
                let gain = g.complex_gain(v[0], 257)?;
                let e = g.complex_mul_const(gain, y.clone())?;
                let t = g.istft(e, stft.clone(), 100, len)?;
                let l1 = g.logmse(t, v[1])?;
                let l2 = g.logmse(t, t)?;
                g.weighted_sum(&[l1, l2], &[0.7, 0.3])
            },
            GradCheckOptions { coords_per_tensor: 20, ..Default::default() },
        )
        .unwrap();
        assert_ok(r);
    }

    #[test]
    fn gain_gradient_near_zero_is_finite() {
        let store = ParamStore::new();
        let m = Tensor::from_vec(&[1, 1, 2], vec![1e-6, -2e-6]).unwrap();
        let mut g = Graph::new(&store);
        let v = g.input(m, true);
        let gain = g.complex_gain(v, 1).unwrap();
        let zero = g.constant(Tensor::from_vec(&[1, 1, 2], vec![1.0, 1.0]).unwrap());
        let l = g.logmse(gain, zero).unwrap();
        g.backward(l).unwrap();
        assert!(g.grad(v).unwrap().is_finite());
    }

    #[test]
    fn linearity_and_unused_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let store = store_with(&mut rng, &[("w", &[1, 2, 2]), ("b", &[2]), ("unused", &[3])]);
        let x = rand_tensor(&mut rng, &[1, 3, 2], 1.0);
        let t = rand_tensor(&mut rng, &[1, 3, 2], 1.0);
        let run = |c: f64| {
            let mut g = Graph::new(&store);
            let xv = g.constant(x.clone());
            let tv = g.constant(t.clone());
            let (w, b) = (g.param(ParamId(0)), g.param(ParamId(1)));
            let _ = g.param(ParamId(2));
            let y = g.conv(xv, w, b, 1).unwrap();
            let l = g.logmse(y, tv).unwrap();
            let s = g.weighted_sum(&[l], &[c]).unwrap();
            g.backward(s).unwrap()
        };
        let g1 = run(1.0);
        let g3 = run(3.0);
        for (a, b) in g1.iter().zip(g3.iter()) {
            for (&u, &v) in a.data().iter().zip(b.data()) {
                assert!((3.0 * u - v).abs() <= 1e-12 * v.abs().max(1.0));
            }
        }
        assert!(g1.get(ParamId(2)).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_scalar_backward_rejected() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let v = g.input(Tensor::<f64>::zeros(&[3]), true);
        assert!(g.backward(v).is_err());
    }
}
