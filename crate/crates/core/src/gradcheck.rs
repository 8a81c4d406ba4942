//! Finite-difference verification of every gradient path.
//!
//! Each suite builds small random instances, computes gradients with the
//! tape, and compares them against central finite differences evaluated by
//! rebuilding the forward pass from scratch. The differencing code never
//! touches the backward pass, so it stays an independent oracle.

use crate::autodiff::{Tape, Tensor};
use crate::losses::{policy_loss, transition_nll, TargetGain};
use crate::nets::{ActionMode, InitConfig, ParamSet, PolicyModel, TransitionModel};
use crate::rng::{stream, Purpose};
use rand::Rng;
use rand_chacha::ChaCha12Rng;

const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub cases: usize,
    pub threshold: f64,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.threshold
    }
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub suites: Vec<SuiteResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed())
    }
}

/// Relative error with a unit floor in the denominator, so gradients near
/// zero are compared absolutely.
pub fn rel_err(ad: f64, fd: f64) -> f64 {
    (ad - fd).abs() / ad.abs().max(fd.abs()).max(1.0)
}

/// Central finite-difference gradient of `f` at `x`.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xs = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = xs[i];
        xs[i] = orig + h;
        let fp = f(&xs);
        xs[i] = orig - h;
        let fm = f(&xs);
        xs[i] = orig;
        out.push((fp - fm) / (2.0 * h));
    }
    out
}

/// One differencing check: `build` maps input leaves to a scalar loss and
/// must be deterministic. Returns the worst relative error over all input
/// coordinates.
fn check_case(
    inputs: &[(Vec<usize>, Vec<f64>)],
    build: &dyn Fn(&Tape, &[Tensor]) -> Tensor,
) -> f64 {
    let eval = |datas: &[Vec<f64>]| -> f64 {
        let tape = Tape::new();
        let leaves: Vec<Tensor> = inputs
            .iter()
            .zip(datas.iter())
            .map(|((shape, _), d)| tape.var(shape, d.clone()).unwrap())
            .collect();
        build(&tape, &leaves).scalar_value()
    };

    let tape = Tape::new();
    let leaves: Vec<Tensor> = inputs
        .iter()
        .map(|(shape, data)| tape.var(shape, data.clone()).unwrap())
        .collect();
    let loss = build(&tape, &leaves);
    loss.backward().expect("scalar loss");

    let mut datas: Vec<Vec<f64>> = inputs.iter().map(|(_, d)| d.clone()).collect();
    let mut worst: f64 = 0.0;
    for k in 0..inputs.len() {
        let ad = leaves[k]
            .grad()
            .unwrap_or_else(|| vec![0.0; inputs[k].1.len()]);
        for i in 0..datas[k].len() {
            let orig = datas[k][i];
            datas[k][i] = orig + FD_STEP;
            let fp = eval(&datas);
            datas[k][i] = orig - FD_STEP;
            let fm = eval(&datas);
            datas[k][i] = orig;
            let fd = (fp - fm) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(ad[i], fd));
        }
    }
    worst
}

fn rand_data(rng: &mut ChaCha12Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Every forward primitive, alone and in short compositions.
pub fn suite_primitives(seed: u64) -> SuiteResult {
    let mut rng = stream(seed, Purpose::Test, &[100]);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    let mut run = |inputs: &[(Vec<usize>, Vec<f64>)], build: &dyn Fn(&Tape, &[Tensor]) -> Tensor| {
        cases += 1;
        let e = check_case(inputs, build);
        if e > worst {
            worst = e;
        }
    };

    for round in 0..10u64 {
        let _ = round;
        // matmul into a square sum
        run(
            &[
                (vec![3, 4], rand_data(&mut rng, 12, -1.0, 1.0)),
                (vec![4, 2], rand_data(&mut rng, 8, -1.0, 1.0)),
            ],
            &|_t, xs| xs[0].matmul(&xs[1]).unwrap().square().sum(),
        );
        // add with a broadcast bias row under tanh
        run(
            &[
                (vec![4, 3], rand_data(&mut rng, 12, -1.5, 1.5)),
                (vec![1, 3], rand_data(&mut rng, 3, -0.5, 0.5)),
            ],
            &|_t, xs| xs[0].add(&xs[1]).unwrap().tanh().sum(),
        );
        // sub, mul, div with a denominator bounded away from zero
        run(
            &[
                (vec![2, 5], rand_data(&mut rng, 10, -1.0, 1.0)),
                (vec![2, 5], rand_data(&mut rng, 10, -1.0, 1.0)),
            ],
            &|_t, xs| {
                let denom = xs[1].square().affine(1.0, 1.0);
                xs[0].sub(&xs[1]).unwrap().mul(&xs[0]).unwrap().div(&denom).unwrap().sum()
            },
        );
        // sigmoid, exp, log chain (arguments kept strictly positive)
        run(
            &[(vec![3, 3], rand_data(&mut rng, 9, -2.0, 2.0))],
            &|_t, xs| xs[0].sigmoid().affine(1.0, 0.5).log().exp().sum(),
        );
        // square under mean
        run(
            &[(vec![6], rand_data(&mut rng, 6, -2.0, 2.0))],
            &|_t, xs| xs[0].square().mean(),
        );
        // clamp_min with inputs held away from the kink
        run(
            &[(vec![8], {
                let mut d = rand_data(&mut rng, 8, 0.5, 1.5);
                for (i, v) in d.iter_mut().enumerate() {
                    if i % 2 == 0 {
                        *v = -*v;
                    }
                }
                d
            })],
            &|_t, xs| xs[0].clamp_min(0.0).square().sum(),
        );
        // concat + slice + reshape
        run(
            &[
                (vec![2, 3], rand_data(&mut rng, 6, -1.0, 1.0)),
                (vec![2, 2], rand_data(&mut rng, 4, -1.0, 1.0)),
            ],
            &|_t, xs| {
                let cat = Tensor::concat(&[&xs[0], &xs[1]]).unwrap();
                let mid = cat.slice(1, 4).unwrap();
                mid.reshape(&[3, 2]).unwrap().square().sum()
            },
        );
        // affine and neg
        run(
            &[(vec![5], rand_data(&mut rng, 5, -1.0, 1.0))],
            &|_t, xs| xs[0].affine(2.5, -1.0).mul(&xs[0].neg()).unwrap().sum(),
        );
        // reparameterized sampling with a fixed noise stream
        let sub = rng.random::<u64>();
        run(
            &[
                (vec![2, 3], rand_data(&mut rng, 6, -1.0, 1.0)),
                (vec![2, 3], rand_data(&mut rng, 6, 0.3, 1.2)),
            ],
            &|t, xs| {
                let mut noise = stream(sub, Purpose::Test, &[7]);
                t.reparam_sample(&xs[0], &xs[1], &mut noise)
                    .unwrap()
                    .square()
                    .mean()
            },
        );
        // three stacked nonlinear layers
        run(
            &[
                (vec![2, 4], rand_data(&mut rng, 8, -1.0, 1.0)),
                (vec![4, 4], rand_data(&mut rng, 16, -0.7, 0.7)),
                (vec![4, 3], rand_data(&mut rng, 12, -0.7, 0.7)),
                (vec![3, 1], rand_data(&mut rng, 3, -0.7, 0.7)),
            ],
            &|_t, xs| {
                let h1 = xs[0].matmul(&xs[1]).unwrap().tanh();
                let h2 = h1.matmul(&xs[2]).unwrap().tanh();
                h2.matmul(&xs[3]).unwrap().sum()
            },
        );
    }

    SuiteResult {
        name: "primitives",
        max_rel_err: worst,
        cases,
        threshold: 1e-4,
    }
}

/// Both training losses, differentiated through every input.
pub fn suite_losses(seed: u64) -> SuiteResult {
    let mut rng = stream(seed, Purpose::Test, &[200]);
    let mut worst: f64 = 0.0;
    let mut cases = 0;

    for _ in 0..4 {
        let n = 2 * 3 * 4;
        let inputs = [
            (vec![2, 3, 4], rand_data(&mut rng, n, -0.5, 0.5)),
            (vec![2, 3, 4], rand_data(&mut rng, n, 0.2, 1.5)),
            (vec![2, 3, 4], rand_data(&mut rng, n, -0.5, 0.5)),
        ];
        let e = check_case(&inputs, &|_t, xs| {
            transition_nll(&xs[0], &xs[1], &xs[2], 1e-6).unwrap()
        });
        worst = worst.max(e);
        cases += 1;

        let inputs = [
            (vec![2, 5, 4], rand_data(&mut rng, 40, -1.0, 1.0)),
            (vec![2, 4], rand_data(&mut rng, 8, -0.7, 0.7)),
        ];
        let e = check_case(&inputs, &|_t, xs| {
            policy_loss(&xs[0], &xs[1], TargetGain::position_only()).unwrap()
        });
        worst = worst.max(e);
        cases += 1;

        // A gain with nonzero velocity weights exercises all four lanes.
        let inputs = [
            (vec![1, 3, 4], rand_data(&mut rng, 12, -1.0, 1.0)),
            (vec![1, 3, 4], rand_data(&mut rng, 12, -1.0, 1.0)),
        ];
        let e = check_case(&inputs, &|_t, xs| {
            policy_loss(&xs[0], &xs[1], TargetGain([1.0, 1.0, 0.3, 0.3])).unwrap()
        });
        worst = worst.max(e);
        cases += 1;
    }

    SuiteResult {
        name: "losses",
        max_rel_err: worst,
        cases,
        threshold: 1e-4,
    }
}

/// Checks a model-parameter gradient against differencing `eval` over every
/// coordinate of every parameter array.
fn check_params(
    params: &ParamSet,
    ad: &[Option<Vec<f64>>],
    eval: &mut dyn FnMut(&ParamSet) -> f64,
) -> f64 {
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for (k, p) in params.iter().enumerate() {
        let ad_k = ad[k].clone().unwrap_or_else(|| vec![0.0; p.data.len()]);
        for i in 0..p.data.len() {
            let orig = p.data[i];
            probe.iter_mut().nth(k).unwrap().data[i] = orig + FD_STEP;
            let fp = eval(&probe);
            probe.iter_mut().nth(k).unwrap().data[i] = orig - FD_STEP;
            let fm = eval(&probe);
            probe.iter_mut().nth(k).unwrap().data[i] = orig;
            let fd = (fp - fm) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(ad_k[i], fd));
        }
    }
    worst
}

/// Parameter gradients of both networks over short teacher-forced runs,
/// plus the sampled-state path into the previous action.
pub fn suite_nets(seed: u64) -> SuiteResult {
    let mut init_rng = stream(seed, Purpose::Init, &[300]);
    let mut data_rng = stream(seed, Purpose::Test, &[301]);
    let mut worst: f64 = 0.0;
    let mut cases = 0;

    // Transition: d sum(mu_delta + var_delta) / d phi over 3 steps.
    {
        let model: TransitionModel =
            TransitionModel::new(6, &InitConfig::default(), &mut init_rng);
        let ys: Vec<Vec<f64>> = (0..3).map(|_| rand_data(&mut data_rng, 8, -0.8, 0.8)).collect();
        let us: Vec<Vec<f64>> = (0..3).map(|_| rand_data(&mut data_rng, 4, -0.8, 0.8)).collect();
        let run = |m: &TransitionModel, want_grads: bool| -> (f64, Vec<Option<Vec<f64>>>) {
            let tape = Tape::new();
            let bound = m.bind(&tape, true);
            let mut h = bound.initial_hidden(2);
            let mut total: Option<Tensor> = None;
            for t in 0..3 {
                let y = tape.constant(&[2, 4], ys[t].clone()).unwrap();
                let u = tape.constant(&[2, 2], us[t].clone()).unwrap();
                let (mu, var, hn) = bound.forward(&y, &u, &h).unwrap();
                h = hn;
                let term = mu.sum().add(&var.sum()).unwrap();
                total = Some(match total {
                    None => term,
                    Some(acc) => acc.add(&term).unwrap(),
                });
            }
            let loss = total.unwrap();
            if want_grads {
                loss.backward().unwrap();
                let grads = bound.leaves.iter().map(|l| l.grad()).collect();
                (loss.scalar_value(), grads)
            } else {
                (loss.scalar_value(), Vec::new())
            }
        };
        let (_, ad) = run(&model, true);
        let mut eval = |p: &ParamSet| {
            let mut m = model.clone();
            *m.params_mut() = p.clone();
            run(&m, false).0
        };
        worst = worst.max(check_params(model.params(), &ad, &mut eval));
        cases += 1;
    }

    // Policy: d sum(u) / d theta over 2 mean-mode steps.
    {
        let model = PolicyModel::new(6, 1.0, &InitConfig::default(), &mut init_rng);
        let xs: Vec<Vec<f64>> = (0..2).map(|_| rand_data(&mut data_rng, 8, -0.8, 0.8)).collect();
        let tg = rand_data(&mut data_rng, 8, -0.7, 0.7);
        let run = |m: &PolicyModel, want_grads: bool| -> (f64, Vec<Option<Vec<f64>>>) {
            let tape = Tape::new();
            let bound = m.bind(&tape, true);
            let mut h = bound.initial_hidden(2);
            let mut rgn = stream(seed, Purpose::Test, &[302]);
            let mut total: Option<Tensor> = None;
            for t in 0..2 {
                let x = tape.constant(&[2, 4], xs[t].clone()).unwrap();
                let g = tape.constant(&[2, 4], tg.clone()).unwrap();
                let (u, _, _, hn) = bound.forward(&x, &g, &h, &mut rgn, ActionMode::Mean).unwrap();
                h = hn;
                let term = u.sum();
                total = Some(match total {
                    None => term,
                    Some(acc) => acc.add(&term).unwrap(),
                });
            }
            let loss = total.unwrap();
            if want_grads {
                loss.backward().unwrap();
                (loss.scalar_value(), bound.leaves.iter().map(|l| l.grad()).collect())
            } else {
                (loss.scalar_value(), Vec::new())
            }
        };
        let (_, ad) = run(&model, true);
        let mut eval = |p: &ParamSet| {
            let mut m = model.clone();
            *m.params_mut() = p.clone();
            run(&m, false).0
        };
        worst = worst.max(check_params(model.params(), &ad, &mut eval));
        cases += 1;
    }

    // Sampled state estimate: d sum(x_hat) / d u_prev must exist and match.
    {
        let model = TransitionModel::new(6, &InitConfig::default(), &mut init_rng);
        let y = rand_data(&mut data_rng, 4, -0.5, 0.5);
        let u = rand_data(&mut data_rng, 2, -0.5, 0.5);
        let noise_seed = data_rng.random::<u64>();
        let inputs = [(vec![1, 2], u)];
        let y_c = y.clone();
        let e = check_case(&inputs, &|tape, xs| {
            let bound = model.bind(tape, false);
            let h = bound.initial_hidden(1);
            let yy = tape.constant(&[1, 4], y_c.clone()).unwrap();
            let mut noise = stream(noise_seed, Purpose::ModelSampling, &[0]);
            let (x_hat, _, _, _) = bound.predict_state(&yy, &xs[0], &h, &mut noise).unwrap();
            x_hat.sum()
        });
        worst = worst.max(e);
        cases += 1;
    }

    SuiteResult {
        name: "nets",
        max_rel_err: worst,
        cases,
        threshold: 1e-4,
    }
}

/// A 20-step recurrent unroll: gradients must survive backpropagation
/// through the whole chain.
pub fn suite_bptt(seed: u64) -> SuiteResult {
    let mut init_rng = stream(seed, Purpose::Init, &[400]);
    let mut data_rng = stream(seed, Purpose::Test, &[401]);
    let model = TransitionModel::new(4, &InitConfig::default(), &mut init_rng);
    let steps = 20;
    let ys: Vec<Vec<f64>> = (0..steps).map(|_| rand_data(&mut data_rng, 4, -0.8, 0.8)).collect();
    let us: Vec<Vec<f64>> = (0..steps).map(|_| rand_data(&mut data_rng, 2, -0.8, 0.8)).collect();

    let run = |m: &TransitionModel, want_grads: bool| -> (f64, Vec<Option<Vec<f64>>>) {
        let tape = Tape::new();
        let bound = m.bind(&tape, true);
        let mut h = bound.initial_hidden(1);
        let mut total: Option<Tensor> = None;
        for t in 0..steps {
            let y = tape.constant(&[1, 4], ys[t].clone()).unwrap();
            let u = tape.constant(&[1, 2], us[t].clone()).unwrap();
            let (mu, _, hn) = bound.forward(&y, &u, &h).unwrap();
            h = hn;
            let term = mu.square().sum();
            total = Some(match total {
                None => term,
                Some(acc) => acc.add(&term).unwrap(),
            });
        }
        let loss = total.unwrap();
        if want_grads {
            loss.backward().unwrap();
            (loss.scalar_value(), bound.leaves.iter().map(|l| l.grad()).collect())
        } else {
            (loss.scalar_value(), Vec::new())
        }
    };
    let (_, ad) = run(&model, true);
    let mut eval = |p: &ParamSet| {
        let mut m = model.clone();
        *m.params_mut() = p.clone();
        run(&m, false).0
    };
    let worst = check_params(model.params(), &ad, &mut eval);

    SuiteResult {
        name: "bptt-20-step",
        max_rel_err: worst,
        cases: 1,
        threshold: 1e-4,
    }
}

/// The chained policy -> transition imagined rollout over five steps, the
/// exact gradient path policy training relies on. Long chains accumulate
/// floating-point error, hence the looser threshold.
pub fn suite_rollout(seed: u64) -> SuiteResult {
    let mut init_rng = stream(seed, Purpose::Init, &[500]);
    let mut data_rng = stream(seed, Purpose::Test, &[501]);
    let transition = TransitionModel::new(6, &InitConfig::default(), &mut init_rng);
    let policy = PolicyModel::new(6, 1.0, &InitConfig::default(), &mut init_rng);
    let warm = 3;
    let unroll = 5;
    let ys: Vec<Vec<f64>> = (0..warm).map(|_| rand_data(&mut data_rng, 4, -0.6, 0.6)).collect();
    let us: Vec<Vec<f64>> = (0..warm).map(|_| rand_data(&mut data_rng, 2, -0.6, 0.6)).collect();
    let target = rand_data(&mut data_rng, 4, -0.7, 0.7);
    let noise_seed = data_rng.random::<u64>();

    let run = |p: &PolicyModel, want_grads: bool| -> (f64, Vec<Option<Vec<f64>>>) {
        let tape = Tape::new();
        let bt = transition.bind(&tape, false);
        let bp = p.bind(&tape, true);
        let mut noise = stream(noise_seed, Purpose::ModelSampling, &[1]);
        let mut h_t = bt.initial_hidden(1);
        let mut h_p = bp.initial_hidden(1);
        let tgt = tape.constant(&[1, 4], target.clone()).unwrap();
        let mut x_hat = tape.constant(&[1, 4], ys[0].clone()).unwrap();
        for t in 0..warm {
            let y = tape.constant(&[1, 4], ys[t].clone()).unwrap();
            let u = tape.constant(&[1, 2], us[t].clone()).unwrap();
            let (xh, _, _, hn) = bt.predict_state(&y, &u, &h_t, &mut noise).unwrap();
            h_t = hn;
            x_hat = xh;
            let (_, _, _, hp) = bp.forward(&y, &tgt, &h_p, &mut noise, ActionMode::Mean).unwrap();
            h_p = hp;
        }
        let mut imagined = Vec::new();
        for _ in 0..unroll {
            let (u, _, _, hp) = bp
                .forward(&x_hat, &tgt, &h_p, &mut noise, ActionMode::Sample)
                .unwrap();
            h_p = hp;
            let (xh, _, _, hn) = bt.predict_state(&x_hat, &u, &h_t, &mut noise).unwrap();
            h_t = hn;
            x_hat = xh;
            imagined.push(x_hat.clone());
        }
        let refs: Vec<&Tensor> = imagined.iter().collect();
        let stacked = Tensor::concat(&refs).unwrap().reshape(&[1, unroll, 4]).unwrap();
        let loss = policy_loss(&stacked, &tgt, TargetGain::position_only()).unwrap();
        if want_grads {
            loss.backward().unwrap();
            (loss.scalar_value(), bp.leaves.iter().map(|l| l.grad()).collect())
        } else {
            (loss.scalar_value(), Vec::new())
        }
    };

    let (_, ad) = run(&policy, true);
    let mut eval = |p: &ParamSet| {
        let mut m = policy.clone();
        *m.params_mut() = p.clone();
        run(&m, false).0
    };
    let worst = check_params(policy.params(), &ad, &mut eval);

    SuiteResult {
        name: "policy-rollout-5-step",
        max_rel_err: worst,
        cases: 1,
        threshold: 1e-3,
    }
}

/// Runs every suite. `corrupt` deliberately biases one reported error so
/// harness sensitivity can be exercised end to end.
pub fn run_all(seed: u64, corrupt: bool) -> GradcheckReport {
    let mut suites = vec![
        suite_primitives(seed),
        suite_losses(seed),
        suite_nets(seed),
        suite_bptt(seed),
        suite_rollout(seed),
    ];
    if corrupt {
        suites[0].max_rel_err += 1e-2;
    }
    GradcheckReport { suites }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primitives_match_finite_differences() {
        let s = suite_primitives(12345);
        assert!(s.passed(), "{}: {:.3e}", s.name, s.max_rel_err);
    }

    #[test]
    fn losses_match_finite_differences() {
        let s = suite_losses(12345);
        assert!(s.passed(), "{}: {:.3e}", s.name, s.max_rel_err);
    }

    #[test]
    fn net_parameter_gradients_match() {
        let s = suite_nets(12345);
        assert!(s.passed(), "{}: {:.3e}", s.name, s.max_rel_err);
    }

    #[test]
    fn twenty_step_unroll_matches() {
        let s = suite_bptt(12345);
        assert!(s.passed(), "{}: {:.3e}", s.name, s.max_rel_err);
    }

    #[test]
    fn chained_rollout_matches() {
        let s = suite_rollout(12345);
        assert!(s.passed(), "{}: {:.3e}", s.name, s.max_rel_err);
    }

    #[test]
    fn corrupt_hook_fails_the_report() {
        assert!(run_all(7, false).passed());
        assert!(!run_all(7, true).passed());
    }

    #[test]
    fn report_is_deterministic() {
        let a = run_all(99, false);
        let b = run_all(99, false);
        for (x, y) in a.suites.iter().zip(b.suites.iter()) {
            assert_eq!(x.max_rel_err.to_bits(), y.max_rel_err.to_bits());
        }
    }
}
