//! Central finite-difference check of reverse-mode gradients.

use super::{Graph, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, 1e-3)`.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub coordinates: usize,
}

/// Compares the gradient of the scalar built by `f` against central
/// differences with step `delta`. At most `max_coords` evenly spaced
/// coordinates of each parameter are probed (`None` probes all).
pub fn grad_check<F>(f: F, params: &[Tensor], delta: f64, max_coords: Option<usize>) -> GradCheckReport
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let eval = |ps: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.constant(p.clone())).collect();
        let out = f(&mut g, &vars);
        g.value(out).item()
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let out = f(&mut g, &vars);
    let grads = g.backward(out);
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| grads.get_or_zeros(v, p))
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        coordinates: 0,
    };
    let mut probe = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        let n = p.len();
        let count = max_coords.map_or(n, |m| m.min(n));
        for c in 0..count {
            let idx = if count == n { c } else { c * n / count };
            let orig = p.data()[idx];
            probe[pi].data_mut()[idx] = orig + delta;
            let plus = eval(&probe);
            probe[pi].data_mut()[idx] = orig - delta;
            let minus = eval(&probe);
            probe[pi].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * delta);
            let a = analytic[pi].data()[idx];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(1e-3);
            report.max_abs_error = report.max_abs_error.max(abs);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.coordinates += 1;
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    #[test]
    fn quadratic() {
        let x = Tensor::new(vec![5], vec![0.3, -1.2, 2.5, 0.01, -0.7]);
        let r = grad_check(
            |g, v| {
                let s = g.square(v[0]);
                g.sum(s)
            },
            &[x],
            1e-5,
            None,
        );
        assert!(r.max_rel_error < 1e-7, "{r:?}");
    }

    #[test]
    fn constant_function() {
        let x = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]);
        let r = grad_check(
            |g, _| g.constant(Tensor::scalar(4.0)),
            &[x],
            1e-5,
            None,
        );
        assert_eq!(r.max_abs_error, 0.0);
        assert_eq!(r.max_rel_error, 0.0);
    }

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn elementwise_and_reductions(seed in 0u64..10_000, n in 1usize..6, m in 1usize..5) {
            let mut r = rng(seed);
            let a = Tensor::randn(&[n, m], 1.0, &mut r);
            let b = Tensor::randn(&[n, m], 1.0, &mut r);
            let pos = Tensor::randn(&[n, m], 0.3, &mut r).map(|v| v.abs() + 0.5);
            let rep = grad_check(|g, v| {
                let s = g.add(v[0], v[1]);
                let d = g.sub(s, v[1]);
                let p = g.mul(d, v[1]);
                let t = g.tanh(p);
                let sg = g.sigmoid(v[0]);
                let e = g.exp(sg);
                let l = g.ln(v[2]);
                let c = g.clamp(v[1], -0.5, 0.5);
                let q = g.square(c);
                let k = g.scale(q, 1.7);
                let k = g.add_scalar(k, 0.3);
                let u = g.add(t, e);
                let u = g.add(u, l);
                let u = g.residual_add(u, k);
                let sum = g.sum(u);
                let mean = g.mean(e);
                g.add(sum, mean)
            }, &[a, b, pos], 1e-6, None);
            prop_assert!(rep.max_rel_error < 1e-4, "{:?}", rep);
        }

        #[test]
        fn relu_and_matmul_and_linear(seed in 0u64..10_000, n in 1usize..4, k in 1usize..5, o in 1usize..4) {
            let mut r = rng(seed);
            let a = Tensor::randn(&[n, k], 1.0, &mut r);
            let b = Tensor::randn(&[k, o], 1.0, &mut r);
            let w = Tensor::randn(&[o, k], 1.0, &mut r);
            let bias = Tensor::randn(&[o], 1.0, &mut r);
            let rep = grad_check(|g, v| {
                let mm = g.matmul(v[0], v[1]);
                let lin = g.linear(v[0], v[2], Some(v[3]));
                let s = g.add(mm, lin);
                let rl = g.relu(s);
                let sq = g.square(rl);
                let flat = g.reshape(sq, &[n * o]);
                g.sum(flat)
            }, &[a, b, w, bias], 1e-6, None);
            prop_assert!(rep.max_rel_error < 1e-4, "{:?}", rep);
        }

        #[test]
        fn convolutions(seed in 0u64..10_000, n in 1usize..3, cin in 1usize..3, cout in 1usize..3, hw in 3usize..7, stride in 1usize..3) {
            let mut r = rng(seed);
            let x = Tensor::randn(&[n, cin, hw, hw], 1.0, &mut r);
            let w = Tensor::randn(&[cout, cin, 3, 3], 0.5, &mut r);
            let b = Tensor::randn(&[cout], 0.5, &mut r);
            let wt = Tensor::randn(&[cout, cin, 4, 4], 0.5, &mut r);
            let bt = Tensor::randn(&[cin], 0.5, &mut r);
            let rep = grad_check(|g, v| {
                let y = g.conv2d(v[0], v[1], Some(v[2]), stride, 1);
                let t = g.tanh(y);
                let up = g.conv_transpose2d(t, v[3], Some(v[4]), 2, 1);
                let s = g.sigmoid(up);
                g.sum(s)
            }, &[x, w, b, wt, bt], 1e-5, None);
            prop_assert!(rep.max_rel_error < 1e-4, "{:?}", rep);
        }
    }
}
