use ndarray::{Array2, Array4, ArrayD, Axis, Ix4, IxDyn};

use super::params::{ParamId, ParamStore};

pub type Tensor = ArrayD<f32>;

type Backward = Box<dyn Fn(&Tensor) -> Vec<Tensor>>;

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    backward: Option<Backward>,
    param: Option<ParamId>,
}

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Tape of one forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every recorded value.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(usize, ParamId)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradients of parameter leaves; a parameter used twice appears twice.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params
            .iter()
            .filter_map(|&(node, id)| self.grads[node].as_ref().map(|g| (id, g)))
    }
}

fn as4(t: &Tensor) -> ndarray::ArrayView4<'_, f32> {
    t.view()
        .into_dimensionality::<Ix4>()
        .expect("expected an NxCxHxW tensor")
}

pub(crate) fn scalar(v: f32) -> Tensor {
    ArrayD::from_elem(IxDyn(&[]), v)
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, parents: &[Var], backward: Option<Backward>) -> Var {
        self.nodes.push(Node {
            value,
            parents: parents.iter().map(|v| v.0).collect(),
            backward,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, &[], None)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let v = self.push(store.value(id).clone(), &[], None);
        self.nodes[v.0].param = Some(id);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Records an operation with a hand-written backward rule. `backward`
    /// receives the output gradient and returns one gradient per parent,
    /// each shaped like that parent.
    pub fn custom<F>(&mut self, parents: &[Var], value: Tensor, backward: F) -> Var
    where
        F: Fn(&Tensor) -> Vec<Tensor> + 'static,
    {
        self.push(value, parents, Some(Box::new(backward)))
    }

    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::ones(self.nodes[root.0].value.raw_dim()));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[i].take() else {
                continue;
            };
            let parent_grads = backward(&g);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                debug_assert_eq!(pg.shape(), self.nodes[p].value.shape());
                match &mut grads[p] {
                    Some(acc) => *acc += &pg,
                    slot => *slot = Some(pg),
                }
            }
            grads[i] = Some(g);
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.map(|id| (i, id)))
            .collect();
        Gradients { grads, params }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.custom(&[a, b], value, |g| vec![g.clone(), g.clone()])
    }

    pub fn scale(&mut self, a: Var, s: f32) -> Var {
        let value = self.value(a) * s;
        self.custom(&[a], value, move |g| vec![g * s])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f32) -> Var {
        let input = self.value(x).clone();
        let value = input.mapv(|v| if v > 0.0 { v } else { slope * v });
        self.custom(&[x], value, move |g| {
            let mut dx = g.clone();
            ndarray::Zip::from(&mut dx).and(&input).for_each(|d, &v| {
                if v <= 0.0 {
                    *d *= slope;
                }
            });
            vec![dx]
        })
    }

    /// Concatenation along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Var {
        let ca = self.shape(a)[1];
        let value = ndarray::concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()])
            .expect("concat requires matching N, H, W");
        self.custom(&[a, b], value, move |g| {
            let (ga, gb) = g.view().split_at(Axis(1), ca);
            vec![ga.to_owned(), gb.to_owned()]
        })
    }

    /// Cross-correlation with square `k×k` kernels. `w` is `Co×Ci×k×k`, `b` is `Co`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let xs = as4(self.value(x));
        let (n, ci, h, wd) = xs.dim();
        let ws = as4(self.value(w));
        let (co, wci, k, k2) = ws.dim();
        assert_eq!(wci, ci, "conv2d channel mismatch");
        assert_eq!(k, k2);
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let geom = ConvGeom {
            n,
            c: ci,
            h,
            w: wd,
            k,
            stride,
            pad,
            ho,
            wo,
        };
        let cols = im2col(&xs.as_standard_layout().view(), &geom);
        let wm = ws
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((co, ci * k * k))
            .unwrap();
        let mut y2 = wm.dot(&cols);
        let bias = self.value(b).clone();
        for (mut row, &bv) in y2.axis_iter_mut(Axis(0)).zip(bias.iter()) {
            row += bv;
        }
        let value = cols_to_nchw(y2, co, n, ho, wo);
        self.custom(&[x, w, b], value, move |g| {
            let dy2 = nchw_to_cols(g);
            let dw = dy2
                .dot(&cols.t())
                .into_shape_with_order((co, ci, k, k))
                .unwrap()
                .into_dyn();
            let db = dy2.sum_axis(Axis(1)).into_dyn();
            let dcols = wm.t().dot(&dy2);
            let dx = col2im(&dcols, &geom).into_dyn();
            vec![dx, dw, db]
        })
    }

    /// Stride-2 transposed convolution with a 2×2 kernel (exact ×2 upsampling).
    /// `w` is `Ci×Co×2×2`, `b` is `Co`.
    pub fn conv_transpose2x2(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xs = as4(self.value(x));
        let (n, ci, h, wd) = xs.dim();
        let ws = as4(self.value(w));
        let (wci, co, _, _) = ws.dim();
        assert_eq!(wci, ci, "conv_transpose channel mismatch");
        let xm = nchw_to_cols(&xs.to_owned().into_dyn());
        let wm = Array2::from_shape_fn((co * 4, ci), |(r, c)| ws[[c, r / 4, (r % 4) / 2, r % 2]]);
        let y2 = wm.dot(&xm);
        let bias = self.value(b).clone();
        let mut out = Array4::<f32>::zeros((n, co, 2 * h, 2 * wd));
        for b_ in 0..n {
            for o in 0..co {
                for i in 0..h {
                    for j in 0..wd {
                        let col = (b_ * h + i) * wd + j;
                        for d in 0..4 {
                            out[[b_, o, 2 * i + d / 2, 2 * j + d % 2]] = y2[[o * 4 + d, col]] + bias[o];
                        }
                    }
                }
            }
        }
        self.custom(&[x, w, b], out.into_dyn(), move |g| {
            let g4 = as4(g);
            let dy2 = Array2::from_shape_fn((co * 4, n * h * wd), |(r, col)| {
                let (b_, rem) = (col / (h * wd), col % (h * wd));
                let (i, j) = (rem / wd, rem % wd);
                g4[[b_, r / 4, 2 * i + (r % 4) / 2, 2 * j + r % 2]]
            });
            let dwm = dy2.dot(&xm.t());
            let dw = Array4::from_shape_fn((ci, co, 2, 2), |(c, o, di, dj)| dwm[[o * 4 + di * 2 + dj, c]]);
            let db = ndarray::Array1::from_shape_fn(co, |o| {
                (0..4).map(|d| dy2.row(o * 4 + d).sum()).sum::<f32>()
            });
            let dxm = wm.t().dot(&dy2);
            let dx = cols_to_nchw(dxm, ci, n, h, wd);
            vec![dx, dw.into_dyn(), db.into_dyn()]
        })
    }

    /// Per-sample, per-channel normalization over the spatial extent, followed
    /// by a per-channel affine map.
    pub fn instance_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f32) -> Var {
        let xs = as4(self.value(x)).to_owned();
        let (n, c, h, w) = xs.dim();
        let m = (h * w) as f32;
        let gam = self.value(gamma).clone();
        let bet = self.value(beta).clone();
        let mut xhat = Array4::<f32>::zeros((n, c, h, w));
        let mut inv_std = Array2::<f32>::zeros((n, c));
        for b in 0..n {
            for ch in 0..c {
                let plane = xs.slice(ndarray::s![b, ch, .., ..]);
                let mean = plane.sum() / m;
                let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / m;
                let is = 1.0 / (var + eps).sqrt();
                inv_std[[b, ch]] = is;
                xhat.slice_mut(ndarray::s![b, ch, .., ..])
                    .assign(&plane.mapv(|v| (v - mean) * is));
            }
        }
        let mut value = xhat.clone();
        for b in 0..n {
            for ch in 0..c {
                value
                    .slice_mut(ndarray::s![b, ch, .., ..])
                    .mapv_inplace(|v| v * gam[ch] + bet[ch]);
            }
        }
        self.custom(&[x, gamma, beta], value.into_dyn(), move |g| {
            let g4 = as4(g);
            let mut dx = Array4::<f32>::zeros((n, c, h, w));
            let mut dgamma = ndarray::Array1::<f32>::zeros(c);
            let mut dbeta = ndarray::Array1::<f32>::zeros(c);
            for b in 0..n {
                for ch in 0..c {
                    let gp = g4.slice(ndarray::s![b, ch, .., ..]);
                    let xp = xhat.slice(ndarray::s![b, ch, .., ..]);
                    let sum_g: f32 = gp.sum();
                    let sum_gx: f32 = gp.iter().zip(xp.iter()).map(|(a, b)| a * b).sum();
                    dgamma[ch] += sum_gx;
                    dbeta[ch] += sum_g;
                    let scale = gam[ch] * inv_std[[b, ch]] / m;
                    let mut dp = dx.slice_mut(ndarray::s![b, ch, .., ..]);
                    ndarray::Zip::from(&mut dp)
                        .and(&gp)
                        .and(&xp)
                        .for_each(|d, &gv, &xv| *d = scale * (m * gv - sum_g - xv * sum_gx));
                }
            }
            vec![dx.into_dyn(), dgamma.into_dyn(), dbeta.into_dyn()]
        })
    }

    /// Mean over a set of values of the sum of each value's entries.
    pub fn mean_scalars(&mut self, xs: &[Var]) -> Var {
        let k = xs.len() as f32;
        let total: f32 = xs.iter().map(|&v| self.value(v).sum()).sum();
        let dims: Vec<_> = xs.iter().map(|&v| self.value(v).raw_dim()).collect();
        self.custom(xs, scalar(total / k), move |g| {
            let gv = g.sum() / k;
            dims.iter().map(|d| Tensor::from_elem(d.clone(), gv)).collect()
        })
    }
}

#[derive(Clone, Copy)]
struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

/// `(C·k·k) × (N·Ho·Wo)` patch matrix.
fn im2col(x: &ndarray::ArrayView4<'_, f32>, g: &ConvGeom) -> Array2<f32> {
    let xs = x.as_slice().expect("standard layout");
    let ncols = g.n * g.ho * g.wo;
    let mut out = vec![0.0f32; g.c * g.k * g.k * ncols];
    for ci in 0..g.c {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (ci * g.k + ki) * g.k + kj;
                let base = row * ncols;
                for b in 0..g.n {
                    for oh in 0..g.ho {
                        let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                        if ih < 0 || ih >= g.h as isize {
                            continue;
                        }
                        let src = ((b * g.c + ci) * g.h + ih as usize) * g.w;
                        let dst = base + (b * g.ho + oh) * g.wo;
                        for ow in 0..g.wo {
                            let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                            if iw >= 0 && iw < g.w as isize {
                                out[dst + ow] = xs[src + iw as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((g.c * g.k * g.k, ncols), out).unwrap()
}

/// Adjoint of [`im2col`].
fn col2im(cols: &Array2<f32>, g: &ConvGeom) -> Array4<f32> {
    let cols = cols.as_standard_layout();
    let cs = cols.as_slice().unwrap();
    let ncols = g.n * g.ho * g.wo;
    let mut out = vec![0.0f32; g.n * g.c * g.h * g.w];
    for ci in 0..g.c {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let base = ((ci * g.k + ki) * g.k + kj) * ncols;
                for b in 0..g.n {
                    for oh in 0..g.ho {
                        let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                        if ih < 0 || ih >= g.h as isize {
                            continue;
                        }
                        let dst = ((b * g.c + ci) * g.h + ih as usize) * g.w;
                        let src = base + (b * g.ho + oh) * g.wo;
                        for ow in 0..g.wo {
                            let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                            if iw >= 0 && iw < g.w as isize {
                                out[dst + iw as usize] += cs[src + ow];
                            }
                        }
                    }
                }
            }
        }
    }
    Array4::from_shape_vec((g.n, g.c, g.h, g.w), out).unwrap()
}

/// `N×C×H×W` → `C × (N·H·W)`.
fn nchw_to_cols(t: &Tensor) -> Array2<f32> {
    let t4 = as4(t);
    let (n, c, h, w) = t4.dim();
    t4.permuted_axes([1, 0, 2, 3])
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((c, n * h * w))
        .unwrap()
}

/// `C × (N·H·W)` → `N×C×H×W`.
fn cols_to_nchw(m: Array2<f32>, c: usize, n: usize, h: usize, w: usize) -> Tensor {
    m.into_shape_with_order((c, n, h, w))
        .unwrap()
        .permuted_axes([1, 0, 2, 3])
        .as_standard_layout()
        .into_owned()
        .into_dyn()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_shape_fn(IxDyn(shape), |_| rng.random_range(-1.0f32..1.0))
    }

    /// Checks d(Σ r⊙f(inputs))/d(input) against central differences in f64
    /// accumulation of f32 evaluations.
    fn check_op<F>(shapes: &[&[usize]], build: F)
    where
        F: Fn(&mut Graph, &[Var]) -> Var,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let inputs: Vec<Tensor> = shapes.iter().map(|s| random(s, &mut rng)).collect();
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let out = build(&mut g, &vars);
        let probe = random(g.shape(out), &mut rng);
        let probe_var = g.input(probe.clone());
        let loss = {
            let pv = g.value(out) * g.value(probe_var);
            let p = probe.clone();
            g.custom(&[out], scalar(pv.sum()), move |gr| vec![&p * gr.sum()])
        };
        let grads = g.backward(loss);
        let eval = |ins: &[Tensor]| -> f64 {
            let mut g = Graph::new();
            let vars: Vec<Var> = ins.iter().map(|t| g.input(t.clone())).collect();
            let out = build(&mut g, &vars);
            g.value(out)
                .iter()
                .zip(probe.iter())
                .map(|(a, b)| (*a as f64) * (*b as f64))
                .sum()
        };
        let h = 1e-2f32;
        for (k, var) in vars.iter().enumerate() {
            let analytic = grads.get(*var).expect("gradient reaches input");
            for idx in (0..inputs[k].len()).step_by(3) {
                let mut plus = inputs.clone();
                let mut minus = inputs.clone();
                plus[k].as_slice_mut().unwrap()[idx] += h;
                minus[k].as_slice_mut().unwrap()[idx] -= h;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * h as f64);
                let an = analytic.as_slice().unwrap()[idx] as f64;
                assert!(
                    (fd - an).abs() <= 2e-2 * (1.0 + fd.abs()),
                    "input {k} index {idx}: fd {fd} vs analytic {an}"
                );
            }
        }
    }

    #[test]
    fn conv2d_gradients() {
        check_op(&[&[2, 3, 5, 5], &[4, 3, 3, 3], &[4]], |g, v| g.conv2d(v[0], v[1], v[2], 1, 1));
        check_op(&[&[1, 2, 6, 6], &[3, 2, 2, 2], &[3]], |g, v| g.conv2d(v[0], v[1], v[2], 2, 0));
        check_op(&[&[2, 2, 4, 4], &[3, 2, 1, 1], &[3]], |g, v| g.conv2d(v[0], v[1], v[2], 1, 0));
    }

    #[test]
    fn conv_transpose_gradients() {
        check_op(&[&[2, 3, 3, 2], &[3, 2, 2, 2], &[2]], |g, v| g.conv_transpose2x2(v[0], v[1], v[2]));
    }

    #[test]
    fn norm_and_activation_gradients() {
        check_op(&[&[2, 3, 4, 4], &[3], &[3]], |g, v| g.instance_norm(v[0], v[1], v[2], 1e-5));
        check_op(&[&[2, 3, 4, 4]], |g, v| g.leaky_relu(v[0], 0.1));
        check_op(&[&[1, 2, 3, 3], &[1, 3, 3, 3]], |g, v| g.concat_channels(v[0], v[1]));
        check_op(&[&[1, 2, 3, 3], &[1, 2, 3, 3]], |g, v| {
            let s = g.add(v[0], v[1]);
            g.scale(s, 1.5)
        });
    }

    #[test]
    fn conv2d_matches_direct_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&[1, 2, 5, 4], &mut rng);
        let w = random(&[3, 2, 3, 3], &mut rng);
        let b = random(&[3], &mut rng);
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.input(x.clone()), g.input(w.clone()), g.input(b.clone()));
        let y = g.conv2d(xv, wv, bv, 2, 1);
        let y = g.value(y);
        assert_eq!(y.shape(), &[1, 3, 3, 2]);
        for o in 0..3 {
            for i in 0..3 {
                for j in 0..2 {
                    let mut acc = b[[o]];
                    for c in 0..2 {
                        for ki in 0..3 {
                            for kj in 0..3 {
                                let (ih, iw) = (2 * i + ki, 2 * j + kj);
                                if ih >= 1 && ih <= 5 && iw >= 1 && iw <= 4 {
                                    acc += x[[0, c, ih - 1, iw - 1]] * w[[o, c, ki, kj]];
                                }
                            }
                        }
                    }
                    assert!((y[[0, o, i, j]] - acc).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn shared_parents_accumulate() {
        let mut g = Graph::new();
        let x = g.input(Tensor::from_elem(IxDyn(&[1, 1, 1, 1]), 2.0));
        let y = g.add(x, x);
        let s = g.mean_scalars(&[y]);
        let grads = g.backward(s);
        assert_eq!(grads.get(x).unwrap()[[0, 0, 0, 0]], 2.0);
    }
}
