//! Dense multilayer perceptron with PReLU hidden activations.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::kernels;
use crate::nn::params::{LayoutBuilder, Params};
use crate::nn::tape::{ParamLeaves, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// PReLU with a learnable per-layer slope (initialized at 0.25).
    PRelu,
    Linear,
}

/// Layer sizes and activation of a dense network.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    pub activation: Activation,
}

impl MlpSpec {
    /// The critic architecture used throughout: four hidden layers of 200
    /// PReLU units and a scalar output.
    pub fn critic(input: usize) -> Self {
        MlpSpec {
            input,
            hidden: vec![200; 4],
            output: 1,
            activation: Activation::PRelu,
        }
    }

    /// (in, out) dims of every affine layer, hidden layers first.
    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input;
        for &h in &self.hidden {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.output));
        dims
    }

    pub fn extend_layout(&self, mut b: LayoutBuilder, prefix: &str) -> LayoutBuilder {
        let dims = self.layer_dims();
        let last = dims.len() - 1;
        for (i, (ins, outs)) in dims.into_iter().enumerate() {
            b = b
                .matrix(&format!("{prefix}l{i}.w"), outs, ins)
                .vector(&format!("{prefix}l{i}.b"), outs);
            if i < last && self.activation == Activation::PRelu {
                b = b.scalar(&format!("{prefix}l{i}.a"));
            }
        }
        b
    }

    /// Seeded uniform init scaled by fan-in; PReLU slopes start at 0.25.
    pub fn init_segments<R: Rng>(&self, params: &mut Params, prefix: &str, rng: &mut R) {
        let dims = self.layer_dims();
        let last = dims.len() - 1;
        for (i, (ins, _)) in dims.into_iter().enumerate() {
            let bound = (1.0 / ins as f64).sqrt();
            for w in params.segment_mut(&format!("{prefix}l{i}.w")).unwrap() {
                *w = rng.gen_range(-bound..bound);
            }
            // biases stay zero
            if i < last && self.activation == Activation::PRelu {
                params.segment_mut(&format!("{prefix}l{i}.a")).unwrap()[0] = 0.25;
            }
        }
    }

    /// Plain forward pass; errors name the offending segment on a dim mismatch.
    pub fn forward(&self, params: &Params, prefix: &str, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input {
            return Err(Error::Dimension {
                segment: format!("{prefix}input"),
                expected: self.input,
                got: input.len(),
            });
        }
        let dims = self.layer_dims();
        let last = dims.len() - 1;
        let mut x = input.to_vec();
        for (i, (ins, outs)) in dims.into_iter().enumerate() {
            let w = params.segment(&format!("{prefix}l{i}.w"))?;
            let b = params.segment(&format!("{prefix}l{i}.b"))?;
            if w.len() != ins * outs {
                return Err(Error::Dimension {
                    segment: format!("{prefix}l{i}.w"),
                    expected: ins * outs,
                    got: w.len(),
                });
            }
            let mut z = vec![0.0; outs];
            kernels::matvec_into(w, &x, outs, ins, &mut z);
            for (zk, bk) in z.iter_mut().zip(b) {
                *zk += bk;
            }
            if i < last && self.activation == Activation::PRelu {
                let slope = params.segment(&format!("{prefix}l{i}.a"))?[0];
                for zk in z.iter_mut() {
                    *zk = kernels::prelu(*zk, slope);
                }
            }
            x = z;
        }
        Ok(x)
    }

    /// Builds the same forward pass on the tape; returns the output node.
    pub fn graph(&self, tape: &mut Tape, leaves: &ParamLeaves, prefix: &str, input: Var) -> Var {
        let dims = self.layer_dims();
        let last = dims.len() - 1;
        let mut x = input;
        for (i, (ins, outs)) in dims.into_iter().enumerate() {
            let w = leaves.get(&format!("{prefix}l{i}.w"));
            let b = leaves.get(&format!("{prefix}l{i}.b"));
            let z = tape.matvec(w, x, outs, ins);
            let z = tape.add(z, b);
            x = if i < last && self.activation == Activation::PRelu {
                let slope = leaves.get(&format!("{prefix}l{i}.a"));
                tape.prelu(z, slope)
            } else {
                z
            };
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::Layout;
    use crate::nn::tape;
    use crate::rng;

    fn identity_mlp(n: usize, layers: usize) -> (MlpSpec, Params) {
        let spec = MlpSpec {
            input: n,
            hidden: vec![n; layers],
            output: n,
            activation: Activation::Linear,
        };
        let layout = spec.extend_layout(Layout::builder(), "").build();
        let mut params = Params::zeros(layout);
        for i in 0..=layers {
            let w = params.segment_mut(&format!("l{i}.w")).unwrap();
            for r in 0..n {
                w[r * n + r] = 1.0;
            }
        }
        (spec, params)
    }

    #[test]
    fn identity_weights_linear_activation_pass_input_through() {
        let (spec, params) = identity_mlp(3, 4);
        let out = spec.forward(&params, "", &[0.5, -2.0, 7.25]).unwrap();
        assert_eq!(out, vec![0.5, -2.0, 7.25]);
    }

    #[test]
    fn prelu_negative_branch_scales_by_slope() {
        // One 1x1 "hidden" layer with identity weight exposes the activation.
        let spec = MlpSpec {
            input: 1,
            hidden: vec![1],
            output: 1,
            activation: Activation::PRelu,
        };
        let layout = spec.extend_layout(Layout::builder(), "").build();
        let mut params = Params::zeros(layout);
        params.segment_mut("l0.w").unwrap()[0] = 1.0;
        params.segment_mut("l0.a").unwrap()[0] = 0.25;
        params.segment_mut("l1.w").unwrap()[0] = 1.0;
        let out = spec.forward(&params, "", &[-2.0]).unwrap();
        assert_eq!(out, vec![-0.5]);
    }

    #[test]
    fn forward_matches_independent_reference_chain() {
        // Reference forward written as its own matrix-multiply chain.
        fn reference(spec: &MlpSpec, params: &Params, input: &[f64]) -> Vec<f64> {
            let mut x = input.to_vec();
            let mut prev = spec.input;
            for (i, &h) in spec.hidden.iter().enumerate() {
                let w = params.segment(&format!("l{i}.w")).unwrap();
                let b = params.segment(&format!("l{i}.b")).unwrap();
                let a = params.segment(&format!("l{i}.a")).unwrap()[0];
                let mut z = vec![0.0; h];
                for r in 0..h {
                    let mut acc = b[r];
                    for (c, xc) in x.iter().enumerate() {
                        acc += w[r * prev + c] * xc;
                    }
                    z[r] = if acc > 0.0 { acc } else { a * acc };
                }
                x = z;
                prev = h;
            }
            let i = spec.hidden.len();
            let w = params.segment(&format!("l{i}.w")).unwrap();
            let b = params.segment(&format!("l{i}.b")).unwrap();
            let mut z = vec![0.0; spec.output];
            for r in 0..spec.output {
                let mut acc = b[r];
                for (c, xc) in x.iter().enumerate() {
                    acc += w[r * prev + c] * xc;
                }
                z[r] = acc;
            }
            z
        }

        let spec = MlpSpec {
            input: 5,
            hidden: vec![7, 6],
            output: 3,
            activation: Activation::PRelu,
        };
        let layout = spec.extend_layout(Layout::builder(), "").build();
        let mut params = Params::zeros(layout);
        let mut r = rng::derive(42, &[rng::stream::CRITIC_INIT]);
        spec.init_segments(&mut params, "", &mut r);
        use rand::Rng;
        let input: Vec<f64> = (0..5).map(|_| r.gen_range(-1.0..1.0)).collect();

        let got = spec.forward(&params, "", &input).unwrap();
        let want = reference(&spec, &params, &input);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "{g} vs {w}");
        }
    }

    #[test]
    fn shape_mismatch_names_input() {
        let (spec, params) = identity_mlp(3, 1);
        let err = spec.forward(&params, "", &[1.0, 2.0]).unwrap_err();
        assert!(err.to_string().contains("input"), "{err}");
    }

    #[test]
    fn tape_forward_is_bit_identical_to_plain_forward() {
        let spec = MlpSpec {
            input: 4,
            hidden: vec![8, 8],
            output: 2,
            activation: Activation::PRelu,
        };
        let layout = spec.extend_layout(Layout::builder(), "").build();
        let mut params = Params::zeros(layout);
        let mut r = rng::derive(3, &[rng::stream::CRITIC_INIT]);
        spec.init_segments(&mut params, "", &mut r);
        let input = [0.1, -0.4, 0.9, 0.3];

        let plain = spec.forward(&params, "", &input).unwrap();
        let (mut t, leaves) = tape::tape_over(&params);
        let x = t.constant(&input);
        let out = spec.graph(&mut t, &leaves, "", x);
        assert_eq!(t.value(out), plain.as_slice());
    }
}
