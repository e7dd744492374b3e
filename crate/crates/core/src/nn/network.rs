use crate::error::{Error, Result};
use crate::nn::layer::LayerSpec;
use crate::rng::Prng;
use crate::tensor::Tensor;

/// A feed-forward stack of layers with one flat parameter tensor per
/// parameterized layer (activations own none).
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<LayerSpec>,
    params: Vec<Tensor>,
}

/// Activations recorded by [`Network::forward_traced`]; `values[i]` is the
/// input of layer `i` and the last entry is the network output.
#[derive(Debug, Clone)]
pub struct Trace {
    values: Vec<Tensor>,
}

impl Trace {
    pub fn output(&self) -> &Tensor {
        self.values.last().expect("trace always holds the input")
    }

    pub fn into_output(mut self) -> Tensor {
        self.values.pop().expect("trace always holds the input")
    }
}

/// Gradients of one backward pass through a [`Network`].
#[derive(Debug, Clone)]
pub struct NetworkGrads {
    /// Aligned with [`Network::params`].
    pub params: Vec<Tensor>,
    pub input: Tensor,
}

impl Network {
    /// Validates the chain and the parameter layout.
    pub fn new(layers: Vec<LayerSpec>, params: Vec<Tensor>) -> Result<Self> {
        check_chain(&layers, 0)?;
        let expected: Vec<usize> = layers
            .iter()
            .filter(|l| l.has_params())
            .map(|l| l.param_count())
            .collect();
        let got: Vec<usize> = params.iter().map(|t| t.len()).collect();
        if expected != got {
            return Err(Error::Layout(format!(
                "parameter sizes {got:?} do not match layer sizes {expected:?}"
            )));
        }
        Ok(Self { layers, params })
    }

    /// Fan-in scaled uniform weights in `[-sqrt(6/fan_in), sqrt(6/fan_in)]`,
    /// zero biases.
    pub fn init(layers: Vec<LayerSpec>, rng: &mut Prng) -> Result<Self> {
        check_chain(&layers, 0)?;
        let params = layers
            .iter()
            .filter(|l| l.has_params())
            .map(|l| {
                let bound = (6.0 / l.fan_in() as f64).sqrt();
                let mut data: Vec<f32> = (0..l.weight_count())
                    .map(|_| rng.uniform(-bound, bound) as f32)
                    .collect();
                data.resize(l.param_count(), 0.0);
                Tensor::from_vec(data)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers, params })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|t| t.len()).sum()
    }

    /// Indices (into [`Self::layers`]) of layers that own parameters, in
    /// parameter order.
    pub fn param_layer_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.has_params())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn input_shape(&self) -> Vec<usize> {
        self.layers
            .iter()
            .find_map(|l| l.input_shape())
            .expect("chain validated to start with a parameterized layer")
    }

    pub fn output_shape(&self) -> Vec<usize> {
        self.layers
            .iter()
            .rev()
            .find_map(|l| l.output_shape())
            .expect("chain validated to contain a parameterized layer")
    }

    pub fn input_len(&self) -> usize {
        self.input_shape().iter().product()
    }

    pub fn output_len(&self) -> usize {
        self.output_shape().iter().product()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() < 2 || x.item_len() != self.input_len() {
            return Err(Error::Shape(format!(
                "input {:?} does not match network input {:?} (expected [batch, ..])",
                x.shape(),
                self.input_shape()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let batch = x.batch_len();
        let mut cur = x.clone();
        let mut p = 0;
        for (i, layer) in self.layers.iter().enumerate() {
            cur = self.apply(i, layer, &mut p, &cur, batch)?;
        }
        Ok(cur)
    }

    pub fn forward_traced(&self, x: &Tensor) -> Result<Trace> {
        self.check_input(x)?;
        let batch = x.batch_len();
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(x.clone());
        let mut p = 0;
        for (i, layer) in self.layers.iter().enumerate() {
            let next = self.apply(i, layer, &mut p, values.last().unwrap(), batch)?;
            values.push(next);
        }
        Ok(Trace { values })
    }

    fn apply(&self, i: usize, layer: &LayerSpec, p: &mut usize, x: &Tensor, batch: usize) -> Result<Tensor> {
        let params: &[f32] = if layer.has_params() {
            *p += 1;
            self.params[*p - 1].data()
        } else {
            &[]
        };
        let y = layer.forward(params, x.data(), batch);
        let shape = match layer.output_shape() {
            Some(s) => std::iter::once(batch).chain(s).collect(),
            None => x.shape().to_vec(),
        };
        let y = Tensor::new(shape, y)?;
        if !y.is_finite() {
            return Err(Error::NonFinite(format!("activation of layer {i} ({layer})")));
        }
        Ok(y)
    }

    pub fn backward(&self, trace: &Trace, grad_output: &Tensor) -> Result<NetworkGrads> {
        if trace.values.len() != self.layers.len() + 1 {
            return Err(Error::Layout("trace does not belong to this network".into()));
        }
        if grad_output.shape() != trace.output().shape() {
            return Err(Error::Shape(format!(
                "output gradient {:?} vs output {:?}",
                grad_output.shape(),
                trace.output().shape()
            )));
        }
        let batch = grad_output.batch_len();
        let mut grads: Vec<Option<Tensor>> = vec![None; self.params.len()];
        let mut p = self.params.len();
        let mut g = grad_output.data().to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let params: &[f32] = if layer.has_params() {
                p -= 1;
                self.params[p].data()
            } else {
                &[]
            };
            let (gx, gp) = layer.backward(params, trace.values[i].data(), trace.values[i + 1].data(), &g, batch);
            if layer.has_params() {
                grads[p] = Some(Tensor::from_vec(gp)?);
            }
            g = gx;
        }
        let input = Tensor::new(trace.values[0].shape().to_vec(), g)?;
        let params: Vec<Tensor> = grads.into_iter().map(|t| t.expect("every slot filled")).collect();
        if !input.is_finite() || params.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("gradients".into()));
        }
        Ok(NetworkGrads { params, input })
    }
}

/// Checks that consecutive parameterized layers agree on their flattened
/// sizes. `offset` shifts the reported layer numbers.
pub(crate) fn check_chain(layers: &[LayerSpec], offset: usize) -> Result<()> {
    for l in layers {
        l.validate()?;
    }
    let first = layers.iter().position(|l| l.has_params());
    match first {
        Some(0) => {}
        Some(_) | None => {
            return Err(Error::InvalidArgument(
                "a network must start with a parameterized layer".into(),
            ))
        }
    }
    let mut prev: Option<(usize, &LayerSpec)> = None;
    for (i, l) in layers.iter().enumerate().filter(|(_, l)| l.has_params()) {
        if let Some((pi, pl)) = prev {
            let out = pl.output_shape().unwrap().iter().product::<usize>();
            let inp = l.input_len().unwrap();
            if out != inp {
                return Err(Error::LayerChain {
                    prev: pi + offset,
                    prev_desc: pl.to_string(),
                    prev_out: out,
                    next: i + offset,
                    next_desc: l.to_string(),
                    next_in: inp,
                });
            }
        }
        prev = Some((i, l));
    }
    Ok(())
}
