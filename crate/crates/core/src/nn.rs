//! Dense feed-forward classifier with exact analytic gradients.
//!
//! Parameters live in one flat `f64` vector. Every layer is stored unit by
//! unit, each unit holding its weight row followed by its bias:
//!
//! ```text
//! [ w_0,0 .. w_0,in-1  b_0 | w_1,0 .. w_1,in-1  b_1 | ... ]
//! ```
//!
//! With this layout the last layer partitions exactly into per-class blocks
//! (`L_c` = weight row + bias of output unit `c`), and growing the classifier
//! head only appends blocks, so existing indices never move.

use alloc::{format, string::String, vec, vec::Vec};
use core::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Tanh => libm::tanh(z),
        }
    }

    /// Derivative at pre-activation `z` whose image is `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// Architecture of the classifier. `classes` grows as steps arrive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    pub classes: usize,
}

impl ModelSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>, activation: Activation, classes: usize) -> Result<Self> {
        let spec = ModelSpec {
            input_dim,
            hidden,
            activation,
            classes,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.classes == 0 || self.hidden.contains(&0) {
            return Err(config_err!("model widths must be positive: {:?}", self));
        }
        Ok(())
    }

    /// Width of the features entering the classifier head.
    pub fn head_inputs(&self) -> usize {
        self.hidden.last().copied().unwrap_or(self.input_dim)
    }

    pub fn layout(&self) -> Vec<LayerDesc> {
        let mut layout = Vec::with_capacity(self.hidden.len() + 1);
        let mut inputs = self.input_dim;
        let mut offset = 0;
        for (i, &units) in self.hidden.iter().enumerate() {
            let desc = LayerDesc {
                name: format!("hidden{i}"),
                units,
                inputs,
                offset,
            };
            offset += desc.len();
            inputs = units;
            layout.push(desc);
        }
        layout.push(LayerDesc {
            name: String::from("head"),
            units: self.classes,
            inputs,
            offset,
        });
        layout
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(LayerDesc::len).sum()
    }
}

/// Placement of one layer inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDesc {
    pub name: String,
    pub units: usize,
    pub inputs: usize,
    pub offset: usize,
}

impl LayerDesc {
    /// Parameters per unit: the weight row plus one bias.
    pub fn stride(&self) -> usize {
        self.inputs + 1
    }

    pub fn len(&self) -> usize {
        self.units * self.stride()
    }

    pub fn is_empty(&self) -> bool {
        self.units == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }

    pub fn unit_range(&self, unit: usize) -> Range<usize> {
        let start = self.offset + unit * self.stride();
        start..start + self.stride()
    }
}

/// Flat parameter vector together with its layer layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Vec<LayerDesc>,
}

impl ParamVector {
    pub fn zeros(spec: &ModelSpec) -> Self {
        let layout = spec.layout();
        let d = layout.iter().map(LayerDesc::len).sum();
        ParamVector {
            values: vec![0.0; d],
            layout,
        }
    }

    pub fn from_values(spec: &ModelSpec, values: Vec<f64>) -> Result<Self> {
        let layout = spec.layout();
        let d: usize = layout.iter().map(LayerDesc::len).sum();
        if values.len() != d {
            return Err(shape_err!(
                "parameter vector has {} entries, spec needs {d}",
                values.len()
            ));
        }
        Ok(ParamVector { values, layout })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &[LayerDesc] {
        &self.layout
    }

    pub fn head(&self) -> &LayerDesc {
        self.layout.last().expect("layout always holds the head")
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexKind {
    /// `F`: every parameter.
    All,
    /// `L`: the classifier head.
    LastLayer,
    /// `L_c`: weight row and bias of one output unit.
    Class(usize),
}

/// Sorted, duplicate-free indices into a [`ParamVector`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexSet {
    kind: IndexKind,
    indices: Vec<usize>,
}

impl IndexSet {
    pub fn kind(&self) -> IndexKind {
        self.kind
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn gather(&self, full: &[f64]) -> Vec<f64> {
        self.indices.iter().map(|&i| full[i]).collect()
    }

    /// Positions of `self`'s indices inside `parent`, or `None` if `self` is
    /// not a subset.
    pub fn positions_in(&self, parent: &IndexSet) -> Option<Vec<usize>> {
        self.indices
            .iter()
            .map(|i| parent.indices.binary_search(i).ok())
            .collect()
    }

    pub fn is_subset_of(&self, parent: &IndexSet) -> bool {
        self.positions_in(parent).is_some()
    }
}

/// Row-major view of `n` samples of dimension `dim` with their labels.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    inputs: &'a [f64],
    labels: &'a [usize],
    dim: usize,
}

impl<'a> Batch<'a> {
    pub fn new(inputs: &'a [f64], labels: &'a [usize], dim: usize) -> Result<Self> {
        if dim == 0 || inputs.len() != labels.len() * dim {
            return Err(shape_err!(
                "batch of {} labels cannot hold {} inputs of dimension {dim}",
                labels.len(),
                inputs.len()
            ));
        }
        Ok(Batch { inputs, labels, dim })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &'a [usize] {
        self.labels
    }

    pub fn inputs(&self) -> &'a [f64] {
        self.inputs
    }
}

/// Result of a forward pass over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// Row-major `[n × classes]`.
    pub logits: Vec<f64>,
    pub classes: usize,
    /// Mean softmax cross-entropy.
    pub loss: f64,
}

impl ForwardOutput {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.logits[i * self.classes..(i + 1) * self.classes]
    }
}

/// Anything that maps an input to a feature vector (used by herding).
pub trait FeatureExtractor {
    fn extract(&self, input: &[f64]) -> Vec<f64>;
}

impl<F: Fn(&[f64]) -> Vec<f64>> FeatureExtractor for F {
    fn extract(&self, input: &[f64]) -> Vec<f64> {
        self(input)
    }
}

/// Per-sample activations: `pre[l]` before and `post[l]` after the
/// nonlinearity (for the head, `post` equals `pre`: the logits).
struct Trace {
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl Trace {
    fn new(layout: &[LayerDesc]) -> Self {
        Trace {
            pre: layout.iter().map(|l| vec![0.0; l.units]).collect(),
            post: layout.iter().map(|l| vec![0.0; l.units]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: ModelSpec,
    params: ParamVector,
}

impl Network {
    pub fn new(spec: ModelSpec, params: ParamVector) -> Result<Self> {
        spec.validate()?;
        if params.layout != spec.layout() {
            return Err(shape_err!("parameter layout does not match the model spec"));
        }
        Ok(Network { spec, params })
    }

    /// Every weight and bias drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn init<R: Rng + ?Sized>(spec: ModelSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamVector::zeros(&spec);
        let layout = params.layout.clone();
        for layer in &layout {
            let bound = 1.0 / libm::sqrt(layer.inputs as f64);
            for v in &mut params.values[layer.range()] {
                *v = rng.random_range(-bound..=bound);
            }
        }
        Ok(Network { spec, params })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params.values
    }

    pub fn head(&self) -> &LayerDesc {
        self.params.head()
    }

    pub fn classes(&self) -> usize {
        self.spec.classes
    }

    pub fn index_set(&self, kind: IndexKind) -> Result<IndexSet> {
        let indices: Vec<usize> = match kind {
            IndexKind::All => (0..self.params.len()).collect(),
            IndexKind::LastLayer => self.head().range().collect(),
            IndexKind::Class(c) => {
                if c >= self.spec.classes {
                    return Err(shape_err!("class {c} outside a head of {} classes", self.spec.classes));
                }
                self.head().unit_range(c).collect()
            }
        };
        Ok(IndexSet { kind, indices })
    }

    fn check_batch(&self, batch: &Batch<'_>) -> Result<()> {
        if batch.is_empty() {
            return Err(shape_err!("empty batch"));
        }
        if batch.dim() != self.spec.input_dim {
            return Err(shape_err!(
                "batch dimension {} differs from model input dimension {}",
                batch.dim(),
                self.spec.input_dim
            ));
        }
        if let Some(&bad) = batch.labels().iter().find(|&&y| y >= self.spec.classes) {
            return Err(shape_err!(
                "label {bad} outside a head of {} classes",
                self.spec.classes
            ));
        }
        Ok(())
    }

    /// Runs one sample through the network into `trace`.
    fn propagate(&self, x: &[f64], trace: &mut Trace) -> Result<()> {
        let layout = self.params.layout();
        let last = layout.len() - 1;
        let values = &self.params.values;
        for (l, layer) in layout.iter().enumerate() {
            let stride = layer.stride();
            let (before, rest) = trace.post.split_at_mut(l);
            let input: &[f64] = if l == 0 { x } else { &before[l - 1] };
            let pre = &mut trace.pre[l];
            for (j, z) in pre.iter_mut().enumerate() {
                let unit = &values[layer.offset + j * stride..layer.offset + (j + 1) * stride];
                let mut acc = 0.0;
                for (w, a) in unit[..layer.inputs].iter().zip(input) {
                    acc += w * a;
                }
                *z = acc + unit[layer.inputs];
            }
            if pre.iter().any(|z| !z.is_finite()) {
                return Err(Error::NonFinite(format!("layer {}", layer.name)));
            }
            let post = &mut rest[0];
            if l == last {
                post.copy_from_slice(pre);
            } else {
                for (a, &z) in post.iter_mut().zip(pre.iter()) {
                    *a = self.spec.activation.apply(z);
                }
            }
        }
        Ok(())
    }

    /// Softmax cross-entropy of one logit row; writes `p - onehot(y)` into `dz`.
    fn softmax_xent(logits: &[f64], y: usize, dz: &mut [f64]) -> f64 {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (d, &z) in dz.iter_mut().zip(logits) {
            *d = libm::exp(z - max);
            sum += *d;
        }
        for d in dz.iter_mut() {
            *d /= sum;
        }
        dz[y] -= 1.0;
        libm::log(sum) + max - logits[y]
    }

    pub fn forward(&self, batch: &Batch<'_>) -> Result<ForwardOutput> {
        self.check_batch(batch)?;
        let classes = self.spec.classes;
        let mut trace = Trace::new(self.params.layout());
        let mut dz = vec![0.0; classes];
        let mut logits = Vec::with_capacity(batch.len() * classes);
        let mut total = 0.0;
        for i in 0..batch.len() {
            self.propagate(batch.row(i), &mut trace)?;
            let out = trace.post.last().expect("head");
            total += Self::softmax_xent(out, batch.label(i), &mut dz);
            logits.extend_from_slice(out);
        }
        let loss = total / batch.len() as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite(String::from("loss")));
        }
        Ok(ForwardOutput { logits, classes, loss })
    }

    pub fn loss(&self, batch: &Batch<'_>) -> Result<f64> {
        Ok(self.forward(batch)?.loss)
    }

    /// Mean loss and its gradient with respect to every parameter.
    pub fn gradient(&self, batch: &Batch<'_>) -> Result<(f64, Vec<f64>)> {
        self.accumulate(batch, true)
    }

    /// Gradient restricted to the head, `L`. Bit-identical to gathering the
    /// head entries of [`Network::gradient`].
    pub fn last_layer_gradient(&self, batch: &Batch<'_>) -> Result<Vec<f64>> {
        Ok(self.accumulate(batch, false)?.1)
    }

    /// Gradient of the mean loss restricted to `subset`.
    pub fn grad(&self, batch: &Batch<'_>, subset: &IndexSet) -> Result<Vec<f64>> {
        let d = self.params.len();
        if subset.indices.last().is_some_and(|&i| i >= d) {
            return Err(shape_err!("index set exceeds {d} parameters"));
        }
        let head = self.head();
        if subset.indices.first().is_some_and(|&i| i >= head.offset) {
            let g = self.last_layer_gradient(batch)?;
            Ok(subset.indices.iter().map(|&i| g[i - head.offset]).collect())
        } else {
            let (_, g) = self.gradient(batch)?;
            Ok(subset.gather(&g))
        }
    }

    fn accumulate(&self, batch: &Batch<'_>, full: bool) -> Result<(f64, Vec<f64>)> {
        self.check_batch(batch)?;
        let layout = self.params.layout();
        let head = self.head();
        let base = if full { 0 } else { head.offset };
        let mut acc = vec![0.0; if full { self.params.len() } else { head.len() }];
        let mut trace = Trace::new(layout);
        let mut delta: Vec<Vec<f64>> = layout.iter().map(|l| vec![0.0; l.units]).collect();
        let values = &self.params.values;
        let last = layout.len() - 1;
        let mut total = 0.0;

        for i in 0..batch.len() {
            let x = batch.row(i);
            self.propagate(x, &mut trace)?;
            total += Self::softmax_xent(&trace.post[last], batch.label(i), &mut delta[last]);

            let layers = if full { 0..=last } else { last..=last };
            for l in layers.rev() {
                let layer = &layout[l];
                let stride = layer.stride();
                let input: &[f64] = if l == 0 { x } else { &trace.post[l - 1] };
                let dz = &delta[l];
                for (j, &g) in dz.iter().enumerate() {
                    let start = layer.offset + j * stride - base;
                    let unit = &mut acc[start..start + stride];
                    for (slot, &a) in unit[..layer.inputs].iter_mut().zip(input) {
                        *slot += g * a;
                    }
                    unit[layer.inputs] += g;
                }
                if l > 0 {
                    let below = &layout[l - 1];
                    let (lower, upper) = delta.split_at_mut(l);
                    let dz = &upper[0];
                    let target = &mut lower[l - 1];
                    for (k, t) in target.iter_mut().enumerate() {
                        let mut back = 0.0;
                        for (j, &g) in dz.iter().enumerate() {
                            back += values[layer.offset + j * stride + k] * g;
                        }
                        *t = back
                            * self
                                .spec
                                .activation
                                .derivative(trace.pre[l - 1][k], trace.post[l - 1][k]);
                    }
                    debug_assert_eq!(target.len(), below.units);
                }
            }
        }

        let n = batch.len() as f64;
        for g in acc.iter_mut() {
            *g /= n;
        }
        if acc.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(String::from("gradient")));
        }
        Ok((total / n, acc))
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.spec.input_dim {
            return Err(shape_err!(
                "input of length {} for dimension {}",
                x.len(),
                self.spec.input_dim
            ));
        }
        let mut trace = Trace::new(self.params.layout());
        self.propagate(x, &mut trace)?;
        Ok(trace.post.pop().expect("head"))
    }

    /// Arg-max class; ties go to the lowest class id.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let logits = self.logits(x)?;
        let mut best = 0;
        for (c, &z) in logits.iter().enumerate().skip(1) {
            if z > logits[best] {
                best = c;
            }
        }
        Ok(best)
    }

    /// Penultimate activations (the raw input for a head-only model).
    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.spec.input_dim {
            return Err(shape_err!(
                "input of length {} for dimension {}",
                x.len(),
                self.spec.input_dim
            ));
        }
        if self.spec.hidden.is_empty() {
            return Ok(x.to_vec());
        }
        let mut trace = Trace::new(self.params.layout());
        self.propagate(x, &mut trace)?;
        let last = trace.post.len() - 1;
        Ok(core::mem::take(&mut trace.post[last - 1]))
    }

    /// Appends `new_classes` output units initialised from
    /// `U(-1/sqrt(in), 1/sqrt(in))`; existing parameters are copied verbatim.
    pub fn expand_head<R: Rng + ?Sized>(&self, new_classes: usize, rng: &mut R) -> Result<Network> {
        if new_classes == 0 {
            return Err(config_err!("head expansion needs at least one new class"));
        }
        let mut spec = self.spec.clone();
        spec.classes += new_classes;
        let inputs = self.head().inputs;
        let bound = 1.0 / libm::sqrt(inputs as f64);
        let mut values = self.params.values.clone();
        values.reserve(new_classes * (inputs + 1));
        for _ in 0..new_classes * (inputs + 1) {
            values.push(rng.random_range(-bound..=bound));
        }
        let params = ParamVector::from_values(&spec, values)?;
        Network::new(spec, params)
    }
}

impl FeatureExtractor for Network {
    fn extract(&self, input: &[f64]) -> Vec<f64> {
        self.features(input).unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(seed: u64, hidden: Vec<usize>, classes: usize) -> Network {
        let spec = ModelSpec::new(3, hidden, Activation::Tanh, classes).unwrap();
        Network::init(spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn uniform_logits_give_log_c() {
        let spec = ModelSpec::new(2, vec![], Activation::Relu, 4).unwrap();
        let n = Network::new(spec.clone(), ParamVector::zeros(&spec)).unwrap();
        let loss = n.loss(&Batch::new(&[0.3, -0.2], &[2], 2).unwrap()).unwrap();
        assert!(libm::fabs(loss - libm::log(4.0)) < 1e-15);
    }

    #[test]
    fn saturated_softmax() {
        let spec = ModelSpec::new(1, vec![], Activation::Relu, 2).unwrap();
        let p = ParamVector::from_values(&spec, vec![0.0, 0.0, 0.0, 1000.0]).unwrap();
        let n = Network::new(spec, p).unwrap();
        let loss = n.loss(&Batch::new(&[5.0], &[1], 1).unwrap()).unwrap();
        assert!(loss < 1e-300);
    }

    // Independent scalar forward pass over explicit index arithmetic.
    fn scalar_loss(n: &Network, x: &[f64], y: &[usize]) -> f64 {
        let v = n.params().values();
        let spec = n.spec();
        let mut widths = vec![spec.input_dim];
        widths.extend(&spec.hidden);
        widths.push(spec.classes);
        let mut total = 0.0;
        for (s, &label) in y.iter().enumerate() {
            let mut a: Vec<f64> = x[s * spec.input_dim..(s + 1) * spec.input_dim].to_vec();
            let mut off = 0;
            for l in 1..widths.len() {
                let (fan_in, units) = (widths[l - 1], widths[l]);
                let mut z = vec![0.0; units];
                for (j, zj) in z.iter_mut().enumerate() {
                    let base = off + j * (fan_in + 1);
                    *zj = (0..fan_in).map(|k| v[base + k] * a[k]).sum::<f64>() + v[base + fan_in];
                }
                off += units * (fan_in + 1);
                a = if l + 1 < widths.len() {
                    z.iter().map(|t| t.tanh()).collect()
                } else {
                    z
                };
            }
            let m = a.iter().cloned().fold(f64::MIN, f64::max);
            let lse = m + a.iter().map(|t| (t - m).exp()).sum::<f64>().ln();
            total += lse - a[label];
        }
        total / y.len() as f64
    }

    #[test]
    fn loss_matches_scalar_oracle() {
        let n = net(1, vec![4], 2);
        let x = [
            0.1, -0.5, 0.9, 1.2, 0.3, -0.7, -1.0, 0.0, 0.4, 0.2, 0.2, 0.2, 0.8, -0.9, 0.5,
        ];
        let y = [0, 1, 1, 0, 1];
        let got = n.loss(&Batch::new(&x, &y, 3).unwrap()).unwrap();
        assert!(libm::fabs(got - scalar_loss(&n, &x, &y)) < 1e-10);
    }

    #[test]
    fn index_sets_partition_the_head() {
        let n = net(2, vec![5, 4], 3);
        let all = n.index_set(IndexKind::All).unwrap();
        let last = n.index_set(IndexKind::LastLayer).unwrap();
        assert!(last.is_subset_of(&all));
        let mut seen = Vec::new();
        for c in 0..3 {
            let own = n.index_set(IndexKind::Class(c)).unwrap();
            assert_eq!(own.len(), 4 + 1);
            assert!(own.is_subset_of(&last));
            seen.extend_from_slice(own.indices());
        }
        assert_eq!(seen, last.indices());
        assert!(n.index_set(IndexKind::Class(3)).is_err());
        let layout = n.params().layout();
        assert_eq!(layout.iter().map(LayerDesc::len).sum::<usize>(), n.params().len());
        for w in layout.windows(2) {
            assert_eq!(w[0].offset + w[0].len(), w[1].offset);
        }
    }

    #[test]
    fn restriction_is_a_gather() {
        let n = net(3, vec![4], 3);
        let x = [0.1, 0.2, 0.3, -0.3, 0.5, 0.9];
        let b = Batch::new(&x, &[2, 0], 3).unwrap();
        let (_, full) = n.gradient(&b).unwrap();
        let last = n.index_set(IndexKind::LastLayer).unwrap();
        assert_eq!(n.grad(&b, &last).unwrap(), last.gather(&full));
        assert_eq!(n.last_layer_gradient(&b).unwrap(), last.gather(&full));
        let own = n.index_set(IndexKind::Class(1)).unwrap();
        assert_eq!(n.grad(&b, &own).unwrap(), own.gather(&full));
        let all = n.index_set(IndexKind::All).unwrap();
        assert_eq!(n.grad(&b, &all).unwrap(), full);
    }

    #[test]
    fn absent_class_bias_gradient_is_its_probability() {
        let spec = ModelSpec::new(2, vec![3], Activation::Relu, 3).unwrap();
        let mut n = Network::init(spec, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let head = n.head().clone();
        for v in &mut n.params_mut()[head.range()] {
            *v = 0.0;
        }
        let b = Batch::new(&[0.5, 0.5], &[0], 2).unwrap();
        let own = n.index_set(IndexKind::Class(2)).unwrap();
        let g = n.grad(&b, &own).unwrap();
        assert!(libm::fabs(g[g.len() - 1] - 1.0 / 3.0) < 1e-15);
    }

    #[test]
    fn structural_errors() {
        let n = net(5, vec![2], 2);
        assert!(n.loss(&Batch::new(&[0.0; 3], &[2], 3).unwrap()).is_err());
        assert!(Batch::new(&[0.0; 4], &[0], 3).is_err());
        assert!(n.loss(&Batch::new(&[], &[], 3).unwrap()).is_err());
        assert!(ModelSpec::new(0, vec![], Activation::Relu, 2).is_err());
    }

    #[test]
    fn non_finite_names_the_layer() {
        let mut n = net(6, vec![2], 2);
        n.params_mut()[0] = f64::INFINITY;
        let err = n.loss(&Batch::new(&[1.0, 1.0, 1.0], &[0], 3).unwrap()).unwrap_err();
        assert_eq!(err, Error::NonFinite(String::from("layer hidden0")));
    }

    #[test]
    fn expansion_preserves_and_is_deterministic() {
        let n = net(7, vec![4], 2);
        assert!(n.expand_head(0, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        let a = n.expand_head(1, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = n.expand_head(1, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.classes(), 3);
        for c in 0..2 {
            let before = n.index_set(IndexKind::Class(c)).unwrap();
            let after = a.index_set(IndexKind::Class(c)).unwrap();
            assert_eq!(before, after);
            assert_eq!(before.gather(n.params().values()), after.gather(a.params().values()));
        }
        let bound = 1.0 / 2.0;
        let fresh = a.index_set(IndexKind::Class(2)).unwrap().gather(a.params().values());
        assert!(fresh.iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn predict_ties_go_low() {
        let spec = ModelSpec::new(1, vec![], Activation::Relu, 3).unwrap();
        let n = Network::new(spec.clone(), ParamVector::zeros(&spec)).unwrap();
        assert_eq!(n.predict(&[1.0]).unwrap(), 0);
    }
}
