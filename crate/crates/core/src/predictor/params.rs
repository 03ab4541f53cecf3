use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ArchConfig;
use crate::error::{invalid, Result};

/// Shape and location of one convolution in the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    /// Offset of the weights; the `cout` biases follow them.
    pub offset: usize,
}

impl ConvSpec {
    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }

    pub fn len(&self) -> usize {
        self.weight_len() + self.cout
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn fan_in(&self) -> usize {
        self.cin * self.k * self.k
    }

    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.weight_len()
    }

    pub fn bias_range(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.weight_len();
        start..start + self.cout
    }
}

/// Index of each block's convolutions in the layout.
pub(crate) struct LayerIndex {
    depth: usize,
}

impl LayerIndex {
    pub fn new(depth: usize) -> Self {
        Self { depth }
    }

    pub fn encoder(&self, level: usize) -> (usize, usize) {
        (2 * level, 2 * level + 1)
    }

    pub fn bottleneck(&self) -> (usize, usize) {
        (2 * self.depth, 2 * self.depth + 1)
    }

    /// `(up, conv1, conv2)` for decoder level `level`.
    pub fn decoder(&self, level: usize) -> (usize, usize, usize) {
        let k = self.depth - 1 - level;
        let base = 2 * self.depth + 2 + 3 * k;
        (base, base + 1, base + 2)
    }

    pub fn head(&self) -> usize {
        5 * self.depth + 2
    }
}

fn layout(arch: &ArchConfig) -> Vec<ConvSpec> {
    let d = arch.depth;
    let ch = |l: usize| arch.channels(l);
    let mut shapes: Vec<(String, usize, usize, usize)> = Vec::new();
    for l in 0..d {
        let cin = if l == 0 { 1 } else { ch(l - 1) };
        shapes.push((format!("enc{l}.conv1"), cin, ch(l), 3));
        shapes.push((format!("enc{l}.conv2"), ch(l), ch(l), 3));
    }
    shapes.push(("bottleneck.conv1".into(), ch(d - 1), ch(d), 3));
    shapes.push(("bottleneck.conv2".into(), ch(d), ch(d), 3));
    for l in (0..d).rev() {
        shapes.push((format!("dec{l}.up"), ch(l + 1), ch(l), 3));
        shapes.push((format!("dec{l}.conv1"), 2 * ch(l), ch(l), 3));
        shapes.push((format!("dec{l}.conv2"), ch(l), ch(l), 3));
    }
    shapes.push(("head".into(), ch(0), 1, 1));

    let mut offset = 0;
    shapes
        .into_iter()
        .map(|(name, cin, cout, k)| {
            let spec = ConvSpec {
                name,
                cin,
                cout,
                k,
                offset,
            };
            offset += spec.len();
            spec
        })
        .collect()
}

/// All network parameters as one flat vector plus its layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    arch: ArchConfig,
    specs: Vec<ConvSpec>,
    data: Vec<f64>,
}

impl ParamSet {
    pub fn zeros(arch: &ArchConfig) -> Result<Self> {
        arch.validate()?;
        let specs = layout(arch);
        let n = specs.last().map(|s| s.offset + s.len()).unwrap_or(0);
        Ok(Self {
            arch: *arch,
            specs,
            data: vec![0.0; n],
        })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn specs(&self) -> &[ConvSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Flat view, in layout order.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn from_flat(arch: &ArchConfig, data: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(arch)?;
        if data.len() != p.data.len() {
            return invalid(format!(
                "expected {} parameters for this architecture, got {}",
                p.data.len(),
                data.len()
            ));
        }
        p.data = data;
        Ok(p)
    }

    pub(crate) fn weight(&self, idx: usize) -> &[f64] {
        &self.data[self.specs[idx].weight_range()]
    }

    pub(crate) fn bias(&self, idx: usize) -> &[f64] {
        &self.data[self.specs[idx].bias_range()]
    }

    /// Mutable weight and bias slices of one convolution.
    pub(crate) fn conv_mut(&mut self, idx: usize) -> (&mut [f64], &mut [f64]) {
        let spec = &self.specs[idx];
        let (w, b) = (spec.weight_range(), spec.bias_range());
        let (head, tail) = self.data.split_at_mut(b.start);
        (&mut head[w], &mut tail[..b.end - b.start])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ParamFile {
            format: PARAM_FORMAT.into(),
            arch: self.arch,
            tensors: self
                .specs
                .iter()
                .flat_map(|s| {
                    [
                        NamedTensor {
                            name: format!("{}.weight", s.name),
                            shape: vec![s.cout, s.cin, s.k, s.k],
                            data: self.data[s.weight_range()].to_vec(),
                        },
                        NamedTensor {
                            name: format!("{}.bias", s.name),
                            shape: vec![s.cout],
                            data: self.data[s.bias_range()].to_vec(),
                        },
                    ]
                })
                .collect(),
        };
        let mut text = serde_json::to_string(&doc)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ParamFile = serde_json::from_str(text)?;
        if doc.format != PARAM_FORMAT {
            return invalid(format!("unsupported parameter format {:?}", doc.format));
        }
        let mut p = Self::zeros(&doc.arch)?;
        if doc.tensors.len() != 2 * p.specs.len() {
            return invalid(format!(
                "expected {} tensors, found {}",
                2 * p.specs.len(),
                doc.tensors.len()
            ));
        }
        for (s, pair) in p.specs.clone().iter().zip(doc.tensors.chunks(2)) {
            let (w, b) = (&pair[0], &pair[1]);
            let expected_w = vec![s.cout, s.cin, s.k, s.k];
            if w.name != format!("{}.weight", s.name) || w.shape != expected_w || w.data.len() != s.weight_len() {
                return invalid(format!("tensor {} does not match layer {}", w.name, s.name));
            }
            if b.name != format!("{}.bias", s.name) || b.shape != vec![s.cout] || b.data.len() != s.cout {
                return invalid(format!("tensor {} does not match layer {}", b.name, s.name));
            }
            p.data[s.weight_range()].copy_from_slice(&w.data);
            p.data[s.bias_range()].copy_from_slice(&b.data);
        }
        if !p.is_finite() {
            return invalid("parameter file contains non-finite values");
        }
        Ok(p)
    }
}

const PARAM_FORMAT: &str = "pdeseg-params/1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamFile {
    format: String,
    arch: ArchConfig,
    tensors: Vec<NamedTensor>,
}

/// Kernels uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero.
pub fn init_params(arch: &ArchConfig, seed: u64) -> Result<ParamSet> {
    let mut p = ParamSet::zeros(arch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for idx in 0..p.specs.len() {
        let bound = (1.0 / p.specs[idx].fan_in() as f64).sqrt();
        let (w, _) = p.conv_mut(idx);
        for v in w.iter_mut() {
            *v = rng.random_range(-bound..=bound);
        }
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_contiguous() {
        let arch = ArchConfig::new(3, 2);
        let p = ParamSet::zeros(&arch).unwrap();
        let idx = LayerIndex::new(3);
        assert_eq!(p.specs().len(), idx.head() + 1);
        let mut end = 0;
        for s in p.specs() {
            assert_eq!(s.offset, end);
            end += s.len();
        }
        assert_eq!(end, p.len());
        assert_eq!(p.specs()[idx.decoder(0).0].name, "dec0.up");
        assert_eq!(p.specs()[idx.decoder(2).2].name, "dec2.conv2");
        assert_eq!(p.specs()[idx.bottleneck().1].cout, 16);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let arch = ArchConfig::default();
        let a = init_params(&arch, 1).unwrap();
        assert_eq!(a, init_params(&arch, 1).unwrap());
        assert_ne!(a, init_params(&arch, 2).unwrap());
        for (i, s) in a.specs().iter().enumerate() {
            let bound = (1.0 / s.fan_in() as f64).sqrt();
            assert!(a.weight(i).iter().all(|v| v.abs() <= bound));
            assert!(a.bias(i).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn json_roundtrip_and_shape_check() {
        let arch = ArchConfig::new(1, 2);
        let p = init_params(&arch, 5).unwrap();
        let text = p.to_json().unwrap();
        assert_eq!(ParamSet::from_json(&text).unwrap(), p);
        let broken = text.replacen("[2,1,3,3]", "[2,1,3,2]", 1);
        assert!(ParamSet::from_json(&broken).is_err());
    }
}
