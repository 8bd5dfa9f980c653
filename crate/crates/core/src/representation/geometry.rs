//! Patch extractor geometry and segment bookkeeping.

use std::rc::Rc;

use repnet_autograd::Tensor;
use serde::{Deserialize, Serialize};

use crate::config::ExtractorConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatchExtractorSpec {
    pub cover: usize,
    pub stride: usize,
    pub dilation: usize,
}

impl PatchExtractorSpec {
    pub fn new(cover: usize, stride: usize, dilation: usize) -> Self {
        PatchExtractorSpec { cover, stride, dilation }
    }

    /// Steps spanned by one patch.
    pub fn effective_extent(&self) -> usize {
        (self.cover - 1) * self.dilation + 1
    }

    pub fn validate(&self, t: usize) -> Result<()> {
        if self.cover == 0 || self.stride == 0 || self.dilation == 0 {
            return Err(Error::Geometry(format!("cover, stride and dilation must be positive: {self:?}")));
        }
        if self.effective_extent() > t {
            return Err(Error::Geometry(format!(
                "extractor {self:?} spans {} steps, lookback is {t}",
                self.effective_extent()
            )));
        }
        Ok(())
    }
}

/// Number of fully in-range patches.
pub fn patch_count(t: usize, spec: &PatchExtractorSpec) -> Result<usize> {
    spec.validate(t)?;
    Ok((t - spec.effective_extent()) / spec.stride + 1)
}

/// Cuts a row-major `T × F` window into `(F, n, cover)` patches.
pub fn extract_patches(window: &[f64], t: usize, f: usize, spec: &PatchExtractorSpec) -> Result<Tensor> {
    if window.len() != t * f {
        return Err(Error::Shape(format!("window has {} values, expected {t}×{f}", window.len())));
    }
    let n = patch_count(t, spec)?;
    let mut out = Vec::with_capacity(f * n * spec.cover);
    for c in 0..f {
        for p in 0..n {
            for j in 0..spec.cover {
                out.push(window[(p * spec.stride + j * spec.dilation) * f + c]);
            }
        }
    }
    Ok(Tensor::new([f, n, spec.cover], out))
}

/// Gather index taking `(B, T, C)` to `(B, C, n, cover)`.
pub fn channel_patch_index(b: usize, t: usize, c: usize, spec: &PatchExtractorSpec, n: usize) -> Rc<[isize]> {
    let mut idx = Vec::with_capacity(b * c * n * spec.cover);
    for bi in 0..b {
        for ci in 0..c {
            for p in 0..n {
                for j in 0..spec.cover {
                    idx.push(((bi * t + p * spec.stride + j * spec.dilation) * c + ci) as isize);
                }
            }
        }
    }
    idx.into()
}

/// Gather index taking `(B, T, M)` to `(B, n, cover, M)`, keeping every
/// patch position's full feature row together.
pub fn row_patch_index(b: usize, t: usize, m: usize, spec: &PatchExtractorSpec, n: usize) -> Rc<[isize]> {
    let mut idx = Vec::with_capacity(b * n * spec.cover * m);
    for bi in 0..b {
        for p in 0..n {
            for j in 0..spec.cover {
                for k in 0..m {
                    idx.push(((bi * t + p * spec.stride + j * spec.dilation) * m + k) as isize);
                }
            }
        }
    }
    idx.into()
}

/// Fills in default strides and dilations.
///
/// Stride defaults to half the cover (at least 1). Dilation defaults by
/// cover rank: the smallest cover gets 1, and the extractor of rank `r`
/// gets the largest value in `{1, 2, 3}` not above `r + 1` that keeps the
/// patch inside the lookback.
pub fn resolve_extractors(cfgs: &[ExtractorConfig], t: usize) -> Result<Vec<PatchExtractorSpec>> {
    let mut order: Vec<usize> = (0..cfgs.len()).collect();
    order.sort_by_key(|&i| (cfgs[i].cover, i));
    let mut rank = vec![0; cfgs.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    cfgs.iter()
        .enumerate()
        .map(|(i, c)| {
            let stride = c.stride.unwrap_or((c.cover / 2).max(1));
            let dilation = c.dilation.unwrap_or_else(|| {
                (1..=(rank[i] + 1).min(3))
                    .rev()
                    .find(|&d| (c.cover.max(1) - 1) * d < t)
                    .unwrap_or(1)
            });
            let spec = PatchExtractorSpec { cover: c.cover, stride, dilation };
            spec.validate(t)?;
            Ok(spec)
        })
        .collect()
}

/// Per-extractor patch counts and their offsets on the concatenated axis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentMap {
    counts: Vec<usize>,
    offsets: Vec<usize>,
}

impl SegmentMap {
    pub fn new(counts: Vec<usize>) -> Result<Self> {
        if counts.is_empty() || counts.contains(&0) {
            return Err(Error::Shape(format!("segment counts must be positive: {counts:?}")));
        }
        let offsets = counts
            .iter()
            .scan(0, |acc, &n| {
                let o = *acc;
                *acc += n;
                Some(o)
            })
            .collect();
        Ok(SegmentMap { counts, offsets })
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Splits a tensor back along its patch `axis`.
    pub fn split(&self, tensor: &Tensor, axis: usize) -> Result<Vec<Tensor>> {
        if tensor.shape().get(axis) != Some(&self.total()) {
            return Err(Error::Shape(format!(
                "patch axis {axis} of {:?} does not match segment total {}",
                tensor.shape(),
                self.total()
            )));
        }
        Ok(self.counts.iter().zip(&self.offsets).map(|(&n, &o)| tensor.narrow(axis, o, n)).collect())
    }
}

/// Concatenates `(…, n_k, E)` tensors along the patch axis (second to last).
pub fn concat_extractors(parts: &[Tensor]) -> Result<(Tensor, SegmentMap)> {
    let first = parts.first().ok_or_else(|| Error::Shape("no extractor outputs".into()))?;
    if parts.len() > 5 {
        return Err(Error::config("model.extractors", format!("at most 5 extractors, got {}", parts.len())));
    }
    let nd = first.ndim();
    if nd < 2 {
        return Err(Error::Shape("extractor outputs need a patch and an embedding axis".into()));
    }
    for p in parts {
        if p.ndim() != nd || p.shape()[nd - 1] != first.shape()[nd - 1] {
            return Err(Error::config(
                "model.embedding",
                format!("embedding widths differ: {:?} vs {:?}", p.shape(), first.shape()),
            ));
        }
        if p.shape()[..nd - 2] != first.shape()[..nd - 2] {
            return Err(Error::Shape(format!("leading axes differ: {:?} vs {:?}", p.shape(), first.shape())));
        }
    }
    let map = SegmentMap::new(parts.iter().map(|p| p.shape()[nd - 2]).collect())?;
    let refs: Vec<&Tensor> = parts.iter().collect();
    Ok((Tensor::concat(&refs, nd - 2), map))
}
