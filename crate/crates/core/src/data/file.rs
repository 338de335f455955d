//! Binary dataset file. Little-endian throughout:
//!
//! ```text
//! magic "SDNDATA\0" | u32 version | [u8; 32] config digest
//! u64 N | u32 C | u32 H | u32 W | u8 bits
//! u16 factor count, then per factor: u16 name length | name | u32 cardinality
//! pixel block: N * C * H * W bytes, image-major, then channel, row, column
//! label block: N * factor-count u16 values
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use sha2::{Digest, Sha256};

use crate::data::render::{render, Factor, FactorSpec};
use crate::data::quantize;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng::derived;
use crate::Float;

pub const DATASET_MAGIC: &[u8; 8] = b"SDNDATA\0";
pub const DATASET_VERSION: u32 = 1;

/// Stream of the master seed used for the storage order.
const ORDER_STREAM: u64 = 11;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: FactorSpec,
    pub config_digest: [u8; 32],
    pixels: Vec<u8>,
    labels: Vec<u16>,
    lookup: HashMap<Vec<u16>, usize>,
}

impl Dataset {
    pub fn new(spec: FactorSpec, config_digest: [u8; 32], pixels: Vec<u8>, labels: Vec<u16>) -> Result<Self> {
        let per = spec.pixels_per_image();
        let nf = spec.factors.len();
        if per == 0 || pixels.len() % per != 0 {
            return Err(Error::format("dataset", format!("pixel block of {} bytes is not a multiple of {}", pixels.len(), per)));
        }
        let n = pixels.len() / per;
        if labels.len() != n * nf {
            return Err(Error::format("dataset", format!("{} labels for {} images x {} factors", labels.len(), n, nf)));
        }
        let mut lookup = HashMap::new();
        if nf > 0 {
            for (i, tuple) in labels.chunks_exact(nf).enumerate() {
                let idx: Vec<usize> = tuple.iter().map(|v| *v as usize).collect();
                spec.check(&idx).map_err(|e| Error::format("dataset", format!("image {}: {}", i, e)))?;
                lookup.entry(tuple.to_vec()).or_insert(i);
            }
        }
        Ok(Dataset { spec, config_digest, pixels, labels, lookup })
    }

    /// Every factor combination, rendered, in an order shuffled by `seed`.
    pub fn generate(spec: FactorSpec, seed: u64) -> Result<Self> {
        let n = spec.num_images();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut derived(seed, ORDER_STREAM));
        let per = spec.pixels_per_image();
        let mut pixels = Vec::with_capacity(n * per);
        let mut labels = Vec::with_capacity(n * spec.factors.len());
        for &idx in &order {
            let f = spec.factors_of(idx);
            pixels.extend_from_slice(&render(&spec, &f)?.pixels);
            labels.extend(f.iter().map(|v| *v as u16));
        }
        let digest = generation_digest(&spec, seed);
        Dataset::new(spec, digest, pixels, labels)
    }

    pub fn len(&self) -> usize {
        self.pixels.len() / self.spec.pixels_per_image()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let per = self.spec.pixels_per_image();
        &self.pixels[i * per..(i + 1) * per]
    }

    pub fn labels(&self, i: usize) -> &[u16] {
        let nf = self.spec.factors.len();
        &self.labels[i * nf..(i + 1) * nf]
    }

    pub fn has_labels(&self) -> bool {
        !self.spec.factors.is_empty()
    }

    /// Position of the image with this factor tuple, if present.
    pub fn find(&self, factors: &[usize]) -> Option<usize> {
        let key: Vec<u16> = factors.iter().map(|v| *v as u16).collect();
        self.lookup.get(&key).copied()
    }

    /// Whether every factor combination is present.
    pub fn is_complete(&self) -> bool {
        self.has_labels() && self.lookup.len() == self.spec.num_images()
    }

    /// SHA-256 of the pixel block, hex.
    pub fn pixel_digest(&self) -> String {
        hex::encode(Sha256::digest(&self.pixels))
    }

    /// Images `indices` as `bits`-bit bins `[B, C, H, W]`, horizontally
    /// mirrored where `flips` is set.
    pub fn batch(&self, indices: &[usize], flips: &[bool], bits: u32) -> Result<Tensor> {
        if !flips.is_empty() && flips.len() != indices.len() {
            return Err(Error::invalid("one flip flag per index"));
        }
        let (c, s) = (self.spec.channels, self.spec.image_size);
        let mut data = Vec::with_capacity(indices.len() * c * s * s);
        for (k, &i) in indices.iter().enumerate() {
            if i >= self.len() {
                return Err(Error::invalid(format!("image index {} out of range 0..{}", i, self.len())));
            }
            let img = self.image(i);
            let flip = flips.get(k).copied().unwrap_or(false);
            for ch in 0..c {
                for row in 0..s {
                    for col in 0..s {
                        let src = if flip { s - 1 - col } else { col };
                        data.push(quantize(img[(ch * s + row) * s + src], bits) as Float);
                    }
                }
            }
        }
        Tensor::new(&[indices.len(), c, s, s], data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let s = &self.spec;
        let mut out = Vec::with_capacity(self.pixels.len() + 2 * self.labels.len() + 128);
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        out.extend_from_slice(&self.config_digest);
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for d in [s.channels, s.image_size, s.image_size] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.push(s.bits);
        out.extend_from_slice(&(s.factors.len() as u16).to_le_bytes());
        for f in &s.factors {
            out.extend_from_slice(&(f.name.len() as u16).to_le_bytes());
            out.extend_from_slice(f.name.as_bytes());
            out.extend_from_slice(&f.cardinality.to_le_bytes());
        }
        out.extend_from_slice(&self.pixels);
        for l in &self.labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            if b.len() - pos < n {
                return Err(Error::format("dataset", format!("truncated at byte {}", pos)));
            }
            pos += n;
            Ok(&b[pos - n..pos])
        };
        if take(8)? != DATASET_MAGIC {
            return Err(Error::format("dataset", "bad magic"));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().expect("4"));
        if version != DATASET_VERSION {
            return Err(Error::format("dataset", format!("unsupported version {}", version)));
        }
        let digest: [u8; 32] = take(32)?.try_into().expect("32");
        let n = u64::from_le_bytes(take(8)?.try_into().expect("8")) as usize;
        let mut dims = [0usize; 3];
        for d in &mut dims {
            *d = u32::from_le_bytes(take(4)?.try_into().expect("4")) as usize;
        }
        if dims[1] != dims[2] {
            return Err(Error::format("dataset", format!("non-square images {}x{}", dims[1], dims[2])));
        }
        let bits = take(1)?[0];
        let nf = u16::from_le_bytes(take(2)?.try_into().expect("2")) as usize;
        let mut factors = Vec::with_capacity(nf);
        for _ in 0..nf {
            let len = u16::from_le_bytes(take(2)?.try_into().expect("2")) as usize;
            let name = String::from_utf8(take(len)?.to_vec()).map_err(|_| Error::format("dataset", "factor name is not UTF-8"))?;
            let cardinality = u32::from_le_bytes(take(4)?.try_into().expect("4"));
            factors.push(Factor { name, cardinality });
        }
        let spec = FactorSpec { factors, image_size: dims[1], channels: dims[0], bits };
        let npix = n
            .checked_mul(spec.pixels_per_image())
            .ok_or_else(|| Error::format("dataset", "pixel count overflows"))?;
        let pixels = take(npix)?.to_vec();
        let labels: Vec<u16> = take(n * nf * 2)?.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
        if pos != b.len() {
            return Err(Error::format("dataset", format!("{} trailing bytes", b.len() - pos)));
        }
        Dataset::new(spec, digest, pixels, labels)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Dataset::from_bytes(&fs::read(path)?)
    }
}

/// Digest of the generation parameters embedded in generated files.
pub fn generation_digest(spec: &FactorSpec, seed: u64) -> [u8; 32] {
    let mut text = format!("generate-data\nsize = {}\nseed = {}\n", spec.image_size, seed);
    for f in &spec.factors {
        text.push_str(&format!("factor = {}:{}\n", f.name, f.cardinality));
    }
    Sha256::digest(text.as_bytes()).into()
}
