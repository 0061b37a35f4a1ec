use crate::binarize::UMode;
use crate::error::{Error, Result};
use crate::tensor::{Padding, PoolMode, Tensor};

use super::PackedMatrix;

/// File signature, the bytes `B W N M`.
pub const MAGIC: [u8; 4] = *b"BWNM";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 20;

/// Header flag: binarized layers carry latent values (a training checkpoint).
pub const FLAG_CHECKPOINT: u16 = 1;

const KIND_DENSE: u8 = 1;
const KIND_CONV: u8 = 2;
const KIND_BATCHNORM: u8 = 3;
const KIND_RELU: u8 = 4;
const KIND_POOL: u8 = 5;
const KIND_FLATTEN: u8 = 6;

const STORE_FULL: u8 = 0;
const STORE_PACKED: u8 = 1;
const STORE_LATENT: u8 = 2;

/// How a dense or conv weight is stored.
#[derive(Clone, Debug, PartialEq)]
pub enum WeightRecord {
    /// Full-precision weights of a layer that is not binarized.
    Full(Tensor<f32>),
    /// Sign bits of a binarized layer.
    Packed(PackedMatrix),
    /// Latent values of a binarized layer, kept in checkpoints.
    Latent { phi: Tensor<f32>, u_mode: UMode },
}

impl WeightRecord {
    pub fn is_binarized(&self) -> bool {
        !matches!(self, WeightRecord::Full(_))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerRecord {
    Dense {
        shape: [usize; 2],
        weight: WeightRecord,
        bias: Tensor<f32>,
    },
    Conv2d {
        shape: [usize; 4],
        stride: usize,
        padding: Padding,
        weight: WeightRecord,
        bias: Tensor<f32>,
    },
    BatchNorm {
        eps: f32,
        momentum: f32,
        gamma: Tensor<f32>,
        beta: Tensor<f32>,
        running_mean: Tensor<f32>,
        running_var: Tensor<f32>,
    },
    Relu,
    Pool {
        mode: PoolMode,
        window: usize,
        stride: usize,
    },
    Flatten,
}

/// In-memory form of a `.bwn` file.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelFile {
    /// Per-sample input shape, e.g. `[28, 28, 1]`.
    pub input_shape: Vec<usize>,
    pub checkpoint: bool,
    pub layers: Vec<LayerRecord>,
}

impl ModelFile {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.u8(self.input_shape.len() as u8);
        for &d in &self.input_shape {
            w.u32(d as u32);
        }
        for layer in &self.layers {
            encode_layer(&mut w, layer);
        }
        let payload = w.0;
        let flags = if self.checkpoint { FLAG_CHECKPOINT } else { 0 };
        let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&flags.to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
        out.extend_from_slice(&payload);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::format(format!(
                "model file is {} bytes, shorter than the {HEADER_LEN}-byte header",
                bytes.len()
            )));
        }
        let le32 = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
        let le16 = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
        if bytes[..4] != MAGIC {
            return Err(Error::BadMagic {
                expected: u32::from_le_bytes(MAGIC),
                found: le32(0),
            });
        }
        let version = le16(4);
        if version == 0 || version > VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                supported: VERSION,
            });
        }
        let flags = le16(6);
        if flags & !FLAG_CHECKPOINT != 0 {
            return Err(Error::format(format!("unknown header flags {flags:#06x}")));
        }
        let layer_count = le32(8) as usize;
        let payload_len = le32(12) as usize;
        let expected_crc = le32(16);
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != payload_len {
            return Err(Error::format(format!(
                "header declares a {payload_len}-byte payload, file has {}",
                payload.len()
            )));
        }
        let actual = crc32fast::hash(payload);
        if actual != expected_crc {
            return Err(Error::ChecksumMismatch {
                expected: expected_crc,
                actual,
            });
        }

        let mut r = Reader { buf: payload, pos: 0 };
        let rank = r.u8()? as usize;
        let input_shape = (0..rank).map(|_| r.dim()).collect::<Result<Vec<_>>>()?;
        let checkpoint = flags & FLAG_CHECKPOINT != 0;
        let mut layers = Vec::with_capacity(layer_count.min(1024));
        for i in 0..layer_count {
            layers.push(decode_layer(&mut r).map_err(|e| match e {
                Error::Format(msg) => Error::format(format!("layer {i}: {msg}")),
                other => other,
            })?);
        }
        if r.pos != payload.len() {
            return Err(Error::format(format!(
                "{} trailing bytes after the last layer",
                payload.len() - r.pos
            )));
        }
        Ok(ModelFile {
            input_shape,
            checkpoint,
            layers,
        })
    }
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f32(&mut self, v: f32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn floats(&mut self, t: &Tensor<f32>) {
        for &v in t.data() {
            self.f32(v);
        }
    }

    fn weight(&mut self, w: &WeightRecord) {
        match w {
            WeightRecord::Full(t) => {
                self.u8(STORE_FULL);
                self.floats(t);
            }
            WeightRecord::Packed(p) => {
                self.u8(STORE_PACKED);
                self.0.extend_from_slice(p.bits());
            }
            WeightRecord::Latent { phi, u_mode } => {
                self.u8(STORE_LATENT);
                self.u8(match u_mode {
                    UMode::Identity => 0,
                    UMode::Tanh => 1,
                });
                self.floats(phi);
            }
        }
    }
}

fn encode_layer(w: &mut Writer, layer: &LayerRecord) {
    match layer {
        LayerRecord::Dense {
            shape,
            weight,
            bias,
        } => {
            w.u8(KIND_DENSE);
            shape.iter().for_each(|&d| w.u32(d as u32));
            w.weight(weight);
            w.floats(bias);
        }
        LayerRecord::Conv2d {
            shape,
            stride,
            padding,
            weight,
            bias,
        } => {
            w.u8(KIND_CONV);
            shape.iter().for_each(|&d| w.u32(d as u32));
            w.u32(*stride as u32);
            w.u8(match padding {
                Padding::Valid => 0,
                Padding::Same => 1,
            });
            w.weight(weight);
            w.floats(bias);
        }
        LayerRecord::BatchNorm {
            eps,
            momentum,
            gamma,
            beta,
            running_mean,
            running_var,
        } => {
            w.u8(KIND_BATCHNORM);
            w.u32(gamma.len() as u32);
            w.f32(*eps);
            w.f32(*momentum);
            for t in [gamma, beta, running_mean, running_var] {
                w.floats(t);
            }
        }
        LayerRecord::Relu => w.u8(KIND_RELU),
        LayerRecord::Pool {
            mode,
            window,
            stride,
        } => {
            w.u8(KIND_POOL);
            w.u8(match mode {
                PoolMode::Max => 0,
                PoolMode::Avg => 1,
            });
            w.u32(*window as u32);
            w.u32(*stride as u32);
        }
        LayerRecord::Flatten => w.u8(KIND_FLATTEN),
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::format(format!("payload truncated at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn dim(&mut self) -> Result<usize> {
        match self.u32()? {
            0 => Err(Error::format("zero-sized dimension")),
            d => Ok(d as usize),
        }
    }

    fn f32(&mut self) -> Result<f32> {
        let b = self.take(4)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn floats(&mut self, shape: Vec<usize>) -> Result<Tensor<f32>> {
        let len: usize = shape.iter().product();
        let bytes = self.take(len.checked_mul(4).ok_or_else(|| Error::format("tensor too large"))?)?;
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Tensor::new(shape, data).map_err(|e| Error::format(e.to_string()))
    }

    fn weight(&mut self, shape: &[usize]) -> Result<WeightRecord> {
        match self.u8()? {
            STORE_FULL => Ok(WeightRecord::Full(self.floats(shape.to_vec())?)),
            STORE_PACKED => {
                let rows = *shape.last().unwrap();
                let cols = shape.iter().product::<usize>() / rows;
                let bits = self.take(rows * PackedMatrix::row_bytes(cols))?.to_vec();
                PackedMatrix::from_bits(rows, cols, bits)
                    .map(WeightRecord::Packed)
                    .map_err(|e| Error::format(e.to_string()))
            }
            STORE_LATENT => {
                let u_mode = match self.u8()? {
                    0 => UMode::Identity,
                    1 => UMode::Tanh,
                    m => return Err(Error::format(format!("unknown u mode {m}"))),
                };
                Ok(WeightRecord::Latent {
                    phi: self.floats(shape.to_vec())?,
                    u_mode,
                })
            }
            s => Err(Error::format(format!("unknown weight storage mode {s}"))),
        }
    }
}

fn decode_layer(r: &mut Reader<'_>) -> Result<LayerRecord> {
    Ok(match r.u8()? {
        KIND_DENSE => {
            let shape = [r.dim()?, r.dim()?];
            let weight = r.weight(&shape)?;
            let bias = r.floats(vec![shape[1]])?;
            LayerRecord::Dense {
                shape,
                weight,
                bias,
            }
        }
        KIND_CONV => {
            let shape = [r.dim()?, r.dim()?, r.dim()?, r.dim()?];
            let stride = r.dim()?;
            let padding = match r.u8()? {
                0 => Padding::Valid,
                1 => Padding::Same,
                p => return Err(Error::format(format!("unknown padding code {p}"))),
            };
            let weight = r.weight(&shape)?;
            let bias = r.floats(vec![shape[3]])?;
            LayerRecord::Conv2d {
                shape,
                stride,
                padding,
                weight,
                bias,
            }
        }
        KIND_BATCHNORM => {
            let c = r.dim()?;
            let eps = r.f32()?;
            let momentum = r.f32()?;
            LayerRecord::BatchNorm {
                eps,
                momentum,
                gamma: r.floats(vec![c])?,
                beta: r.floats(vec![c])?,
                running_mean: r.floats(vec![c])?,
                running_var: r.floats(vec![c])?,
            }
        }
        KIND_RELU => LayerRecord::Relu,
        KIND_POOL => {
            let mode = match r.u8()? {
                0 => PoolMode::Max,
                1 => PoolMode::Avg,
                m => return Err(Error::format(format!("unknown pool mode {m}"))),
            };
            LayerRecord::Pool {
                mode,
                window: r.dim()?,
                stride: r.dim()?,
            }
        }
        KIND_FLATTEN => LayerRecord::Flatten,
        k => return Err(Error::format(format!("unknown layer kind {k}"))),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelFile {
        ModelFile {
            input_shape: vec![3],
            checkpoint: false,
            layers: vec![
                LayerRecord::Dense {
                    shape: [3, 2],
                    weight: WeightRecord::Packed(PackedMatrix::pack(2, 3, &[1.0, -1.0, 1.0, -1.0, -1.0, 1.0]).unwrap()),
                    bias: Tensor::new(vec![2], vec![0.5, -0.25]).unwrap(),
                },
                LayerRecord::Relu,
            ],
        }
    }

    #[test]
    fn worked_example_bytes() {
        let expected: [u8; 46] = [
            0x42, 0x57, 0x4e, 0x4d, // magic
            0x01, 0x00, // version
            0x00, 0x00, // flags
            0x02, 0x00, 0x00, 0x00, // layer count
            0x1a, 0x00, 0x00, 0x00, // payload length
            0x41, 0xec, 0xe4, 0x40, // crc32
            0x01, 0x03, 0x00, 0x00, 0x00, // input rank, input dim
            0x01, 0x03, 0x00, 0x00, 0x00, 0x02, 0x00, 0x00, 0x00, // dense 3 -> 2
            0x01, 0x05, 0x04, // packed rows
            0x00, 0x00, 0x00, 0x3f, 0x00, 0x00, 0x80, 0xbe, // bias
            0x04, // relu
        ];
        assert_eq!(tiny().encode(), expected);
    }

    #[test]
    fn round_trip() {
        let m = tiny();
        assert_eq!(ModelFile::decode(&m.encode()).unwrap(), m);
    }

    #[test]
    fn distinct_header_errors() {
        let good = tiny().encode();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(ModelFile::decode(&bad), Err(Error::BadMagic { .. })));
        let mut bad = good.clone();
        bad[4] = 9;
        assert!(matches!(ModelFile::decode(&bad), Err(Error::UnsupportedVersion { found: 9, .. })));
        let mut bad = good.clone();
        *bad.last_mut().unwrap() ^= 0x40;
        assert!(matches!(ModelFile::decode(&bad), Err(Error::ChecksumMismatch { .. })));
        assert!(matches!(ModelFile::decode(&good[..10]), Err(Error::Format(_))));
        assert!(matches!(ModelFile::decode(&good[..good.len() - 1]), Err(Error::Format(_))));
    }

    #[test]
    fn every_payload_byte_is_checked() {
        let good = tiny().encode();
        for i in HEADER_LEN..good.len() {
            let mut bad = good.clone();
            bad[i] ^= 1;
            let err = ModelFile::decode(&bad).unwrap_err();
            assert!(matches!(err, Error::ChecksumMismatch { .. }), "byte {i}: {err}");
        }
    }
}
