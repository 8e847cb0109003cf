//! Versioned binary encoding for checkpointing client reports and server
//! broadcasts.
//!
//! Record layout (all integers little-endian, floats IEEE-754 binary64 LE):
//!
//! ```text
//! magic    : 6 bytes, b"FEDCL1"
//! version  : u16 (currently 1)
//! record   : u8 (0x01 = client report, 0x02 = broadcast)
//! sections : repeated { tag: u8, len: u32, payload: len bytes }
//! ```
//!
//! Unknown section tags are skipped on decode (forward compatibility within a
//! version). Section payloads:
//!
//! Client report (`0x01`):
//! * `0x01` client_id: u64
//! * `0x02` model: layer stack (below) + split_index u32
//! * `0x03` difficulty mixture: u32 count, then (weight, mean, variance) f64
//!   triples — absent when the report carries none
//! * `0x04` label counter: u32 count, then u64 entries
//! * `0x05` local_steps_run: u64
//! * `0x06` mean_local_loss: f64
//!
//! Broadcast (`0x02`):
//! * `0x01` round: u64
//! * `0x02` state_index: u64
//! * `0x03` model: layer stack + split_index u32
//! * `0x04` generator: layer stack + num_classes u32 + noise_dim u32 — absent
//!   when the broadcast carries none
//! * `0x05` label prior counts: u32 count, then u64 entries
//! * `0x06` pool: u32 client count, u32 per-client counts, u32 sample count,
//!   f64 sorted samples
//! * `0x07` threshold: f64
//!
//! Layer stack: u32 layer count, then per layer u32 in_dim, u32 out_dim,
//! `in*out` f64 weights (row-major), `out` f64 biases.

use crate::distill::LabelPrior;
use crate::error::{Error, Result};
use crate::federation::{Broadcast, ClientReport};
use crate::gmm::{GmmComponent, GmmParams};
use crate::nn::{GeneratorParams, Layer, ModelParams};
use crate::sync::GlobalPool;

use alloc::vec::Vec;

pub const MAGIC: &[u8; 6] = b"FEDCL1";
pub const VERSION: u16 = 1;

const RECORD_REPORT: u8 = 0x01;
const RECORD_BROADCAST: u8 = 0x02;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new(record: u8) -> Writer {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.push(record);
        Writer { buf }
    }

    fn section(&mut self, tag: u8, payload: &[u8]) {
        self.buf.push(tag);
        self.buf.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        self.buf.extend_from_slice(payload);
    }
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_layers(buf: &mut Vec<u8>, layers: &[Layer]) {
    put_u32(buf, layers.len() as u32);
    for l in layers {
        put_u32(buf, l.in_dim as u32);
        put_u32(buf, l.out_dim as u32);
        for &w in &l.weights {
            put_f64(buf, w);
        }
        for &b in &l.bias {
            put_f64(buf, b);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Reader<'a> {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::WireTruncated);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos >= self.buf.len()
    }
}

fn read_layers(r: &mut Reader<'_>) -> Result<Vec<Layer>> {
    let count = r.u32()? as usize;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let in_dim = r.u32()? as usize;
        let out_dim = r.u32()? as usize;
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::WireMalformed("zero layer dimension"));
        }
        let mut weights = Vec::with_capacity(in_dim * out_dim);
        for _ in 0..in_dim * out_dim {
            weights.push(r.f64()?);
        }
        let mut bias = Vec::with_capacity(out_dim);
        for _ in 0..out_dim {
            bias.push(r.f64()?);
        }
        layers.push(Layer {
            in_dim,
            out_dim,
            weights,
            bias,
        });
    }
    Ok(layers)
}

fn encode_model(model: &ModelParams) -> Vec<u8> {
    let mut buf = Vec::new();
    put_layers(&mut buf, &model.layers);
    put_u32(&mut buf, model.split_index as u32);
    buf
}

fn decode_model(payload: &[u8]) -> Result<ModelParams> {
    let mut r = Reader::new(payload);
    let layers = read_layers(&mut r)?;
    let split_index = r.u32()? as usize;
    let model = ModelParams {
        layers,
        split_index,
    };
    model
        .validate()
        .map_err(|_| Error::WireMalformed("invalid model parameters"))?;
    Ok(model)
}

fn encode_generator(gen: &GeneratorParams) -> Vec<u8> {
    let mut buf = Vec::new();
    put_layers(&mut buf, &gen.layers);
    put_u32(&mut buf, gen.num_classes as u32);
    put_u32(&mut buf, gen.noise_dim as u32);
    buf
}

fn decode_generator(payload: &[u8]) -> Result<GeneratorParams> {
    let mut r = Reader::new(payload);
    let layers = read_layers(&mut r)?;
    let num_classes = r.u32()? as usize;
    let noise_dim = r.u32()? as usize;
    let gen = GeneratorParams {
        layers,
        num_classes,
        noise_dim,
    };
    gen.validate()
        .map_err(|_| Error::WireMalformed("invalid generator parameters"))?;
    Ok(gen)
}

fn check_header(r: &mut Reader<'_>, expected_record: u8) -> Result<()> {
    let magic = r.take(MAGIC.len()).map_err(|_| Error::WireBadMagic)?;
    if magic != MAGIC {
        return Err(Error::WireBadMagic);
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::WireUnsupportedVersion(version));
    }
    let record = r.u8()?;
    if record != expected_record {
        return Err(Error::WireMalformed("unexpected record type"));
    }
    Ok(())
}

/// Serializes a client report.
pub fn encode_client_report(report: &ClientReport) -> Vec<u8> {
    let mut w = Writer::new(RECORD_REPORT);

    let mut buf = Vec::new();
    put_u64(&mut buf, report.client_id as u64);
    w.section(0x01, &buf);

    w.section(0x02, &encode_model(&report.params));

    if let Some(gmm) = &report.gmm {
        let mut buf = Vec::new();
        put_u32(&mut buf, gmm.components.len() as u32);
        for c in &gmm.components {
            put_f64(&mut buf, c.weight);
            put_f64(&mut buf, c.mean);
            put_f64(&mut buf, c.variance);
        }
        w.section(0x03, &buf);
    }

    let mut buf = Vec::new();
    put_u32(&mut buf, report.label_counter.len() as u32);
    for &c in &report.label_counter {
        put_u64(&mut buf, c);
    }
    w.section(0x04, &buf);

    let mut buf = Vec::new();
    put_u64(&mut buf, report.local_steps_run as u64);
    w.section(0x05, &buf);

    let mut buf = Vec::new();
    put_f64(&mut buf, report.mean_local_loss);
    w.section(0x06, &buf);

    w.buf
}

/// Decodes a client report.
pub fn decode_client_report(bytes: &[u8]) -> Result<ClientReport> {
    let mut r = Reader::new(bytes);
    check_header(&mut r, RECORD_REPORT)?;

    let mut client_id = None;
    let mut params = None;
    let mut gmm = None;
    let mut label_counter = None;
    let mut local_steps_run = 0usize;
    let mut mean_local_loss = 0.0;

    while !r.done() {
        let tag = r.u8()?;
        let len = r.u32()? as usize;
        let payload = r.take(len)?;
        let mut pr = Reader::new(payload);
        match tag {
            0x01 => client_id = Some(pr.u64()? as usize),
            0x02 => params = Some(decode_model(payload)?),
            0x03 => {
                let count = pr.u32()? as usize;
                let mut components = Vec::with_capacity(count);
                for _ in 0..count {
                    components.push(GmmComponent {
                        weight: pr.f64()?,
                        mean: pr.f64()?,
                        variance: pr.f64()?,
                    });
                }
                gmm = Some(GmmParams { components });
            }
            0x04 => {
                let count = pr.u32()? as usize;
                let mut counter = Vec::with_capacity(count);
                for _ in 0..count {
                    counter.push(pr.u64()?);
                }
                label_counter = Some(counter);
            }
            0x05 => local_steps_run = pr.u64()? as usize,
            0x06 => mean_local_loss = pr.f64()?,
            _ => {} // future section; skip
        }
    }

    Ok(ClientReport {
        client_id: client_id.ok_or(Error::WireMalformed("report missing client id"))?,
        params: params.ok_or(Error::WireMalformed("report missing model"))?,
        gmm,
        label_counter: label_counter.ok_or(Error::WireMalformed("report missing counter"))?,
        local_steps_run,
        mean_local_loss,
    })
}

/// Serializes a broadcast.
pub fn encode_broadcast(bcast: &Broadcast) -> Vec<u8> {
    let mut w = Writer::new(RECORD_BROADCAST);

    let mut buf = Vec::new();
    put_u64(&mut buf, bcast.round);
    w.section(0x01, &buf);

    let mut buf = Vec::new();
    put_u64(&mut buf, bcast.state_index as u64);
    w.section(0x02, &buf);

    w.section(0x03, &encode_model(&bcast.model));

    if let Some(gen) = &bcast.generator {
        w.section(0x04, &encode_generator(gen));
    }

    let mut buf = Vec::new();
    put_u32(&mut buf, bcast.label_prior.counts().len() as u32);
    for &c in bcast.label_prior.counts() {
        put_u64(&mut buf, c);
    }
    w.section(0x05, &buf);

    let mut buf = Vec::new();
    put_u32(&mut buf, bcast.pool.per_client_counts().len() as u32);
    for &c in bcast.pool.per_client_counts() {
        put_u32(&mut buf, c as u32);
    }
    put_u32(&mut buf, bcast.pool.total() as u32);
    for &x in bcast.pool.sorted() {
        put_f64(&mut buf, x);
    }
    w.section(0x06, &buf);

    let mut buf = Vec::new();
    put_f64(&mut buf, bcast.threshold);
    w.section(0x07, &buf);

    w.buf
}

/// Decodes a broadcast.
pub fn decode_broadcast(bytes: &[u8]) -> Result<Broadcast> {
    let mut r = Reader::new(bytes);
    check_header(&mut r, RECORD_BROADCAST)?;

    let mut round = 0u64;
    let mut state_index = 0usize;
    let mut model = None;
    let mut generator = None;
    let mut prior_counts: Option<Vec<u64>> = None;
    let mut pool = None;
    let mut threshold = f64::NAN;

    while !r.done() {
        let tag = r.u8()?;
        let len = r.u32()? as usize;
        let payload = r.take(len)?;
        let mut pr = Reader::new(payload);
        match tag {
            0x01 => round = pr.u64()?,
            0x02 => state_index = pr.u64()? as usize,
            0x03 => model = Some(decode_model(payload)?),
            0x04 => generator = Some(decode_generator(payload)?),
            0x05 => {
                let count = pr.u32()? as usize;
                let mut counts = Vec::with_capacity(count);
                for _ in 0..count {
                    counts.push(pr.u64()?);
                }
                prior_counts = Some(counts);
            }
            0x06 => {
                let clients = pr.u32()? as usize;
                let mut per_client = Vec::with_capacity(clients);
                for _ in 0..clients {
                    per_client.push(pr.u32()? as usize);
                }
                let total = pr.u32()? as usize;
                if per_client.iter().sum::<usize>() != total {
                    return Err(Error::WireMalformed("pool count mismatch"));
                }
                let mut draws: Vec<Vec<f64>> = Vec::with_capacity(clients);
                let mut all = Vec::with_capacity(total);
                for _ in 0..total {
                    all.push(pr.f64()?);
                }
                let mut off = 0;
                for &c in &per_client {
                    draws.push(all[off..off + c].to_vec());
                    off += c;
                }
                pool = Some(
                    GlobalPool::from_draws(draws)
                        .map_err(|_| Error::WireMalformed("empty pool"))?,
                );
            }
            0x07 => threshold = pr.f64()?,
            _ => {}
        }
    }

    let counts = prior_counts.ok_or(Error::WireMalformed("broadcast missing prior"))?;
    let label_prior = if counts.iter().all(|&c| c == 0) {
        LabelPrior::uniform(counts.len().max(1))
    } else {
        crate::distill::update_label_prior(&[counts])
            .map_err(|_| Error::WireMalformed("invalid prior counts"))?
    };

    Ok(Broadcast {
        round,
        state_index,
        model: model.ok_or(Error::WireMalformed("broadcast missing model"))?,
        generator,
        label_prior,
        pool: pool.ok_or(Error::WireMalformed("broadcast missing pool"))?,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn;
    use alloc::vec;

    fn sample_report() -> ClientReport {
        ClientReport {
            client_id: 7,
            params: nn::init_classifier(&[4, 6, 3], 1, 5).unwrap(),
            gmm: Some(GmmParams {
                components: vec![
                    GmmComponent {
                        weight: 0.25,
                        mean: -1.0,
                        variance: 0.5,
                    },
                    GmmComponent {
                        weight: 0.75,
                        mean: 2.0,
                        variance: 1.5,
                    },
                ],
            }),
            label_counter: vec![3, 0, 9],
            local_steps_run: 20,
            mean_local_loss: 1.25,
        }
    }

    #[test]
    fn report_roundtrip() {
        let report = sample_report();
        let bytes = encode_client_report(&report);
        assert_eq!(&bytes[..6], MAGIC);
        let back = decode_client_report(&bytes).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn report_roundtrip_without_gmm() {
        let mut report = sample_report();
        report.gmm = None;
        let back = decode_client_report(&encode_client_report(&report)).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn broadcast_roundtrip() {
        let bcast = Broadcast {
            round: 12,
            state_index: 1,
            model: nn::init_classifier(&[4, 6, 3], 1, 5).unwrap(),
            generator: Some(nn::init_generator(3, 4, &[8], 6, 2).unwrap()),
            label_prior: crate::distill::update_label_prior(&[vec![5, 2, 3]]).unwrap(),
            pool: GlobalPool::from_draws(vec![vec![0.5, 0.1], vec![0.9]]).unwrap(),
            threshold: 0.4,
        };
        let bytes = encode_broadcast(&bcast);
        let back = decode_broadcast(&bytes).unwrap();
        assert_eq!(back, bcast);
    }

    #[test]
    fn bad_magic_detected() {
        let mut bytes = encode_client_report(&sample_report());
        bytes[0] = b'X';
        assert_eq!(decode_client_report(&bytes), Err(Error::WireBadMagic));
    }

    #[test]
    fn truncation_detected() {
        let bytes = encode_client_report(&sample_report());
        let cut = &bytes[..bytes.len() - 3];
        assert_eq!(decode_client_report(cut), Err(Error::WireTruncated));
    }

    #[test]
    fn version_mismatch_detected() {
        let mut bytes = encode_client_report(&sample_report());
        bytes[6] = 9;
        assert_eq!(
            decode_client_report(&bytes),
            Err(Error::WireUnsupportedVersion(9))
        );
    }

    #[test]
    fn unknown_sections_are_skipped() {
        let mut bytes = encode_client_report(&sample_report());
        // Append an unknown section: tag 0x7f, 4-byte payload.
        bytes.push(0x7f);
        bytes.extend_from_slice(&4u32.to_le_bytes());
        bytes.extend_from_slice(&[1, 2, 3, 4]);
        let back = decode_client_report(&bytes).unwrap();
        assert_eq!(back, sample_report());
    }
}
