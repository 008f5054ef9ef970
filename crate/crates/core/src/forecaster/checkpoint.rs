use std::fs;
use std::path::Path;

use crate::conditioner::{AttentionConfig, CellKind};
use crate::data::{CovariateSpec, Domain, Frequency};
use crate::error::{Error, Result};
use crate::flow::checkpoint::{
    check_layout, read_statistics, write_layout, write_statistics, ByteReader, ByteWriter,
};
use crate::flow::Mode;
use crate::tensor::AdamState;

use super::model::{Model, ModelConfig, ModelKind, ScaleVector};

const MAGIC: &[u8; 8] = b"FLOWCAST";
const VERSION: u32 = 1;

fn kind_byte(k: ModelKind) -> u8 {
    match k {
        ModelKind::RnnRealNvp => 0,
        ModelKind::RnnMaf => 1,
        ModelKind::TransformerMaf => 2,
    }
}

fn freq_byte(f: Frequency) -> u8 {
    match f {
        Frequency::HalfHourly => 0,
        Frequency::Hourly => 1,
        Frequency::Daily => 2,
    }
}

fn write_config(c: &ModelConfig, w: &mut ByteWriter) {
    w.u8(kind_byte(c.kind));
    w.u64(c.dim);
    w.u8(freq_byte(c.covariates.freq));
    w.u64(c.covariates.lags.len());
    for &l in &c.covariates.lags {
        w.u64(l);
    }
    w.u64(c.covariates.dynamic_features);
    w.u64(c.covariates.cardinality);
    w.u64(c.covariates.embedding_dim);
    w.u64(c.item_ids.len());
    for &i in &c.item_ids {
        w.u64(i);
    }
    w.u8(matches!(c.domain, Domain::Count) as u8);
    w.u64(c.flow_blocks);
    w.u64(c.flow_hidden);
    w.u8(c.autoregressive as u8);
    w.u8(matches!(c.cell, CellKind::Gru) as u8);
    w.u64(c.rnn_hidden);
    w.u64(c.rnn_layers);
    let a = &c.attention;
    for v in [
        a.d_model,
        a.heads,
        a.encoder_layers,
        a.decoder_layers,
        a.ff_width,
    ] {
        w.u64(v);
    }
    w.f64(a.dropout);
    w.u8(a.residual as u8);
    w.u64(c.context_length);
}

fn read_config(r: &mut ByteReader) -> Result<ModelConfig> {
    let kind = match r.u8()? {
        0 => ModelKind::RnnRealNvp,
        1 => ModelKind::RnnMaf,
        2 => ModelKind::TransformerMaf,
        b => return Err(Error::Checkpoint(format!("unknown model kind {b}"))),
    };
    let dim = r.u64()?;
    let freq = match r.u8()? {
        0 => Frequency::HalfHourly,
        1 => Frequency::Hourly,
        2 => Frequency::Daily,
        b => return Err(Error::Checkpoint(format!("unknown frequency {b}"))),
    };
    let n = r.u64()?;
    let lags = (0..n).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
    let covariates = CovariateSpec {
        freq,
        dim,
        lags,
        dynamic_features: r.u64()?,
        cardinality: r.u64()?,
        embedding_dim: r.u64()?,
    };
    let n = r.u64()?;
    let item_ids = (0..n).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
    let domain = if r.bool()? {
        Domain::Count
    } else {
        Domain::Real
    };
    let flow_blocks = r.u64()?;
    let flow_hidden = r.u64()?;
    let autoregressive = r.bool()?;
    let cell = if r.bool()? {
        CellKind::Gru
    } else {
        CellKind::Lstm
    };
    let rnn_hidden = r.u64()?;
    let rnn_layers = r.u64()?;
    let attention = AttentionConfig {
        d_model: r.u64()?,
        heads: r.u64()?,
        encoder_layers: r.u64()?,
        decoder_layers: r.u64()?,
        ff_width: r.u64()?,
        dropout: r.f64()?,
        residual: r.bool()?,
    };
    Ok(ModelConfig {
        kind,
        dim,
        covariates,
        item_ids,
        domain,
        flow_blocks,
        flow_hidden,
        autoregressive,
        cell,
        rnn_hidden,
        rnn_layers,
        attention,
        context_length: r.u64()?,
    })
}

/// Binary checkpoint: magic, version, model configuration, flow layer
/// descriptors, per-parameter sizes, parameter values, batch-norm moving
/// statistics, scales, the number of completed epochs and optionally the
/// optimizer moments. All numbers are little-endian.
pub fn encode(model: &Model) -> Vec<u8> {
    let mut w = ByteWriter::default();
    w.bytes(MAGIC);
    w.u32(VERSION);
    write_config(&model.config, &mut w);
    write_layout(&model.flow, &mut w);
    w.u64(model.store.len());
    for id in model.store.ids() {
        w.u64(model.store.value(id).len());
    }
    w.f64s(&model.store.flatten());
    write_statistics(&model.flow, &mut w);
    w.f64s(model.scale.values());
    w.u64(model.epochs_completed);
    w.u8(!model.optimizer.is_empty() as u8);
    for s in &model.optimizer {
        w.u64(s.step as usize);
        w.f64s(&s.m);
        w.f64s(&s.v);
    }
    w.buf
}

pub fn decode(bytes: &[u8]) -> Result<Model> {
    let mut r = ByteReader::new(bytes);
    r.expect(MAGIC, "magic number")?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let config = read_config(&mut r)?;
    let dim = config.dim;
    let mut model = Model::new(config, ScaleVector::ones(dim), 0)?;
    check_layout(&model.flow, &mut r)?;
    let count = r.u64()?;
    if count != model.store.len() {
        return Err(Error::Checkpoint(format!(
            "{count} parameters stored, model has {}",
            model.store.len()
        )));
    }
    for id in model.store.ids().collect::<Vec<_>>() {
        let n = r.u64()?;
        if n != model.store.value(id).len() {
            return Err(Error::Checkpoint(format!(
                "size mismatch for parameter `{}`",
                model.store.name(id)
            )));
        }
    }
    let values = r.f64s(model.store.numel())?;
    model.store.load_flat(&values)?;
    read_statistics(&mut model.flow, &mut r)?;
    model.scale = ScaleVector::from_values(r.f64s(dim)?)?;
    model.epochs_completed = r.u64()?;
    if r.bool()? {
        for id in model.store.ids().collect::<Vec<_>>() {
            let n = model.store.value(id).len();
            let step = r.u64()? as u64;
            let m = r.f64s(n)?;
            let v = r.f64s(n)?;
            model.optimizer.push(AdamState { m, v, step });
        }
    }
    r.finish()?;
    model.flow.set_mode(Mode::Inference);
    Ok(model)
}

pub fn save(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(model))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Model> {
    decode(&fs::read(path)?)
}
