//! Binary checkpoint files: schedule, denoiser, base generator, and
//! optimizer state in one sectioned container.
//!
//! Layout: the magic bytes `ESDD`, a `u16` format version, a `u8`
//! section count, then a table of `(id: u8, offset: u64, len: u64)`
//! entries followed by the section payloads. Everything is
//! little-endian; floats are raw IEEE-754 bits, so a load(save(x))
//! round trip is bitwise identical. A version mismatch is an explicit
//! error, never a silent migration, and a truncated or malformed file
//! names the section that failed.

use esddpm_core::basegen::{BaseGenerator, GmmParams, LatentVae, OracleSampler, VaeParams};
use esddpm_core::diffusion::{DiffusionModel, SigmaMode, TrainerState};
use esddpm_core::nn::{Activation, ClassEmbedding, Dense, Mlp, Network};
use esddpm_core::schedule::NoiseSchedule;
use std::path::Path;
use thiserror::Error;

/// File signature.
pub const MAGIC: [u8; 4] = *b"ESDD";
/// Current format version.
pub const VERSION: u16 = 1;

const SECTION_SCHEDULE: u8 = 1;
const SECTION_NETWORK: u8 = 2;
const SECTION_GENERATOR: u8 = 3;
const SECTION_OPTIMIZER: u8 = 4;

fn section_name(id: u8) -> &'static str {
    match id {
        SECTION_SCHEDULE => "schedule",
        SECTION_NETWORK => "network",
        SECTION_GENERATOR => "generator",
        SECTION_OPTIMIZER => "optimizer-state",
        _ => "unknown",
    }
}

/// Checkpoint persistence failures.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {got} (this build reads {VERSION})")]
    UnsupportedVersion { got: u16 },
    #[error("checkpoint truncated in the {section} section")]
    Truncated { section: &'static str },
    #[error("corrupt {section} section: {detail}")]
    Corrupt {
        section: &'static str,
        detail: String,
    },
    #[error("checkpoint has no {section} section")]
    MissingSection { section: &'static str },
}

fn corrupt(section: &'static str, detail: impl ToString) -> CheckpointError {
    CheckpointError::Corrupt {
        section,
        detail: detail.to_string(),
    }
}

/// Denoiser weights plus the model-level settings needed to rebuild it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub net: Network,
    pub trained_horizon: usize,
    pub sigma_mode: SigmaMode,
}

/// The persistable pieces of a run; any subset may be present.
#[derive(Debug, Clone, Default)]
pub struct Checkpoint {
    pub schedule: Option<NoiseSchedule>,
    pub model: Option<ModelState>,
    pub generator: Option<BaseGenerator>,
    pub trainer: Option<TrainerState>,
}

impl Checkpoint {
    /// Captures a model (weights, settings, and its schedule).
    pub fn from_model(model: &DiffusionModel<Network>) -> Self {
        Checkpoint {
            schedule: Some(model.schedule.clone()),
            model: Some(ModelState {
                net: model.net.clone(),
                trained_horizon: model.trained_horizon(),
                sigma_mode: model.sigma_mode,
            }),
            generator: None,
            trainer: None,
        }
    }

    /// Rebuilds the denoising model; needs the schedule and network
    /// sections.
    pub fn diffusion_model(&self) -> Result<DiffusionModel<Network>, CheckpointError> {
        let schedule = self
            .schedule
            .as_ref()
            .ok_or(CheckpointError::MissingSection {
                section: "schedule",
            })?;
        let state = self.model.as_ref().ok_or(CheckpointError::MissingSection {
            section: "network",
        })?;
        DiffusionModel::new(
            state.net.clone(),
            schedule.clone(),
            state.trained_horizon,
            state.sigma_mode,
        )
        .map_err(|e| corrupt("network", e))
    }
}

// ---------------------------------------------------------------------
// Little-endian encoding
// ---------------------------------------------------------------------

#[derive(Default)]
struct Enc {
    buf: Vec<u8>,
}

impl Enc {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u128(&mut self, v: u128) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        self.u64(vs.len() as u64);
        for &v in vs {
            self.f64(v);
        }
    }
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
}

struct Dec<'a> {
    buf: &'a [u8],
    pos: usize,
    section: &'static str,
}

impl<'a> Dec<'a> {
    fn new(buf: &'a [u8], section: &'static str) -> Self {
        Dec { buf, pos: 0, section }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(CheckpointError::Truncated {
                section: self.section,
            })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u128(&mut self) -> Result<u128, CheckpointError> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize, CheckpointError> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| corrupt(self.section, "length overflows this platform"))
    }

    fn f64s(&mut self) -> Result<Vec<f64>, CheckpointError> {
        let n = self.len()?;
        // Guard against lengths larger than the remaining payload before
        // allocating.
        if n
            .checked_mul(8)
            .and_then(|b| self.pos.checked_add(b))
            .is_none_or(|end| end > self.buf.len())
        {
            return Err(CheckpointError::Truncated {
                section: self.section,
            });
        }
        (0..n).map(|_| self.f64()).collect()
    }

    fn done(&self) -> Result<(), CheckpointError> {
        if self.pos != self.buf.len() {
            return Err(corrupt(self.section, "trailing bytes"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------
// Section payloads
// ---------------------------------------------------------------------

fn encode_schedule(s: &NoiseSchedule) -> Vec<u8> {
    let mut enc = Enc::default();
    enc.f64s(s.betas());
    enc.buf
}

fn decode_schedule(buf: &[u8]) -> Result<NoiseSchedule, CheckpointError> {
    let mut dec = Dec::new(buf, "schedule");
    let betas = dec.f64s()?;
    dec.done()?;
    NoiseSchedule::from_betas(betas).map_err(|e| corrupt("schedule", e))
}

fn activation_tag(a: Activation) -> u8 {
    match a {
        Activation::Tanh => 0,
        Activation::Silu => 1,
    }
}

fn activation_from(tag: u8, section: &'static str) -> Result<Activation, CheckpointError> {
    match tag {
        0 => Ok(Activation::Tanh),
        1 => Ok(Activation::Silu),
        _ => Err(corrupt(section, "unknown activation tag")),
    }
}

fn encode_mlp(m: &Mlp, enc: &mut Enc) {
    enc.u8(activation_tag(m.activation()));
    enc.u64(m.layers().len() as u64);
    for layer in m.layers() {
        enc.u64(layer.in_dim() as u64);
        enc.u64(layer.out_dim() as u64);
        enc.f64s(layer.weights());
        enc.f64s(layer.biases());
    }
}

fn decode_mlp(dec: &mut Dec) -> Result<Mlp, CheckpointError> {
    let section = dec.section;
    let activation = activation_from(dec.u8()?, section)?;
    let count = dec.len()?;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let in_dim = dec.len()?;
        let out_dim = dec.len()?;
        let weights = dec.f64s()?;
        let biases = dec.f64s()?;
        layers.push(
            Dense::from_parts(in_dim, out_dim, weights, biases)
                .map_err(|e| corrupt(section, e))?,
        );
    }
    Mlp::from_layers(layers, activation).map_err(|e| corrupt(section, e))
}

fn encode_class_embedding(emb: &ClassEmbedding, enc: &mut Enc) {
    enc.u64(emb.count() as u64);
    enc.u64(emb.dim() as u64);
    enc.f64s(emb.table());
}

fn decode_class_embedding(dec: &mut Dec) -> Result<ClassEmbedding, CheckpointError> {
    let section = dec.section;
    let count = dec.len()?;
    let dim = dec.len()?;
    let table = dec.f64s()?;
    ClassEmbedding::from_parts(count, dim, table).map_err(|e| corrupt(section, e))
}

fn encode_model(state: &ModelState) -> Vec<u8> {
    let mut enc = Enc::default();
    enc.u64(state.net.data_dim() as u64);
    enc.u64(state.net.time_dim() as u64);
    enc.u64(state.net.time_scale() as u64);
    enc.u64(state.trained_horizon as u64);
    enc.u8(match state.sigma_mode {
        SigmaMode::Beta => 0,
        SigmaMode::BetaTilde => 1,
    });
    match state.net.classes() {
        Some(emb) => {
            enc.u8(1);
            encode_class_embedding(emb, &mut enc);
        }
        None => enc.u8(0),
    }
    encode_mlp(state.net.mlp(), &mut enc);
    enc.buf
}

fn decode_model(buf: &[u8]) -> Result<ModelState, CheckpointError> {
    let mut dec = Dec::new(buf, "network");
    let data_dim = dec.len()?;
    let time_dim = dec.len()?;
    let time_scale = dec.len()?;
    let trained_horizon = dec.len()?;
    let sigma_mode = match dec.u8()? {
        0 => SigmaMode::Beta,
        1 => SigmaMode::BetaTilde,
        _ => return Err(corrupt("network", "unknown variance-mode tag")),
    };
    let classes = match dec.u8()? {
        0 => None,
        1 => Some(decode_class_embedding(&mut dec)?),
        _ => return Err(corrupt("network", "bad class-embedding flag")),
    };
    let mlp = decode_mlp(&mut dec)?;
    dec.done()?;
    let net = Network::from_parts(mlp, data_dim, time_dim, time_scale, classes)
        .map_err(|e| corrupt("network", e))?;
    Ok(ModelState {
        net,
        trained_horizon,
        sigma_mode,
    })
}

fn encode_gmm(params: &GmmParams, enc: &mut Enc) {
    enc.u64(params.component_count() as u64);
    enc.u64(params.data_dim() as u64);
    enc.f64s(params.weights());
    for mean in params.means() {
        enc.f64s(mean);
    }
    for var in params.variances() {
        enc.f64s(var);
    }
}

fn decode_gmm(dec: &mut Dec) -> Result<GmmParams, CheckpointError> {
    let section = dec.section;
    let k = dec.len()?;
    let _d = dec.len()?;
    let weights = dec.f64s()?;
    let means = (0..k).map(|_| dec.f64s()).collect::<Result<Vec<_>, _>>()?;
    let variances = (0..k).map(|_| dec.f64s()).collect::<Result<Vec<_>, _>>()?;
    GmmParams::from_parts(weights, means, variances).map_err(|e| corrupt(section, e))
}

const GEN_GMM: u8 = 1;
const GEN_CONDITIONAL_GMM: u8 = 2;
const GEN_VAE: u8 = 3;
const GEN_ORACLE: u8 = 4;

fn encode_generator(generator: &BaseGenerator) -> Vec<u8> {
    let mut enc = Enc::default();
    match generator {
        BaseGenerator::Gmm { models, conditional } => {
            enc.u8(if *conditional { GEN_CONDITIONAL_GMM } else { GEN_GMM });
            enc.u64(models.len() as u64);
            for m in models {
                encode_gmm(m, &mut enc);
            }
        }
        BaseGenerator::Vae(params) => {
            enc.u8(GEN_VAE);
            enc.u64(params.latent_dim() as u64);
            enc.u64(params.data_dim() as u64);
            match params.classes() {
                Some(emb) => {
                    enc.u8(1);
                    encode_class_embedding(emb, &mut enc);
                }
                None => enc.u8(0),
            }
            encode_mlp(params.encoder(), &mut enc);
            encode_mlp(params.decoder(), &mut enc);
        }
        BaseGenerator::Oracle(o) => {
            enc.u8(GEN_ORACLE);
            let data = o.data();
            enc.u64(data.len() as u64);
            for row in data {
                enc.f64s(row);
            }
            match o.labels() {
                Some(labels) => {
                    enc.u8(1);
                    enc.u64(labels.len() as u64);
                    for &l in labels {
                        enc.u64(l as u64);
                    }
                }
                None => enc.u8(0),
            }
            enc.f64(o.jitter());
        }
    }
    enc.buf
}

fn decode_generator(buf: &[u8]) -> Result<BaseGenerator, CheckpointError> {
    let mut dec = Dec::new(buf, "generator");
    let tag = dec.u8()?;
    let generator = match tag {
        GEN_GMM | GEN_CONDITIONAL_GMM => {
            let count = dec.len()?;
            let mut models = Vec::with_capacity(count);
            for _ in 0..count {
                models.push(decode_gmm(&mut dec)?);
            }
            if tag == GEN_CONDITIONAL_GMM {
                BaseGenerator::conditional_gmm(models).map_err(|e| corrupt("generator", e))?
            } else {
                let one = models
                    .into_iter()
                    .next()
                    .ok_or_else(|| corrupt("generator", "empty mixture list"))?;
                BaseGenerator::gmm(one)
            }
        }
        GEN_VAE => {
            let latent_dim = dec.len()?;
            let data_dim = dec.len()?;
            let classes = match dec.u8()? {
                0 => None,
                1 => Some(decode_class_embedding(&mut dec)?),
                _ => return Err(corrupt("generator", "bad class-embedding flag")),
            };
            let encoder = decode_mlp(&mut dec)?;
            let decoder = decode_mlp(&mut dec)?;
            let params = VaeParams::from_parts(encoder, decoder, latent_dim, data_dim, classes)
                .map_err(|e| corrupt("generator", e))?;
            BaseGenerator::vae(params)
        }
        GEN_ORACLE => {
            let n = dec.len()?;
            let data = (0..n).map(|_| dec.f64s()).collect::<Result<Vec<_>, _>>()?;
            let labels = match dec.u8()? {
                0 => None,
                1 => {
                    let count = dec.len()?;
                    let mut labels = Vec::with_capacity(count);
                    for _ in 0..count {
                        labels.push(dec.len()?);
                    }
                    Some(labels)
                }
                _ => return Err(corrupt("generator", "bad label flag")),
            };
            let jitter = dec.f64()?;
            let oracle = OracleSampler::new(data, labels, jitter)
                .map_err(|e| corrupt("generator", e))?;
            BaseGenerator::oracle(oracle)
        }
        _ => return Err(corrupt("generator", "unknown generator tag")),
    };
    dec.done()?;
    Ok(generator)
}

fn encode_trainer(state: &TrainerState) -> Vec<u8> {
    let mut enc = Enc::default();
    enc.u64(state.iterations_done);
    enc.bytes(&state.rng_seed);
    enc.u64(state.rng_stream);
    enc.u128(state.rng_word_pos);
    enc.u64(state.adam_step);
    enc.f64s(&state.adam_m);
    enc.f64s(&state.adam_v);
    enc.buf
}

fn decode_trainer(buf: &[u8]) -> Result<TrainerState, CheckpointError> {
    let mut dec = Dec::new(buf, "optimizer-state");
    let iterations_done = dec.u64()?;
    let rng_seed: [u8; 32] = dec.take(32)?.try_into().unwrap();
    let rng_stream = dec.u64()?;
    let rng_word_pos = dec.u128()?;
    let adam_step = dec.u64()?;
    let adam_m = dec.f64s()?;
    let adam_v = dec.f64s()?;
    dec.done()?;
    if adam_m.len() != adam_v.len() {
        return Err(corrupt("optimizer-state", "moment buffers disagree in length"));
    }
    Ok(TrainerState {
        iterations_done,
        rng_seed,
        rng_stream,
        rng_word_pos,
        adam_step,
        adam_m,
        adam_v,
    })
}

// ---------------------------------------------------------------------
// File assembly
// ---------------------------------------------------------------------

/// Serializes a checkpoint to bytes; `save_checkpoint` writes them.
pub fn to_bytes(ckpt: &Checkpoint) -> Vec<u8> {
    let mut sections: Vec<(u8, Vec<u8>)> = Vec::new();
    if let Some(s) = &ckpt.schedule {
        sections.push((SECTION_SCHEDULE, encode_schedule(s)));
    }
    if let Some(m) = &ckpt.model {
        sections.push((SECTION_NETWORK, encode_model(m)));
    }
    if let Some(g) = &ckpt.generator {
        sections.push((SECTION_GENERATOR, encode_generator(g)));
    }
    if let Some(t) = &ckpt.trainer {
        sections.push((SECTION_OPTIMIZER, encode_trainer(t)));
    }
    let header_len = 4 + 2 + 1 + sections.len() * 17;
    let mut out = Vec::with_capacity(
        header_len + sections.iter().map(|(_, b)| b.len()).sum::<usize>(),
    );
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(sections.len() as u8);
    let mut offset = header_len as u64;
    for (id, payload) in &sections {
        out.push(*id);
        out.extend_from_slice(&offset.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        offset += payload.len() as u64;
    }
    for (_, payload) in &sections {
        out.extend_from_slice(payload);
    }
    out
}

/// Parses checkpoint bytes; `load_checkpoint` reads them from a file.
pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut header = Dec::new(bytes, "header");
    if header.take(4)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = header.u16()?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion { got: version });
    }
    let count = header.u8()? as usize;
    let mut ckpt = Checkpoint::default();
    let mut seen = [false; 5];
    for _ in 0..count {
        let id = header.u8()?;
        let offset = header.u64()? as usize;
        let len = header.u64()? as usize;
        let name = section_name(id);
        if !(1..=4).contains(&id) {
            return Err(corrupt("header", format!("unknown section id {id}")));
        }
        if seen[id as usize] {
            return Err(corrupt("header", format!("duplicate {name} section")));
        }
        seen[id as usize] = true;
        let end = offset
            .checked_add(len)
            .filter(|&e| e <= bytes.len())
            .ok_or(CheckpointError::Truncated { section: name })?;
        let payload = &bytes[offset..end];
        match id {
            SECTION_SCHEDULE => ckpt.schedule = Some(decode_schedule(payload)?),
            SECTION_NETWORK => ckpt.model = Some(decode_model(payload)?),
            SECTION_GENERATOR => ckpt.generator = Some(decode_generator(payload)?),
            SECTION_OPTIMIZER => ckpt.trainer = Some(decode_trainer(payload)?),
            _ => unreachable!(),
        }
    }
    Ok(ckpt)
}

/// Writes a checkpoint file.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    std::fs::write(path, to_bytes(ckpt))?;
    Ok(())
}

/// Reads a checkpoint file.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = std::fs::read(path)?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use esddpm_core::nn::NetworkConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_model(conditional: bool) -> DiffusionModel<Network> {
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let schedule = NoiseSchedule::linear(20, 1e-3, 0.05).unwrap();
        let mut config = NetworkConfig::new(2, 20).with_hidden(vec![8, 6]);
        config.time_dim = 4;
        if conditional {
            config = config.with_classes(3);
            config.class_emb_dim = 4;
        }
        let net = Network::new(&config, &mut rng).unwrap();
        DiffusionModel::new(net, schedule, 15, SigmaMode::BetaTilde).unwrap()
    }

    fn sample_generator() -> BaseGenerator {
        let params = GmmParams::from_parts(
            vec![0.25, 0.75],
            vec![vec![0.0, 1.0], vec![-2.0, 0.5]],
            vec![vec![0.5, 0.5], vec![1.0, 0.25]],
        )
        .unwrap();
        BaseGenerator::gmm(params)
    }

    #[test]
    fn byte_round_trip_preserves_everything_bitwise() {
        let model = sample_model(true);
        let mut ckpt = Checkpoint::from_model(&model);
        ckpt.generator = Some(sample_generator());
        ckpt.trainer = Some(TrainerState {
            iterations_done: 17,
            rng_seed: [7; 32],
            rng_stream: 3,
            rng_word_pos: 123_456,
            adam_step: 17,
            adam_m: vec![0.5, -0.25, f64::MIN_POSITIVE],
            adam_v: vec![1e-300, 2.0, 3.0],
        });
        let bytes = to_bytes(&ckpt);
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back.schedule, ckpt.schedule);
        assert_eq!(back.model, ckpt.model);
        assert_eq!(back.generator, ckpt.generator);
        assert_eq!(back.trainer, ckpt.trainer);
        // Save-load-save is byte-identical.
        assert_eq!(to_bytes(&back), bytes);
    }

    #[test]
    fn every_generator_kind_round_trips() {
        let gmm = GmmParams::from_parts(
            vec![1.0],
            vec![vec![0.0, 0.0]],
            vec![vec![1.0, 1.0]],
        )
        .unwrap();
        let conditional =
            BaseGenerator::conditional_gmm(vec![gmm.clone(), gmm.clone()]).unwrap();
        let oracle = BaseGenerator::oracle(
            OracleSampler::new(
                vec![vec![0.0, 1.0], vec![2.0, 3.0]],
                Some(vec![0, 1]),
                0.05,
            )
            .unwrap(),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let enc = Mlp::new(&[2, 6, 4], Activation::Tanh, false, &mut rng).unwrap();
        let dec = Mlp::new(&[2, 6, 2], Activation::Silu, false, &mut rng).unwrap();
        let vae = BaseGenerator::vae(VaeParams::from_parts(enc, dec, 2, 2, None).unwrap());
        for generator in [BaseGenerator::gmm(gmm), conditional, oracle, vae] {
            let ckpt = Checkpoint {
                generator: Some(generator),
                ..Checkpoint::default()
            };
            let back = from_bytes(&to_bytes(&ckpt)).unwrap();
            assert_eq!(back.generator, ckpt.generator);
        }
    }

    #[test]
    fn diffusion_model_rebuild_matches_the_original() {
        let model = sample_model(false);
        let ckpt = Checkpoint::from_model(&model);
        let back = from_bytes(&to_bytes(&ckpt)).unwrap();
        let rebuilt = back.diffusion_model().unwrap();
        assert_eq!(rebuilt.net, model.net);
        assert_eq!(rebuilt.schedule, model.schedule);
        assert_eq!(rebuilt.trained_horizon(), model.trained_horizon());
        assert_eq!(rebuilt.sigma_mode, model.sigma_mode);
    }

    #[test]
    fn wrong_magic_and_version_are_explicit_errors() {
        let ckpt = Checkpoint::from_model(&sample_model(false));
        let mut bytes = to_bytes(&ckpt);
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(from_bytes(&wrong), Err(CheckpointError::BadMagic)));
        bytes[4] = 9;
        assert!(matches!(
            from_bytes(&bytes),
            Err(CheckpointError::UnsupportedVersion { got: 9 })
        ));
    }

    #[test]
    fn truncation_names_the_failing_section() {
        let mut ckpt = Checkpoint::from_model(&sample_model(false));
        ckpt.generator = Some(sample_generator());
        let bytes = to_bytes(&ckpt);
        // Cut inside the last section's payload.
        let cut = &bytes[..bytes.len() - 3];
        match from_bytes(cut) {
            Err(CheckpointError::Truncated { section }) => {
                assert_eq!(section, "generator");
            }
            other => panic!("expected truncation, got {other:?}"),
        }
        // Cut inside the header table.
        match from_bytes(&bytes[..8]) {
            Err(CheckpointError::Truncated { section }) => assert_eq!(section, "header"),
            other => panic!("expected header truncation, got {other:?}"),
        }
    }

    #[test]
    fn corrupt_payloads_name_their_section() {
        let ckpt = Checkpoint {
            schedule: Some(NoiseSchedule::linear(5, 1e-3, 0.02).unwrap()),
            ..Checkpoint::default()
        };
        let mut bytes = to_bytes(&ckpt);
        // Flip one beta to an out-of-range value; the schedule rebuild
        // must reject it and say which section failed.
        let payload_start = bytes.len() - 5 * 8;
        bytes[payload_start..payload_start + 8].copy_from_slice(&f64::to_le_bytes(2.0));
        match from_bytes(&bytes) {
            Err(CheckpointError::Corrupt { section, .. }) => assert_eq!(section, "schedule"),
            other => panic!("expected corruption, got {other:?}"),
        }
    }

    #[test]
    fn missing_sections_are_reported_on_rebuild() {
        let ckpt = Checkpoint::default();
        assert!(matches!(
            ckpt.diffusion_model(),
            Err(CheckpointError::MissingSection { section: "schedule" })
        ));
    }

    #[test]
    fn file_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut ckpt = Checkpoint::from_model(&sample_model(true));
        ckpt.generator = Some(sample_generator());
        save_checkpoint(&path, &ckpt).unwrap();
        let back = load_checkpoint(&path).unwrap();
        let second = dir.path().join("again.ckpt");
        save_checkpoint(&second, &back).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&second).unwrap()
        );
    }
}
