//! Implementations behind the CLI subcommands.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::bitstream::{self, BitstreamHeader, HEADER_LEN};
use crate::image::ImageFile;
use crate::metrics::{mse, psnr_db};
use crate::model::{
    self, decode_stream_bytes, encode_to_stream_bytes, init_stack_kmeans, load_model,
    pad_to_multiple, save_model, Model, ModelConfig, Trainer, TrainerOptions,
};
use crate::rvq::{index_entropy, RvqStack};
use crate::synthetic;
use crate::tensor::{Tape, Tensor};

use super::{
    CliError, CliResult, DecodeArgs, EncodeArgs, InspectArgs, PacketSimArgs, PreviewArgs,
    TrainArgs, MODEL_ENV,
};

fn rec(kind: &str, fields: &[String]) {
    println!("REC\t{kind}\t{}", fields.join("\t"));
}

fn resolve_model_path(flag: &Option<PathBuf>) -> CliResult<PathBuf> {
    if let Some(p) = flag {
        return Ok(p.clone());
    }
    if let Ok(env) = std::env::var(MODEL_ENV) {
        if !env.is_empty() {
            return Ok(PathBuf::from(env));
        }
    }
    Err(CliError::Usage(format!(
        "no model given: pass --model or set ${MODEL_ENV}"
    )))
}

fn load_model_for(flag: &Option<PathBuf>) -> CliResult<(Model, RvqStack)> {
    let path = resolve_model_path(flag)?;
    Ok(load_model(&path)?)
}

fn load_image_tensor(path: &Path) -> CliResult<Tensor> {
    Ok(ImageFile::load(path)?.to_tensor())
}

fn load_image_dir(dir: &Path) -> CliResult<Vec<Tensor>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("ppm") | Some("png")
            )
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Usage(format!(
            "no .ppm images found in {}",
            dir.display()
        )));
    }
    paths.iter().map(|p| load_image_tensor(p)).collect()
}

pub fn train(args: TrainArgs) -> CliResult<()> {
    let mut cfg = ModelConfig::desk_scale();
    if let Some(v) = args.stages {
        cfg.n_stages = v;
    }
    if let Some(v) = args.l_bits {
        cfg.l_bits = v;
    }
    if let Some(v) = args.c1 {
        cfg.c1 = v;
    }
    if let Some(v) = args.c2 {
        cfg.c2 = v;
    }
    if let Some(v) = args.m_enc {
        cfg.m_enc = v;
    }
    if let Some(v) = args.m_dec {
        cfg.m_dec = v;
    }
    if let Some(f) = args.downsample {
        if f % 2 != 0 {
            return Err(CliError::Usage(format!("--downsample {f} must be even")));
        }
        cfg.total_downsample = f;
        cfg.unshuffle_factor = f / 2;
    }
    if let Some(v) = args.crop {
        cfg.crop = v;
    }
    if let Some(v) = args.batch {
        cfg.batch = v;
    }
    if let Some(v) = args.lr {
        cfg.lr = v;
    }
    if let Some(v) = args.p_weight {
        cfg.p_weight = v;
    }
    cfg.validate().map_err(CliError::from)?;

    let dataset: Vec<Tensor> = if args.synthetic {
        let side = (cfg.crop as usize * 3 / 2).div_ceil(8) * 8;
        synthetic::dataset(
            synthetic::derive_seed(args.seed, 0xDA7A),
            args.synthetic_count,
            side,
            side,
        )
    } else {
        let dir = args.data_dir.as_ref().ok_or_else(|| {
            CliError::Usage("pass a data directory or --synthetic".to_string())
        })?;
        load_image_dir(dir)?
    };
    println!(
        "training on {} images ({} iterations, seed {})",
        dataset.len(),
        args.iters,
        args.seed
    );

    let model = Model::init(cfg, synthetic::derive_seed(args.seed, 0x0DE1))?;
    let mut kmeans_rng =
        ChaCha20Rng::seed_from_u64(synthetic::derive_seed(args.seed, 0xC0DE));
    let stack = init_stack_kmeans(&model, &dataset, &mut kmeans_rng)?;
    let mut trainer = Trainer::new(
        model,
        stack,
        synthetic::derive_seed(args.seed, 0x7EA1),
        TrainerOptions::default(),
    )?;

    let mut epoch = 0usize;
    while trainer.steps_done < args.iters {
        epoch += 1;
        let m = trainer.train_epoch(&dataset)?;
        let l1s: Vec<String> = m.stages.iter().map(|s| format!("{:.4}", s.l1)).collect();
        println!(
            "epoch {epoch:4} steps {:6} loss {:.5} | per-stage L1 {}",
            trainer.steps_done,
            m.mean_loss,
            l1s.join(" ")
        );
        rec(
            "train_epoch",
            &[
                epoch.to_string(),
                trainer.steps_done.to_string(),
                format!("{:.6}", m.mean_loss),
            ],
        );
        for s in &m.stages {
            rec(
                "train_stage",
                &[
                    epoch.to_string(),
                    s.stage.to_string(),
                    format!("{:.6}", s.l1),
                    format!("{:.6}", s.mse),
                ],
            );
        }
    }

    save_model(&trainer.model, &trainer.stack, &args.out)?;
    println!(
        "wrote {} ({} parameters, {} stages)",
        args.out.display(),
        trainer.model.param_count(),
        trainer.model.config.n_stages
    );
    Ok(())
}

pub fn encode(args: EncodeArgs) -> CliResult<()> {
    let (model, stack) = load_model_for(&args.model)?;
    let image = load_image_tensor(&args.image)?;
    let stages = args.stages.unwrap_or(model.config.n_stages as usize);
    let start = Instant::now();
    let bytes = encode_to_stream_bytes(&model, &stack, &image, stages)?;
    let encode_ms = start.elapsed().as_secs_f64() * 1e3;
    let header = BitstreamHeader::parse(&bytes)?;
    std::fs::write(&args.out, &bytes)
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", args.out.display())))?;
    println!(
        "encoded {}x{} with {} stages: {} bytes, bpp {:.4} ({:.1} ms)",
        header.orig_width,
        header.orig_height,
        stages,
        bytes.len(),
        header.bpp(),
        encode_ms
    );
    rec(
        "encode",
        &[
            header.orig_width.to_string(),
            header.orig_height.to_string(),
            stages.to_string(),
            bytes.len().to_string(),
            format!("{:.6}", header.bpp()),
            format!("{encode_ms:.2}"),
        ],
    );
    Ok(())
}

pub fn decode(args: DecodeArgs) -> CliResult<()> {
    let (model, stack) = load_model_for(&args.model)?;
    let bytes = std::fs::read(&args.stream)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", args.stream.display())))?;
    let start = Instant::now();
    let (tensor, used) = decode_stream_bytes(&model, &stack, &bytes, args.stages)?;
    let decode_ms = start.elapsed().as_secs_f64() * 1e3;
    let img = ImageFile::from_tensor(&tensor)?;
    img.save(&args.out)?;
    println!(
        "decoded {} stages to {}x{} ({:.1} ms)",
        used, img.width, img.height, decode_ms
    );
    rec(
        "decode",
        &[
            used.to_string(),
            img.width.to_string(),
            img.height.to_string(),
            format!("{decode_ms:.2}"),
        ],
    );
    Ok(())
}

pub fn preview(args: PreviewArgs) -> CliResult<()> {
    let (model, stack) = load_model_for(&args.model)?;
    let bytes = std::fs::read(&args.stream)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", args.stream.display())))?;
    let decoded = bitstream::deserialize(&bytes)?;
    let original = match &args.original {
        Some(p) => Some(load_image_tensor(p)?),
        None => None,
    };
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", args.out_dir.display())))?;

    println!("stage    bpp        mse       psnr_db");
    let start = Instant::now();
    for k in 1..=decoded.stages.len() {
        let (tensor, _) = decode_stream_bytes(&model, &stack, &bytes, Some(k))?;
        let path = args.out_dir.join(format!("stage_{k}.ppm"));
        ImageFile::from_tensor(&tensor)?.write_ppm(&path)?;
        let mut header = decoded.header;
        header.stages_present = k as u8;
        let (mse_s, psnr_s) = match &original {
            Some(orig) => {
                let m = mse(orig, &tensor);
                (format!("{m:.6}"), format!("{:.4}", psnr_db(m)))
            }
            None => ("-".to_string(), "-".to_string()),
        };
        println!("{k:>5}  {:>8.4}  {mse_s:>9}  {psnr_s:>8}", header.bpp());
        rec(
            "preview_stage",
            &[
                k.to_string(),
                format!("{:.6}", header.bpp()),
                mse_s,
                psnr_s,
            ],
        );
    }
    let decode_ms = start.elapsed().as_secs_f64() * 1e3;
    println!(
        "wrote {} previews to {} ({decode_ms:.1} ms)",
        decoded.stages.len(),
        args.out_dir.display()
    );
    Ok(())
}

pub fn inspect(args: InspectArgs) -> CliResult<()> {
    let bytes = std::fs::read(&args.input)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", args.input.display())))?;

    if bytes.starts_with(model::MODEL_MAGIC) {
        inspect_model(&args, &bytes)
    } else {
        inspect_stream(&args, &bytes)
    }
}

fn inspect_model(args: &InspectArgs, bytes: &[u8]) -> CliResult<()> {
    let (model, stack) = crate::model::load_model(&args.input)?;
    let _ = bytes;
    let c = &model.config;
    println!(
        "model: c1={} c2={} m_enc={} m_dec={} N={} L={} r={} f={} ({} parameters)",
        c.c1,
        c.c2,
        c.m_enc,
        c.m_dec,
        c.n_stages,
        c.l_bits,
        c.ffn_expansion,
        c.total_downsample,
        model.param_count()
    );
    rec(
        "model_config",
        &[
            c.c1.to_string(),
            c.c2.to_string(),
            c.m_enc.to_string(),
            c.m_dec.to_string(),
            c.n_stages.to_string(),
            c.l_bits.to_string(),
            c.ffn_expansion.to_string(),
            c.total_downsample.to_string(),
            model.param_count().to_string(),
        ],
    );
    if let Some(dir) = &args.entropy {
        entropy_report(&model, &stack, dir)?;
    }
    Ok(())
}

fn inspect_stream(args: &InspectArgs, bytes: &[u8]) -> CliResult<()> {
    let decoded = bitstream::deserialize(bytes)?;
    let h = decoded.header;
    println!(
        "stream: {}x{} N={} L={} f={} stages={} bpp={:.4}",
        h.orig_width,
        h.orig_height,
        h.n_total,
        h.l_bits,
        h.downsample_f,
        h.stages_present,
        h.bpp()
    );
    rec(
        "inspect_header",
        &[
            h.orig_width.to_string(),
            h.orig_height.to_string(),
            h.n_total.to_string(),
            h.l_bits.to_string(),
            h.downsample_f.to_string(),
            h.stages_present.to_string(),
            format!("{:.6}", h.bpp()),
        ],
    );
    let stage_bytes = h.stage_bytes();
    println!("stage-span  offset      bytes");
    for k in 0..decoded.stages.len() {
        let offset = HEADER_LEN + k * stage_bytes;
        println!("{:>9}  {offset:>7}  {stage_bytes:>9}", k + 1);
        rec(
            "inspect_stage",
            &[
                (k + 1).to_string(),
                offset.to_string(),
                stage_bytes.to_string(),
            ],
        );
    }
    if decoded.truncated_tail > 0 {
        println!("trailing truncated stage: {} bytes", decoded.truncated_tail);
    }
    if let Some(dir) = &args.entropy {
        let (model, stack) = load_model_for(&args.model)?;
        entropy_report(&model, &stack, dir)?;
    }
    Ok(())
}

fn entropy_report(model: &Model, stack: &RvqStack, dir: &Path) -> CliResult<()> {
    let images = load_image_dir(dir)?;
    let n = model.config.n_stages as usize;
    let k = model.config.codebook_size();
    let l = model.config.l_bits as f64;
    let mut hists = vec![vec![0u64; k]; n];
    for img in &images {
        let f = model.config.total_downsample as usize;
        let (padded, _) = pad_to_multiple(img, f)?;
        let mut tape = Tape::new();
        let xt = tape.constant(padded);
        let y = model.analysis_forward(&mut tape, xt)?;
        let encoding = stack.encode(tape.value(y), n)?;
        for (i, st) in encoding.indices.iter().enumerate() {
            for &idx in &st.grid {
                hists[i][idx as usize] += 1;
            }
        }
    }
    println!("stage  entropy_bits  of_max  ideal_saving");
    for (i, hist) in hists.iter().enumerate() {
        let bits = index_entropy(hist)?;
        let saving = 1.0 - bits / l;
        println!(
            "{:>5}  {bits:>11.4}  {:>5.1}%  {:>11.2}%",
            i + 1,
            100.0 * bits / l,
            100.0 * saving
        );
        rec(
            "entropy",
            &[
                (i + 1).to_string(),
                format!("{bits:.6}"),
                format!("{l:.0}"),
                format!("{saving:.6}"),
            ],
        );
    }
    Ok(())
}

pub fn packet_sim(args: PacketSimArgs) -> CliResult<()> {
    let (model, stack) = load_model_for(&args.model)?;
    let image = load_image_tensor(&args.image)?;
    let n = model.config.n_stages as usize;
    let bytes = encode_to_stream_bytes(&model, &stack, &image, n)?;
    let header_bytes = &bytes[..HEADER_LEN];
    let payload = &bytes[HEADER_LEN..];
    let packets = bitstream::packetize(payload, args.payload)?;
    if let Some(dir) = &args.out_dir {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", dir.display())))?;
    }
    println!(
        "{} payload bytes in {} packets of {} (header {} bytes rides with packet 1)",
        payload.len(),
        packets.len(),
        args.payload,
        HEADER_LEN
    );
    println!("packet  t_label_s  cum_bytes  stages  bpp     note");

    let mut stages_seen = 0usize;
    for k in 1..=packets.len() {
        let prefix = bitstream::reassemble(&packets[..k])?;
        let mut stream = header_bytes.to_vec();
        stream.extend_from_slice(&prefix);
        let decodable = match bitstream::deserialize(&stream) {
            Ok(d) => d.stages.len(),
            Err(_) => 0,
        };
        let mut h = BitstreamHeader::parse(header_bytes)?;
        let bpp = if decodable > 0 {
            h.stages_present = decodable as u8;
            h.bpp()
        } else {
            0.0
        };
        let mut note = String::new();
        if decodable > stages_seen {
            note = format!("stage {decodable} complete");
            if let Some(dir) = &args.out_dir {
                let (tensor, used) = decode_stream_bytes(&model, &stack, &stream, None)?;
                let path = dir.join(format!("packet_{k:03}_stage_{used}.ppm"));
                ImageFile::from_tensor(&tensor)?.write_ppm(&path)?;
            }
            stages_seen = decodable;
        }
        println!(
            "{k:>6}  {:>9.1}  {:>9}  {decodable:>6}  {bpp:.4}  {note}",
            k as f64 * args.interval_label,
            prefix.len(),
        );
        rec(
            "packet",
            &[
                k.to_string(),
                prefix.len().to_string(),
                decodable.to_string(),
                format!("{bpp:.6}"),
                format!("{:.1}", k as f64 * args.interval_label),
            ],
        );
    }
    Ok(())
}
