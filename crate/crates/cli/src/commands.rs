use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use lrfr::analysis::{
    embed_normalized, gradient_norm_sweep, group_centroids, pair_similarities, pca_project, per_dim_error,
    report_stem, resolution_accuracy_sweep, similarity_distributions, verification_accuracy,
};
use lrfr::datagen::{generate_dataset, load_dataset, make_pairs, save_dataset, LabeledDataset, Split};
use lrfr::imageops::{classify_difficulty, degrade, ssim, ImageBuffer};
use lrfr::io::write_atomic;
use lrfr::model::{read_config, read_params, Checkpoint};
use lrfr::numerics::{GradCheckConfig, Tensor};
use lrfr::training::{train, ExperimentConfig};
use lrfr::{gradsuite, Error, Result};

use crate::{AugmentArgs, Command, Common, GradCheckArgs, ModelArgs, TrainArgs};

/// Images per gradient-norm batch.
const GRAD_BATCH: usize = 64;

pub fn dispatch(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::GenData(a) => gen_data(&a),
        Command::Train(a) => run_train(&a),
        Command::Eval(a) => eval(&a),
        Command::SweepAccuracy(a) => sweep_accuracy(&a),
        Command::SweepGradnorm(a) => sweep_gradnorm(&a),
        Command::SimHist(a) => sim_hist(&a),
        Command::DimError(a) => dim_error(&a),
        Command::Pca(a) => pca(&a),
        Command::Augment(a) => augment(&a),
        Command::GradCheck(a) => grad_check(&a),
    }
    .map(|ok| if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    Ok(match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn dataset(cfg: &ExperimentConfig, input_size: usize) -> Result<LabeledDataset> {
    match &cfg.data_dir {
        Some(dir) => load_dataset(dir, input_size),
        None => generate_dataset(&lrfr::datagen::DatasetSpec {
            input_size,
            ..cfg.data.clone()
        }),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Path {
        path: dir.into(),
        message: e.to_string(),
    })
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    write_atomic(path, &bytes)
}

fn gen_data(a: &Common) -> Result<bool> {
    let cfg = load_config(a.config.as_deref(), a.seed)?;
    let ds = generate_dataset(&cfg.data)?;
    create_dir(&a.out)?;
    save_dataset(&ds, &a.out)?;
    println!("wrote {} images of {} identities to {}", ds.len(), ds.n_identities(), a.out.display());
    Ok(true)
}

fn run_train(a: &TrainArgs) -> Result<bool> {
    let cfg = load_config(Some(&a.config), a.seed)?;
    let ds = dataset(&cfg, cfg.train.network.input_size)?;
    create_dir(&a.out)?;
    write_atomic(&a.out.join("config.json"), serde_json::to_string_pretty(&cfg)?.as_bytes())?;
    let outcome = train(&cfg.train, &ds, Some(&a.out))?;
    for (epoch, loss) in outcome.log.epoch_means() {
        println!("epoch {epoch:>3}  loss {loss:.4}");
    }
    for p in &outcome.checkpoints {
        println!("checkpoint {}", p.display());
    }
    Ok(true)
}

/// Everything a model-level analysis needs.
struct ModelContext {
    ck: Checkpoint,
    cfg: ExperimentConfig,
    ds: LabeledDataset,
    resolutions: Vec<usize>,
    model_id: String,
    seed: u64,
    out: PathBuf,
}

impl ModelContext {
    fn load(a: &ModelArgs) -> Result<Self> {
        let mut cfg = load_config(a.common.config.as_deref(), a.common.seed)?;
        if let Some(n) = a.pairs {
            cfg.eval.pairs = n;
        }
        let ck = Checkpoint::load(&a.checkpoint)?;
        let input_size = read_config(&ck)?.input_size;
        let ds = dataset(&cfg, input_size)?;
        let resolutions = match &a.resolutions {
            Some(r) => r.clone(),
            None => {
                let mut r: Vec<usize> = cfg.eval.resolutions.iter().copied().filter(|&r| r < input_size).collect();
                r.push(input_size);
                r
            }
        };
        let model_id = a.model_id.clone().unwrap_or_else(|| {
            a.checkpoint
                .canonicalize()
                .ok()
                .and_then(|p| p.parent()?.file_name().map(|n| n.to_string_lossy().into_owned()))
                .unwrap_or_else(|| "model".into())
        });
        create_dir(&a.common.out)?;
        Ok(Self {
            seed: a.common.seed.unwrap_or(cfg.train.seed),
            out: a.common.out.clone(),
            ck,
            cfg,
            ds,
            resolutions,
            model_id,
        })
    }

    fn pairs(&self) -> Result<lrfr::datagen::VerificationPairs> {
        make_pairs(&self.ds, self.cfg.eval.pairs, self.cfg.eval.pair_seed)
    }

    /// Eval-split images, or every image when there is no eval split.
    fn probe(&self) -> Vec<ImageBuffer> {
        let mut idx = self.ds.indices(Split::Eval);
        if idx.is_empty() {
            idx = (0..self.ds.len()).collect();
        }
        idx.into_iter().map(|i| self.ds.images[i].clone()).collect()
    }
}

fn eval(a: &ModelArgs) -> Result<bool> {
    let m = ModelContext::load(a)?;
    let pairs = m.pairs()?;
    let params = read_params::<f32>(&m.ck)?;
    let same: Vec<bool> = pairs.pairs.iter().map(|p| p.same).collect();
    let mut rows = Vec::new();
    println!("{:>10} {:>10} {:>10}", "resolution", "accuracy", "overlap");
    for &r in &m.resolutions {
        let sims = pair_similarities(&params, &m.ds, &pairs, r)?;
        let acc = verification_accuracy(&sims, &same)?;
        let hist = lrfr::analysis::SimilarityHistogram::from_similarities(&sims, &same, r)?;
        println!("{r:>10} {acc:>10.4} {:>10.4}", hist.overlap);
        rows.push(vec![r.to_string(), acc.to_string(), hist.overlap.to_string()]);
    }
    let stem = report_stem("eval", &m.model_id, m.seed);
    write_csv(&m.out.join(format!("{stem}.csv")), &["resolution", "accuracy", "overlap"], rows)?;
    Ok(true)
}

fn sweep_accuracy(a: &ModelArgs) -> Result<bool> {
    let m = ModelContext::load(a)?;
    let rep = resolution_accuracy_sweep(&m.ck, &m.ds, &m.pairs()?, &m.resolutions, &m.model_id, m.seed)?;
    for (r, v) in rep.resolutions.iter().zip(&rep.values) {
        println!("{r:>5} px  accuracy {v:.4}");
    }
    rep.save(&m.out, "sweep_accuracy")?;
    Ok(true)
}

fn sweep_gradnorm(a: &ModelArgs) -> Result<bool> {
    let m = ModelContext::load(a)?;
    let mut idx = m.ds.indices(Split::Train);
    if idx.is_empty() {
        idx = (0..m.ds.len()).collect();
    }
    let stride = (idx.len() / GRAD_BATCH).max(1);
    let picked: Vec<usize> = idx.into_iter().step_by(stride).take(GRAD_BATCH).collect();
    let batch: Vec<ImageBuffer> = picked.iter().map(|&i| m.ds.images[i].clone()).collect();
    let labels: Vec<usize> = picked.iter().map(|&i| m.ds.labels[i]).collect();
    let rep = gradient_norm_sweep(&m.ck, &batch, &labels, &m.resolutions, &m.cfg.train.loss, &m.model_id, m.seed)?;
    for (r, v) in rep.resolutions.iter().zip(&rep.values) {
        println!("{r:>5} px  grad norm {v:.4}");
    }
    println!("argmax {} px", rep.argmax());
    rep.save(&m.out, "sweep_gradnorm")?;
    Ok(true)
}

fn sim_hist(a: &ModelArgs) -> Result<bool> {
    let m = ModelContext::load(a)?;
    let pairs = m.pairs()?;
    for &r in &m.resolutions {
        let h = similarity_distributions(&m.ck, &m.ds, &pairs, r)?;
        println!("{r:>5} px  overlap {:.4}", h.overlap);
        h.save(&m.out, &m.model_id, m.seed)?;
    }
    Ok(true)
}

fn dim_error(a: &ModelArgs) -> Result<bool> {
    let m = ModelContext::load(a)?;
    let probe = m.probe();
    for &r in &m.resolutions {
        let e = per_dim_error(&m.ck, &probe, r)?;
        println!("{r:>5} px  mean |f_hr - f_lr| {:.6}", e.mean());
        e.save(&m.out, &m.model_id, m.seed)?;
    }
    Ok(true)
}

/// HR embeddings and one degraded copy per requested resolution share a
/// single projection, so the gap between them is visible in 2-D.
fn pca(a: &ModelArgs) -> Result<bool> {
    let m = ModelContext::load(a)?;
    let params = read_params::<f32>(&m.ck)?;
    let input_size = params.config.input_size;
    let mut idx = m.ds.indices(Split::Eval);
    if idx.is_empty() {
        idx = (0..m.ds.len()).collect();
    }
    let images: Vec<&ImageBuffer> = idx.iter().map(|&i| &m.ds.images[i]).collect();
    let mut resolutions = vec![input_size];
    resolutions.extend(m.resolutions.iter().copied().filter(|&r| r != input_size));

    let n_ids = m.ds.n_identities();
    let (mut rows, mut groups, mut meta) = (Vec::new(), Vec::new(), Vec::new());
    for (ri, &r) in resolutions.iter().enumerate() {
        for (emb, &i) in embed_normalized(&params, &images, r)?.into_iter().zip(&idx) {
            rows.extend(emb);
            groups.push(ri * n_ids + m.ds.labels[i]);
            meta.push((i, r));
        }
    }
    let d = params.config.embedding_dim;
    let x = Tensor::new(vec![meta.len(), d], rows)?;
    let res = pca_project(&x, 2, m.seed)?;
    println!(
        "explained variance {:.4} {:.4}",
        res.explained[0], res.explained[1]
    );

    let name = |g: usize| (resolutions[g / n_ids], &m.ds.identity_names[g % n_ids]);
    let point_rows = meta.iter().enumerate().map(|(k, &(i, r))| {
        let c = res.coords.row(k);
        vec![i.to_string(), m.ds.identity_names[m.ds.labels[i]].clone(), r.to_string(), c[0].to_string(), c[1].to_string()]
    });
    let stem = report_stem("pca", &m.model_id, m.seed);
    write_csv(&m.out.join(format!("{stem}.csv")), &["image", "identity", "resolution", "pc1", "pc2"], point_rows)?;
    let centroid_rows = group_centroids(&res.coords, &groups)?.into_iter().map(|(g, c)| {
        let (r, id) = name(g);
        vec![id.clone(), r.to_string(), c[0].to_string(), c[1].to_string()]
    });
    let stem = report_stem("pca_centroids", &m.model_id, m.seed);
    write_csv(&m.out.join(format!("{stem}.csv")), &["identity", "resolution", "pc1", "pc2"], centroid_rows)?;
    Ok(true)
}

fn augment(a: &AugmentArgs) -> Result<bool> {
    let img = ImageBuffer::load_png(&a.input)?;
    let stem = a
        .input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into());
    create_dir(&a.out)?;
    let mut rows = Vec::new();
    println!("{:>10} {:>8} {:>16}", "resolution", "ssim", "tier");
    for &r in &a.resolutions {
        let out = degrade(&img, r)?;
        let s = ssim(&img, &out)?;
        let tier = classify_difficulty(r);
        println!("{r:>10} {s:>8.4} {tier:>16}");
        out.save_png(&a.out.join(format!("{stem}_{r}px.png")))?;
        rows.push(vec![r.to_string(), s.to_string(), tier.to_string()]);
    }
    write_csv(&a.out.join(format!("augment_{stem}.csv")), &["resolution", "ssim", "tier"], rows)?;
    Ok(true)
}

fn grad_check(a: &GradCheckArgs) -> Result<bool> {
    let cfg = GradCheckConfig::default();
    let report = gradsuite::check_seeds(a.seed..a.seed + a.seeds, &cfg)?;
    println!("{}", report.worst_by_name());
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write_atomic(&dir.join("grad_check.json"), serde_json::to_string_pretty(&report)?.as_bytes())?;
    }
    Ok(report.pass)
}
