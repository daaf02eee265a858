use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};

use ashgcl::config::{parse_config, TrainConfig};
use ashgcl::eval::{classify_all_splits, cluster_embeddings, ClassificationReport};
use ashgcl::graph::io::load_dataset;
use ashgcl::graph::HeteroGraph;
use ashgcl::manifest::{fingerprint_dataset, RunManifest};
use ashgcl::model::{ModelParams, ViewKind};
use ashgcl::train::{self, checkpoint, export, full_objective_grad_check};

#[derive(Parser)]
#[command(
    name = "ashgcl",
    about = "Heterogeneous graph contrastive learning: train, evaluate and audit node embeddings",
    version
)]
struct Cli {
    /// Worker threads (falls back to the ASHGCL_THREADS env var, then to
    /// all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct DataArgs {
    /// Dataset directory (manifest.json + TSV files).
    #[arg(long)]
    data: PathBuf,
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed override for the run.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the model and export embeddings, checkpoint and manifest.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export embeddings from an existing checkpoint.
    Embed {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Which view to export (fs | lo | ho); defaults to the config's
        /// export_view.
        #[arg(long)]
        view: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Linear-probe classification of exported embeddings.
    EvalClassify {
        #[command(flatten)]
        data: DataArgs,
        /// Embedding file (.tsv or .bin).
        #[arg(long)]
        emb: PathBuf,
        /// Report TSV destination (printed to stdout regardless).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// K-means clustering of exported embeddings.
    EvalCluster {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        emb: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump the similarity and meta-path adjacencies as edge-list TSVs.
    BuildViews {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump per-anchor positive-set sizes and overlap statistics.
    AuditPositives {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify analytic gradients of the full objective on the bundled
    /// 10-node fixture; exits non-zero when the max relative error
    /// exceeds the tolerance.
    Gradcheck {
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Write the bundled synthetic planted-class dataset to a directory.
    MakeFixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Grid sweep over hyperparameters, one train+eval per grid point.
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        /// Swept key (tau | theta | k | k_struct | k_attr |
        /// learning_rate | dropout | mu); repeat for a cross product.
        #[arg(long = "param", required = true)]
        params: Vec<String>,
        /// Value list per swept key: "0.1,0.2", "0.3..0.9" (step 0.1) or
        /// "0.3..0.9:0.2".
        #[arg(long = "values", required = true)]
        values: Vec<String>,
    },
}

fn main() {
    let cli = Cli::parse();
    let threads = cli.threads.or_else(|| {
        std::env::var("ASHGCL_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("thread pool initialized once");
    }
    if let Err(e) = run(cli.cmd) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn load_inputs(args: &DataArgs) -> Result<(HeteroGraph, TrainConfig, String)> {
    let graph = load_dataset(&args.data)
        .with_context(|| format!("loading dataset from {}", args.data.display()))?;
    let mut cfg = match &args.config {
        Some(path) => parse_config(path)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let fingerprint = fingerprint_dataset(&args.data)?;
    Ok((graph, cfg, fingerprint))
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Train { data, out } => cmd_train(&data, &out),
        Cmd::Embed {
            data,
            checkpoint,
            view,
            out,
        } => cmd_embed(&data, &checkpoint, view.as_deref(), &out),
        Cmd::EvalClassify { data, emb, out } => cmd_eval_classify(&data, &emb, out.as_deref()),
        Cmd::EvalCluster { data, emb, out } => cmd_eval_cluster(&data, &emb, out.as_deref()),
        Cmd::BuildViews { data, out } => cmd_build_views(&data, &out),
        Cmd::AuditPositives { data, out } => cmd_audit_positives(&data, &out),
        Cmd::Gradcheck { eps, tol } => cmd_gradcheck(eps, tol),
        Cmd::MakeFixture { out, seed } => {
            let g = ashgcl::graph::synthetic::sbm_fixture(&ashgcl::graph::synthetic::SbmConfig {
                seed,
                ..Default::default()
            });
            ashgcl::graph::io::save_dataset(&g, &out)?;
            println!(
                "synthetic fixture ({} target nodes, {} classes) -> {}",
                g.n_target(),
                g.num_classes(),
                out.display()
            );
            Ok(())
        }
        Cmd::Sweep {
            data,
            out,
            params,
            values,
        } => cmd_sweep(&data, &out, &params, &values),
    }
}

fn cmd_train(args: &DataArgs, out: &Path) -> Result<()> {
    let (graph, cfg, fingerprint) = load_inputs(args)?;
    std::fs::create_dir_all(out)?;
    let mut manifest = RunManifest::new(cfg.clone(), fingerprint);

    let started = std::time::Instant::now();
    let outcome = train::train(&cfg, &graph)?;
    eprintln!(
        "trained {} epochs in {:.1?} (best epoch {}, loss {:.6})",
        outcome.epochs_run,
        started.elapsed(),
        outcome.best_epoch,
        outcome.trace[outcome.best_epoch.saturating_sub(1)]
    );

    let ckpt = out.join("checkpoint.ckpt");
    checkpoint::save(&outcome.params, &manifest.hash(), &ckpt)?;
    manifest.add_artifact("checkpoint", &ckpt);

    let mut emb = outcome.embeddings.clone();
    emb.config_hash = manifest.hash();
    let tsv = out.join("embeddings.tsv");
    export::write_tsv(&emb, &tsv)?;
    manifest.add_artifact("embeddings_tsv", &tsv);
    let bin = out.join("embeddings.bin");
    export::write_bin(&emb, &bin)?;
    manifest.add_artifact("embeddings_bin", &bin);

    let trace_path = out.join("loss_trace.tsv");
    let mut trace = String::from("epoch\tloss\n");
    for (i, l) in outcome.trace.iter().enumerate() {
        trace.push_str(&format!("{}\t{}\n", i + 1, l));
    }
    std::fs::write(&trace_path, trace)?;
    manifest.add_artifact("loss_trace", &trace_path);

    manifest.save(&out.join("manifest.json"))?;
    println!(
        "run {} complete: {} x {} embeddings at {}",
        &manifest.hash()[..12],
        emb.values.nrows(),
        emb.values.ncols(),
        tsv.display()
    );
    Ok(())
}

fn cmd_embed(args: &DataArgs, ckpt_path: &Path, view: Option<&str>, out: &Path) -> Result<()> {
    let (graph, cfg, fingerprint) = load_inputs(args)?;
    let view = match view {
        None => cfg.export_view,
        Some(name) => {
            ViewKind::parse(name).with_context(|| format!("unknown view '{name}' (fs|lo|ho)"))?
        }
    };
    let loaded = checkpoint::load(ckpt_path)?;
    let manifest = RunManifest::new(cfg.clone(), fingerprint);
    if loaded.config_hash != manifest.hash() {
        bail!(
            "checkpoint was written by run {} but the current config+dataset hash to {}",
            &loaded.config_hash[..12.min(loaded.config_hash.len())],
            &manifest.hash()[..12]
        );
    }
    let ctx = train::prepare(&cfg, &graph)?;
    let mut params = ModelParams::init(
        &ctx.graph,
        cfg.dim,
        cfg.fs_layers,
        train::derive_seed(cfg.seed, "init", 0),
    );
    checkpoint::apply(&mut params, &loaded)?;
    let mut emb = train::export_embeddings_in_context(&params, &ctx, &cfg, view)?;
    emb.config_hash = manifest.hash();
    std::fs::create_dir_all(out)?;
    let tsv = out.join("embeddings.tsv");
    export::write_tsv(&emb, &tsv)?;
    export::write_bin(&emb, &out.join("embeddings.bin"))?;
    println!("exported {:?} view to {}", view, tsv.display());
    Ok(())
}

fn read_embeddings(path: &Path) -> Result<ashgcl::tape::Matrix> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("bin") => Ok(export::read_bin(path)?),
        _ => Ok(export::read_tsv(path)?),
    }
}

fn print_classification(reports: &[ClassificationReport]) {
    println!(
        "{:<10} {:>16} {:>16} {:>16}",
        "split", "Ma-F1", "Mi-F1", "AUC"
    );
    for r in reports {
        println!(
            "{:<10} {:>9.2} ± {:>4.2} {:>9.2} ± {:>4.2} {:>9.2} ± {:>4.2}",
            r.split,
            100.0 * r.macro_f1.mean,
            100.0 * r.macro_f1.std,
            100.0 * r.micro_f1.mean,
            100.0 * r.micro_f1.std,
            100.0 * r.auc.mean,
            100.0 * r.auc.std,
        );
    }
}

fn classification_tsv(reports: &[ClassificationReport]) -> String {
    let mut out =
        String::from("split\tmacro_f1\tmacro_f1_std\tmicro_f1\tmicro_f1_std\tauc\tauc_std\truns\n");
    for r in reports {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.split,
            r.macro_f1.mean,
            r.macro_f1.std,
            r.micro_f1.mean,
            r.micro_f1.std,
            r.auc.mean,
            r.auc.std,
            r.runs
        ));
    }
    out
}

fn cmd_eval_classify(args: &DataArgs, emb_path: &Path, out: Option<&Path>) -> Result<()> {
    let (graph, cfg, _) = load_inputs(args)?;
    let emb = read_embeddings(emb_path)?;
    let reports = classify_all_splits(emb.view(), &graph, cfg.seed)?;
    print_classification(&reports);
    if let Some(out) = out {
        if let Some(parent) = out.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(out, classification_tsv(&reports))?;
    }
    Ok(())
}

fn cmd_eval_cluster(args: &DataArgs, emb_path: &Path, out: Option<&Path>) -> Result<()> {
    let (graph, cfg, _) = load_inputs(args)?;
    let emb = read_embeddings(emb_path)?;
    let report = cluster_embeddings(emb.view(), &graph, cfg.seed)?;
    println!("{:<10} {:>8} {:>8}", "restarts", "NMI", "ARI");
    println!(
        "{:<10} {:>8.2} {:>8.2}",
        report.restarts,
        100.0 * report.nmi,
        100.0 * report.ari
    );
    if let Some(out) = out {
        if let Some(parent) = out.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(
            out,
            format!("nmi\tari\trestarts\n{}\t{}\t{}\n", report.nmi, report.ari, report.restarts),
        )?;
    }
    Ok(())
}

fn write_edge_list(adj: &ashgcl::graph::SparseAdj, path: &Path) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (i, j) in adj.iter_edges() {
        writeln!(w, "{i}\t{j}")?;
    }
    Ok(())
}

fn cmd_build_views(args: &DataArgs, out: &Path) -> Result<()> {
    let (graph, cfg, _) = load_inputs(args)?;
    let ctx = train::prepare(&cfg, &graph)?;
    std::fs::create_dir_all(out)?;
    let sim_path = out.join("view_similarity.tsv");
    write_edge_list(&ctx.views.similarity, &sim_path)?;
    println!(
        "similarity graph (theta={}): {} edges -> {}",
        cfg.theta,
        ctx.views.similarity.nnz(),
        sim_path.display()
    );
    for (p, adj) in ctx.graph.metapaths().iter().zip(&ctx.views.high_order) {
        let path = out.join(format!("view_metapath_{}.tsv", p.name()));
        write_edge_list(adj, &path)?;
        println!(
            "meta-path {}: {} edges (self-loops included) -> {}",
            p.name(),
            adj.nnz(),
            path.display()
        );
    }
    Ok(())
}

fn cmd_audit_positives(args: &DataArgs, out: &Path) -> Result<()> {
    let (graph, cfg, _) = load_inputs(args)?;
    let ctx = train::prepare(&cfg, &graph)?;
    std::fs::create_dir_all(out)?;
    let sets = &ctx.pos_sets;
    let n = sets.positives.len();
    let mut tsv = String::from("anchor\tn_struct\tn_attr\toverlap\tn_pos\tn_neg\n");
    let mut sum_pos = 0usize;
    let mut sum_overlap = 0usize;
    for i in 0..n {
        let overlap = sets.struct_pos[i]
            .iter()
            .filter(|j| sets.attr_pos[i].binary_search(j).is_ok())
            .count();
        sum_pos += sets.positives[i].len();
        sum_overlap += overlap;
        tsv.push_str(&format!(
            "{i}\t{}\t{}\t{overlap}\t{}\t{}\n",
            sets.struct_pos[i].len(),
            sets.attr_pos[i].len(),
            sets.positives[i].len(),
            sets.negatives[i].len()
        ));
    }
    let path = out.join("positives_audit.tsv");
    std::fs::write(&path, tsv)?;
    println!(
        "{n} anchors: mean |P| = {:.2}, mean struct/attr overlap = {:.2} -> {}",
        sum_pos as f64 / n as f64,
        sum_overlap as f64 / n as f64,
        path.display()
    );
    Ok(())
}

fn cmd_gradcheck(eps: f64, tol: f64) -> Result<()> {
    let err = full_objective_grad_check(eps)?;
    println!("max relative gradient error: {err:.3e} (tolerance {tol:.1e})");
    if err <= tol {
        Ok(())
    } else {
        bail!("gradient check failed: {err:.3e} > {tol:.1e}")
    }
}

fn parse_values(spec: &str) -> Result<Vec<f64>> {
    if let Some((range, step)) = spec.split_once(':') {
        let (a, b) = range
            .split_once("..")
            .with_context(|| format!("bad range '{spec}'"))?;
        return grid(a.parse()?, b.parse()?, step.parse()?);
    }
    if let Some((a, b)) = spec.split_once("..") {
        return grid(a.parse()?, b.parse()?, 0.1);
    }
    spec.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(Into::into))
        .collect()
}

fn grid(a: f64, b: f64, step: f64) -> Result<Vec<f64>> {
    if step <= 0.0 || b < a {
        bail!("bad range bounds {a}..{b}:{step}");
    }
    let mut out = Vec::new();
    let mut i = 0;
    loop {
        let v = a + step * i as f64;
        if v > b + 1e-12 {
            break;
        }
        out.push((v * 1e12).round() / 1e12);
        i += 1;
    }
    Ok(out)
}

fn apply_sweep_value(cfg: &mut TrainConfig, key: &str, v: f64) -> Result<()> {
    match key {
        "tau" => cfg.tau = v,
        "theta" => cfg.theta = v,
        "k" => {
            cfg.k_struct = v as usize;
            cfg.k_attr = v as usize;
        }
        "k_struct" => cfg.k_struct = v as usize,
        "k_attr" => cfg.k_attr = v as usize,
        "learning_rate" => cfg.learning_rate = v,
        "dropout" => cfg.dropout = v,
        "mu" => cfg.mu = v,
        other => bail!("unsupported sweep parameter '{other}'"),
    }
    Ok(())
}

fn cmd_sweep(args: &DataArgs, out: &Path, params: &[String], values: &[String]) -> Result<()> {
    if params.len() != values.len() {
        bail!(
            "{} --param flags but {} --values flags",
            params.len(),
            values.len()
        );
    }
    let (graph, base_cfg, _) = load_inputs(args)?;
    let grids: Vec<Vec<f64>> = values
        .iter()
        .map(|v| parse_values(v))
        .collect::<Result<_>>()?;
    std::fs::create_dir_all(out)?;

    let mut rows = String::new();
    rows.push_str(&params.join("\t"));
    rows.push_str("\tsplit\tmacro_f1\tmicro_f1\tauc\tnmi\tari\n");

    let mut point = vec![0usize; grids.len()];
    loop {
        let mut cfg = base_cfg.clone();
        let mut label = Vec::new();
        for (pi, key) in params.iter().enumerate() {
            let v = grids[pi][point[pi]];
            apply_sweep_value(&mut cfg, key, v)?;
            label.push(format!("{v}"));
        }
        cfg.validate()?;
        eprintln!("sweep point {}={}", params.join(","), label.join(","));
        let outcome = train::train(&cfg, &graph)?;
        let reports = classify_all_splits(outcome.embeddings.values.view(), &graph, cfg.seed)?;
        let cluster = cluster_embeddings(outcome.embeddings.values.view(), &graph, cfg.seed)?;
        for r in &reports {
            rows.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                label.join("\t"),
                r.split,
                r.macro_f1.mean,
                r.micro_f1.mean,
                r.auc.mean,
                cluster.nmi,
                cluster.ari
            ));
        }

        // advance the mixed-radix counter
        let mut c = 0;
        loop {
            point[c] += 1;
            if point[c] < grids[c].len() {
                break;
            }
            point[c] = 0;
            c += 1;
            if c == grids.len() {
                let path = out.join("sweep.tsv");
                std::fs::write(&path, rows)?;
                println!("sweep results -> {}", path.display());
                return Ok(());
            }
        }
    }
}
