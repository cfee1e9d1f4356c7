use std::fs;
use std::path::Path;

use clap::ValueEnum;
use itertools::Itertools;

use super::manifest::RunManifest;
use super::{AnalysisMode, AnalyzeArgs, CliError, Command, GenDataArgs, KernelArgs, KernelOpts, ModelKind, Preset, Report, SampleArgs, TrainArgs};
use crate::analysis::{
    balance_histogram, generate_held_out, generate_imbalanced_gaussians, gradient_variance_closed_form, gradient_variance_exact,
    gradient_variance_monte_carlo, synthetic_preset, ClassBlob,
};
use crate::eigen::{decompose_cached, effective_rank, symmetric_eigendecomposition, EigenDecomposition};
use crate::error::{Error, Result};
use crate::io::{fmt_f64, read_dataset, read_marginals, write_dataset, write_marginals, write_matrix, write_string};
use crate::kdpp::{
    brute_force_subset_distribution, correlation_matrix, marginal_probabilities, pair_inclusion_probabilities, KdppSampler,
    PairMode, Schedule,
};
use crate::kernels::{build_kernel, Dataset, KernelKind, SimilarityKernel};
use crate::trainer::{
    balanced_accuracy, empirical_risk, per_class_recall, stratification_kernel, train, BatchSource, LearningRate, LossModel,
    QuadraticLoss, SoftmaxRegression, TrainConfig, TrainMode,
};

type CliResult<T> = std::result::Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

fn value_name<T: ValueEnum>(v: &T) -> String {
    v.to_possible_value().map(|p| p.get_name().to_owned()).unwrap_or_default()
}

fn push(params: &mut Vec<(String, String)>, key: &str, value: impl ToString) {
    params.push((key.into(), value.to_string()));
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

/// Runs `body` between an incomplete and a complete manifest.
fn with_manifest(out: &Path, manifest: RunManifest, body: impl FnOnce() -> CliResult<()>) -> CliResult<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    manifest.write(out, false)?;
    body()?;
    manifest.write(out, true)?;
    Ok(())
}

pub(super) fn execute(command: &Command) -> CliResult<()> {
    match command {
        Command::GenData(a) => gen_data(a),
        Command::Kernel(a) => kernel(a),
        Command::Sample(a) => sample(a),
        Command::Train(a) => train_cmd(a),
        Command::Analyze(a) => analyze(a),
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> CliResult<Vec<T>> {
    s.split(',')
        .map(|v| v.trim().parse::<T>().map_err(|_| CliError::Usage(format!("bad {what} entry `{v}`"))))
        .collect()
}

fn custom_blobs(counts: &str, means: &str, variance: f64) -> CliResult<Vec<ClassBlob>> {
    let counts: Vec<usize> = parse_list(counts, "count")?;
    let means: Vec<Vec<f64>> = means.split(';').map(|m| parse_list(m, "mean")).collect::<CliResult<_>>()?;
    if counts.len() != means.len() {
        return usage(format!("{} counts but {} means", counts.len(), means.len()));
    }
    if !(variance >= 0.0 && variance.is_finite()) {
        return usage("--variance must be non-negative");
    }
    Ok(counts.into_iter().zip(means).enumerate().map(|(c, (count, mean))| ClassBlob::isotropic(mean, variance, count, c)).collect())
}

fn gen_data(a: &GenDataArgs) -> CliResult<()> {
    let mut params = Vec::new();
    let blobs = match (a.preset, &a.counts, &a.means) {
        (Some(p), _, _) => {
            push(&mut params, "preset", value_name(&p));
            match p {
                Preset::Imbalanced3Class => synthetic_preset(),
            }
        }
        (None, Some(c), Some(m)) => {
            push(&mut params, "counts", c);
            push(&mut params, "means", m);
            push(&mut params, "variance", a.variance);
            custom_blobs(c, m, a.variance)?
        }
        _ => return usage("give --preset, or --counts with --means"),
    };
    if let Some(t) = a.test_per_class {
        push(&mut params, "test-per-class", t);
    }
    push(&mut params, "seed", a.seed);
    with_manifest(&a.out, RunManifest::new("gen-data", params), || {
        let data = generate_imbalanced_gaussians(&blobs, a.seed)?;
        write_dataset(&a.out.join("data.csv"), &data)?;
        if let Some(t) = a.test_per_class {
            write_dataset(&a.out.join("test.csv"), &generate_held_out(&blobs, t, a.seed)?)?;
        }
        Ok(())
    })
}

fn required_kind(opts: &KernelOpts) -> CliResult<KernelKind> {
    opts.kernel_kind.map_or_else(|| usage("--kernel-kind is required"), Ok)
}

fn load_kernel(data: &Dataset, opts: &KernelOpts, kind: KernelKind) -> Result<SimilarityKernel> {
    build_kernel(data, &opts.spec(kind))
}

fn kernel(a: &KernelArgs) -> CliResult<()> {
    let kind = required_kind(&a.kernel)?;
    let mut params = vec![("data".to_string(), path_str(&a.data))];
    a.kernel.params(&mut params);
    let mut manifest = RunManifest::new("kernel", params);
    manifest.add_input("data", &a.data)?;
    with_manifest(&a.out, manifest, || {
        let data = read_dataset(&a.data)?;
        let kernel = load_kernel(&data, &a.kernel, kind)?;
        let decomp = symmetric_eigendecomposition(&kernel)?;
        write_matrix(&a.out.join("kernel.csv"), &kernel.matrix)?;
        let mut eig = String::from("index,eigenvalue,raw_eigenvalue\n");
        for (i, (l, r)) in decomp.eigenvalues.iter().zip(&decomp.raw_eigenvalues).enumerate() {
            eig.push_str(&format!("{i},{},{}\n", fmt_f64(*l), fmt_f64(*r)));
        }
        write_string(&a.out.join("eigenvalues.csv"), &eig)?;
        let summary = format!(
            "N = {}\nkind = {}\neffective rank = {}\nclamped eigenvalues = {}\nlog det(L + I) = {:.12e}\n",
            kernel.len(),
            kind,
            effective_rank(&decomp),
            decomp.clamped_count,
            decomp.log_det_plus_identity()
        );
        write_string(&a.out.join("summary.txt"), &summary)?;
        Ok(())
    })
}

fn decompose(kernel: &SimilarityKernel, cache: Option<&Path>) -> Result<EigenDecomposition> {
    match cache {
        Some(dir) => decompose_cached(kernel, dir),
        None => symmetric_eigendecomposition(kernel),
    }
}

fn sample(a: &SampleArgs) -> CliResult<()> {
    let kind = required_kind(&a.kernel)?;
    if a.batches == 0 {
        return usage("--batches must be at least 1");
    }
    let mut params = vec![("data".to_string(), path_str(&a.data))];
    a.kernel.params(&mut params);
    push(&mut params, "k", a.k);
    push(&mut params, "batches", a.batches);
    push(&mut params, "seed", a.seed);
    let mut manifest = RunManifest::new("sample", params);
    manifest.add_input("data", &a.data)?;
    with_manifest(&a.out, manifest, || {
        let data = read_dataset(&a.data)?;
        let kernel = load_kernel(&data, &a.kernel, kind)?;
        let sampler = KdppSampler::new(decompose(&kernel, a.cache_dir.as_deref())?, a.k)?;
        let batches = sampler.presample(a.seed, a.batches)?;
        Schedule::new(data.len(), a.k, a.seed, batches)?.write(&a.out.join("schedule.txt"))?;
        let b = marginal_probabilities(sampler.decomposition(), sampler.esp(), a.k)?;
        write_marginals(&a.out.join("marginals.csv"), &b)?;
        Ok(())
    })
}

fn make_model(kind: ModelKind, data: &Dataset) -> CliResult<Box<dyn LossModel>> {
    Ok(match kind {
        ModelKind::Softmax => {
            if data.labels.is_none() {
                return Err(Error::MissingColumn { kind: "softmax", what: "a label column" }.into());
            }
            Box::new(SoftmaxRegression::for_dataset(data))
        }
        ModelKind::Quadratic => Box::new(QuadraticLoss::new(data.dim())),
    })
}

fn train_cmd(a: &TrainArgs) -> CliResult<()> {
    let needs_kernel = matches!(a.mode, TrainMode::DmSgd | TrainMode::DmSgdUnbiased);
    if needs_kernel && a.schedule.is_none() && a.kernel.kernel_kind.is_none() {
        return usage(format!("--mode {} needs --schedule or --kernel-kind", a.mode));
    }
    if a.mode == TrainMode::StratifiedSgd && a.kernel.kernel_kind.is_some_and(|k| k != KernelKind::BlockStratified) {
        return usage("--mode stratified uses the block_stratified kernel; drop --kernel-kind");
    }
    if a.mode == TrainMode::UniformSgd && (a.schedule.is_some() || a.kernel.kernel_kind.is_some()) {
        return usage("--mode uniform takes neither --schedule nor --kernel-kind");
    }
    if a.mode == TrainMode::DmSgdUnbiased && a.schedule.is_some() && a.marginals.is_none() {
        return usage("--mode dm-unbiased with --schedule needs --marginals");
    }
    let learning_rate = match a.rate {
        Some(r) => LearningRate::Constant(r),
        None => LearningRate::Decaying { tau0: a.tau0, kappa: a.kappa },
    };
    let config = TrainConfig::new(a.mode, a.k, a.steps, a.seed).with_learning_rate(learning_rate);
    config.validate()?;

    let mut params = vec![("data".to_string(), path_str(&a.data))];
    if let Some(s) = &a.schedule {
        push(&mut params, "schedule", path_str(s));
    }
    if let Some(m) = &a.marginals {
        push(&mut params, "marginals", path_str(m));
    }
    a.kernel.params(&mut params);
    push(&mut params, "mode", a.mode);
    push(&mut params, "model", value_name(&a.model));
    push(&mut params, "k", a.k);
    push(&mut params, "steps", a.steps);
    match a.rate {
        Some(r) => push(&mut params, "rate", r),
        None => {
            push(&mut params, "tau0", a.tau0);
            push(&mut params, "kappa", a.kappa);
        }
    }
    push(&mut params, "seed", a.seed);
    if let Some(e) = &a.eval {
        push(&mut params, "eval", path_str(e));
    }
    if a.online {
        push(&mut params, "online", true);
    }
    let mut manifest = RunManifest::new("train", params);
    manifest.add_input("data", &a.data)?;
    for (name, p) in [("schedule", &a.schedule), ("marginals", &a.marginals), ("eval", &a.eval)] {
        if let Some(p) = p {
            manifest.add_input(name, p)?;
        }
    }

    with_manifest(&a.out, manifest, || {
        let data = read_dataset(&a.data)?;
        let eval = a.eval.as_deref().map(read_dataset).transpose()?;
        let model = make_model(a.model, &data)?;

        let file_schedule = a.schedule.as_deref().map(Schedule::read).transpose()?;
        let file_marginals = a.marginals.as_deref().map(read_marginals).transpose()?;
        let kernel = match (a.mode, a.kernel.kernel_kind, &file_schedule) {
            (TrainMode::UniformSgd, _, _) | (_, _, Some(_)) => None,
            (TrainMode::StratifiedSgd, _, None) => Some(stratification_kernel(&data)?),
            (_, Some(kind), None) => Some(load_kernel(&data, &a.kernel, kind)?),
            (_, None, None) => unreachable!("checked above"),
        };
        let sampler = kernel.map(|k| symmetric_eigendecomposition(&k).and_then(|d| KdppSampler::new(d, a.k))).transpose()?;

        let presampled = match (&sampler, a.online) {
            (Some(s), false) => {
                let schedule = Schedule::new(data.len(), a.k, a.seed, s.presample(a.seed, a.steps)?)?;
                schedule.write(&a.out.join("schedule.txt"))?;
                let b = match a.mode {
                    TrainMode::DmSgdUnbiased => Some(marginal_probabilities(s.decomposition(), s.esp(), a.k)?),
                    _ => None,
                };
                Some((schedule, b))
            }
            _ => None,
        };

        let source = if let Some((schedule, b)) = &presampled {
            BatchSource::Schedule { schedule, marginals: b.as_ref() }
        } else if let Some(schedule) = &file_schedule {
            BatchSource::Schedule { schedule, marginals: file_marginals.as_ref() }
        } else if let Some(s) = &sampler {
            BatchSource::Sampler(s)
        } else {
            BatchSource::None
        };
        let trace = train(&data, source, model.as_ref(), &config, eval.as_ref())?;
        trace.write_csv(&a.out.join("trace.csv"))?;
        trace.write_params(&a.out.join("params.csv"))?;

        let mut summary = format!(
            "steps = {}\nfinal train risk = {:.12e}\n",
            trace.len(),
            empirical_risk(&data, model.as_ref(), &trace.params)
        );
        if let Some(e) = &eval {
            if let Some(acc) = balanced_accuracy(e, model.as_ref(), &trace.params) {
                summary.push_str(&format!("balanced accuracy = {acc:.6}\n"));
                for (c, r) in per_class_recall(e, model.as_ref(), &trace.params).iter().enumerate() {
                    if let Some(r) = r {
                        summary.push_str(&format!("recall class {c} = {r:.6}\n"));
                    }
                }
            }
        }
        write_string(&a.out.join("summary.txt"), &summary)?;
        Ok(())
    })
}

fn read_params(path: &Path, dim: usize) -> Result<Vec<f64>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut values = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let v = rec.get(1).and_then(|v| v.parse::<f64>().ok()).ok_or_else(|| Error::parse(path, format!("row {r}: bad value")))?;
        values.push(v);
    }
    if values.len() != dim {
        return Err(Error::DimensionMismatch(format!("{} parameters in {}, model needs {dim}", values.len(), path.display())));
    }
    Ok(values)
}

fn analyze(a: &AnalyzeArgs) -> CliResult<()> {
    // A balance report over an existing schedule never touches the kernel.
    let from_schedule = a.what == Report::Balance && a.schedule.is_some();
    let kind = if from_schedule { a.kernel.kernel_kind } else { Some(required_kind(&a.kernel)?) };
    if a.mode == AnalysisMode::Mc && a.draws == 0 {
        return usage("--draws must be at least 1");
    }
    let mut params = vec![("data".to_string(), path_str(&a.data))];
    a.kernel.params(&mut params);
    push(&mut params, "k", a.k);
    push(&mut params, "what", value_name(&a.what));
    push(&mut params, "mode", value_name(&a.mode));
    push(&mut params, "draws", a.draws);
    push(&mut params, "model", value_name(&a.model));
    if let Some(p) = &a.params {
        push(&mut params, "params", path_str(p));
    }
    if let Some(s) = &a.schedule {
        push(&mut params, "schedule", path_str(s));
    }
    push(&mut params, "seed", a.seed);
    let mut manifest = RunManifest::new("analyze", params);
    manifest.add_input("data", &a.data)?;
    for (name, p) in [("params", &a.params), ("schedule", &a.schedule)] {
        if let Some(p) = p {
            manifest.add_input(name, p)?;
        }
    }

    with_manifest(&a.out, manifest, || {
        let data = read_dataset(&a.data)?;
        let kernel = kind.map(|kind| load_kernel(&data, &a.kernel, kind)).transpose()?;
        match (a.what, kernel) {
            (Report::Balance, kernel) => balance_report(a, &data, kernel.as_ref()),
            (Report::Distribution, Some(kernel)) => distribution_report(a, &kernel),
            (Report::Variance, Some(kernel)) => variance_report(a, &data, &kernel),
            (_, None) => unreachable!("kernel kind checked above"),
        }
    })
}

fn subset_key(subset: &[usize]) -> String {
    subset.iter().join(" ")
}

fn distribution_report(a: &AnalyzeArgs, kernel: &SimilarityKernel) -> CliResult<()> {
    let mut out = String::new();
    let mut summary = String::new();
    match a.mode {
        AnalysisMode::Exact => {
            let dist = brute_force_subset_distribution(kernel, a.k)?;
            out.push_str("subset,probability\n");
            for (s, p) in dist.iter() {
                out.push_str(&format!("{},{}\n", subset_key(s), fmt_f64(p)));
            }
            summary.push_str(&format!("{} subsets of size {} enumerated\n", dist.subsets.len(), a.k));
        }
        AnalysisMode::Mc => {
            let sampler = KdppSampler::new(symmetric_eigendecomposition(kernel)?, a.k)?;
            let batches = sampler.presample(a.seed, a.draws)?;
            let counts = batches.iter().map(|b| b.indices.clone()).counts();
            out.push_str("subset,frequency\n");
            for (s, c) in counts.iter().sorted() {
                out.push_str(&format!("{},{}\n", subset_key(s), fmt_f64(*c as f64 / a.draws as f64)));
            }
            summary.push_str(&format!("{} distinct subsets in {} draws\n", counts.len(), a.draws));
        }
    }
    write_string(&a.out.join("distribution.csv"), &out)?;
    write_string(&a.out.join("summary.txt"), &summary)?;
    Ok(())
}

fn variance_report(a: &AnalyzeArgs, data: &Dataset, kernel: &SimilarityKernel) -> CliResult<()> {
    let model = make_model(a.model, data)?;
    let theta = match &a.params {
        Some(p) => read_params(p, model.dimension())?,
        None => model.initial_params(),
    };
    let sampler = KdppSampler::new(symmetric_eigendecomposition(kernel)?, a.k)?;
    let b = marginal_probabilities(sampler.decomposition(), sampler.esp(), a.k)?;
    let pair_mode = match a.mode {
        AnalysisMode::Exact => PairMode::ExactEnumeration,
        AnalysisMode::Mc => PairMode::MonteCarlo { draws: a.draws, seed: a.seed },
    };
    let pairs = pair_inclusion_probabilities(kernel, sampler.decomposition(), sampler.esp(), a.k, pair_mode)?;
    let c = correlation_matrix(&b, &pairs)?;
    let mut report = gradient_variance_closed_form(data, model.as_ref(), &theta, &b, &c, a.k)?;
    match a.mode {
        AnalysisMode::Exact => report.variance_exact = Some(gradient_variance_exact(data, model.as_ref(), &theta, kernel, a.k)?),
        AnalysisMode::Mc => {
            report.variance_mc =
                Some(gradient_variance_monte_carlo(data, model.as_ref(), &theta, &sampler, &b, a.draws, a.seed)?)
        }
    }
    write_string(&a.out.join("variance.csv"), &report.to_csv())?;
    write_string(&a.out.join("summary.txt"), &report.summary())?;
    Ok(())
}

fn balance_report(a: &AnalyzeArgs, data: &Dataset, kernel: Option<&SimilarityKernel>) -> CliResult<()> {
    let batches = match &a.schedule {
        Some(p) => {
            let s = Schedule::read(p)?;
            if s.n != data.len() {
                return Err(Error::ScheduleMismatch(format!("schedule has N={}, data has {}", s.n, data.len())).into());
            }
            s.batches
        }
        None => {
            let kernel = kernel.expect("kernel required without a schedule");
            KdppSampler::new(symmetric_eigendecomposition(kernel)?, a.k)?.presample(a.seed, a.draws)?
        }
    };
    let h = balance_histogram(data, &batches)?;
    write_string(&a.out.join("balance.csv"), &h.to_csv())?;
    write_string(&a.out.join("summary.txt"), &h.summary())?;
    Ok(())
}
