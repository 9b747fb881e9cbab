use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;
use serde_json::{json, Value};

use truthsched::corpus::{random_clustered, random_matrix, standard_corpus, vcg_classic_family};
use truthsched::lowerbound::{
    certify_lower_bound, estimate_bad_fraction, Certificate, CertifyOptions,
};
use truthsched::mechanisms::build_mechanism;
use truthsched::model::{instance_to_json, parse_instance_json};
use truthsched::rational::{describe, format_rational, parse_rational, to_f64};
use truthsched::slicelab::{
    classify_2x2, default_tol, region_map_csv, shape_classify, ClassifyConfig, ClusteredSlice,
    SliceError, SliceOracle, SliceSpec,
};
use truthsched::solve::{loads, makespan, optimal_makespan, optimal_makespan_clustered};
use truthsched::wmon::{wmon_scan, Generator};
use truthsched::{
    Bundle, ConstantsProfile, CostMatrix, Instance, Mechanism, MechanismError, MechanismSpec,
    Rational,
};

use crate::{
    CertifyArgs, ClassifyArgs, Cli, Command, CorpusKind, Done, EstimateArgs, EvaluateArgs,
    GenerateArgs, GlobalArgs, MechArgs, VerifyArgs, WmonArgs,
};

pub fn run(cli: &Cli) -> Result<Done> {
    let g = &cli.global;
    match &cli.command {
        Command::Generate(a) => generate(g, a),
        Command::Evaluate(a) => evaluate(g, a),
        Command::WmonCheck(a) => wmon_check(g, a),
        Command::ClassifySlice(a) => classify(g, a),
        Command::Certify(a) => certify(g, a),
        Command::EstimateBk(a) => estimate(g, a),
        Command::VerifyCert(a) => verify(g, a),
    }
}

/// Constants file: `delta_prime` and `rho` are derived and may be omitted;
/// when present they must match.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstsFile {
    n: usize,
    alpha: String,
    beta: String,
    delta: String,
    ell: usize,
    #[serde(rename = "B")]
    big_b: String,
    theta: String,
    delta_prime: Option<String>,
    rho: Option<String>,
}

fn parse_q(field: &str, s: &str) -> Result<Rational> {
    parse_rational(s).map_err(|e| anyhow!("{field}: {e}"))
}

fn load_consts(g: &GlobalArgs, n: Option<usize>) -> Result<ConstantsProfile> {
    let Some(path) = &g.consts else {
        let n = n.ok_or_else(|| anyhow!("--n is required without --consts"))?;
        return Ok(ConstantsProfile::desk(n)?);
    };
    let text = read(path)?;
    let f: ConstsFile = serde_json::from_str(&text)
        .with_context(|| format!("constants file {}", path.display()))?;
    let c = ConstantsProfile::new(
        f.n,
        parse_q("alpha", &f.alpha)?,
        parse_q("beta", &f.beta)?,
        parse_q("delta", &f.delta)?,
        f.ell,
        parse_q("B", &f.big_b)?,
        parse_q("theta", &f.theta)?,
    )
    .with_context(|| format!("constants file {}", path.display()))?;
    if let Some(dp) = &f.delta_prime {
        if parse_q("delta_prime", dp)? != c.delta_prime {
            bail!("delta_prime must equal 2 delta");
        }
    }
    if let Some(rho) = &f.rho {
        if parse_q("rho", rho)? != c.rho {
            bail!("rho does not match alpha and delta'");
        }
    }
    if let Some(n) = n {
        if n != c.n {
            bail!("--n {n} disagrees with n = {} in the constants file", c.n);
        }
    }
    Ok(c)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn pretty(v: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("value serializes");
    s.push('\n');
    s
}

fn read_instance(path: &Path) -> Result<(Instance, Option<Value>)> {
    parse_instance_json(&read(path)?).with_context(|| format!("instance {}", path.display()))
}

/// `--spec` wins, then `--mech` (taking the instance block's config when its
/// id matches), then the instance file's own mechanism block.
fn load_mech(
    args: &MechArgs,
    block: Option<&Value>,
) -> Result<(MechanismSpec, Box<dyn Mechanism>)> {
    let from_block = |v: &Value| -> Result<MechanismSpec> {
        serde_json::from_value(v.clone()).context("mechanism block")
    };
    let spec = match (&args.spec, &args.mech, block) {
        (Some(path), id, _) => {
            let spec: MechanismSpec = serde_json::from_str(&read(path)?)
                .with_context(|| format!("mechanism spec {}", path.display()))?;
            if let Some(id) = id {
                if *id != spec.id {
                    bail!("--mech {id} disagrees with id {} in {}", spec.id, path.display());
                }
            }
            spec
        }
        (None, Some(id), Some(b)) => {
            let spec = from_block(b)?;
            if spec.id == *id {
                spec
            } else {
                MechanismSpec::new(id)
            }
        }
        (None, Some(id), None) => MechanismSpec::new(id),
        (None, None, Some(b)) => from_block(b)?,
        (None, None, None) => bail!("no mechanism given (use --mech or --spec)"),
    };
    let mech = build_mechanism(&spec)?;
    Ok((spec, mech))
}

fn dec(r: &Rational) -> String {
    describe(r)
}

fn item_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn generate(g: &GlobalArgs, a: &GenerateArgs) -> Result<Done> {
    let consts = match (&g.consts, a.kind) {
        (Some(_), _) | (None, CorpusKind::Standard) => Some(load_consts(g, a.n)?),
        _ => None,
    };
    let out = g
        .out
        .as_ref()
        .ok_or_else(|| anyhow!("generate needs --out <directory>"))?;
    let need_n = || {
        a.n.or(consts.as_ref().map(|c| c.n))
            .ok_or_else(|| anyhow!("--n is required"))
    };
    if a.denom < 1 {
        bail!("--denom must be positive");
    }
    let mut docs: Vec<(String, Value)> = Vec::new();
    match a.kind {
        CorpusKind::Standard => {
            let c = consts.as_ref().expect("loaded above");
            for (i, (set, inst)) in standard_corpus(c, a.count, g.seed)?.into_iter().enumerate() {
                let mut v = instance_to_json(&Instance::Clustered(inst));
                v["regular_set"] = json!(set);
                docs.push((format!("standard-{i:04}.json"), v));
            }
        }
        CorpusKind::Matrix => {
            let n = need_n()?;
            for i in 0..a.count {
                let m = random_matrix(n, a.m, a.denom, item_seed(g.seed, i))?;
                docs.push((format!("matrix-{i:04}.json"), instance_to_json(&Instance::Matrix(m))));
            }
        }
        CorpusKind::Clustered => {
            let n = need_n()?;
            for i in 0..a.count {
                let c = random_clustered(n, a.ell, a.denom, item_seed(g.seed, i))?;
                docs.push((
                    format!("clustered-{i:04}.json"),
                    instance_to_json(&Instance::Clustered(c)),
                ));
            }
        }
        CorpusKind::VcgClassic => {
            let n = need_n()?;
            let m = vcg_classic_family(n)?;
            docs.push((format!("vcg-classic-n{n}.json"), instance_to_json(&Instance::Matrix(m))));
        }
    }
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let mut artifacts = Vec::new();
    for (name, v) in &docs {
        let path = out.join(name);
        write(&path, &pretty(v))?;
        artifacts.push(path.display().to_string());
    }
    let text = format!("wrote {} file(s) to {}\n", artifacts.len(), out.display());
    let mut csv = String::from("file\n");
    for p in &artifacts {
        let _ = writeln!(csv, "{p}");
    }
    Ok(Done {
        outcome: json!({ "files": artifacts.len() }),
        text,
        csv,
        artifacts,
        flagged: false,
        report_to: None,
    })
}

fn evaluate(g: &GlobalArgs, a: &EvaluateArgs) -> Result<Done> {
    let (inst, block) = read_instance(&a.instance)?;
    let (_, mech) = load_mech(&a.mech, block.as_ref())?;
    let matrix = inst.matrix();
    let alloc = mech.allocate(&matrix)?;
    let cost = makespan(&matrix, &alloc)?;
    let opt = match &inst {
        Instance::Clustered(c) => optimal_makespan_clustered(c)?,
        Instance::Matrix(m) => optimal_makespan(m)?,
    };
    if opt.makespan == Rational::from_integer(0.into()) {
        bail!("optimal makespan is zero; the ratio is undefined");
    }
    let ratio = &cost / &opt.makespan;
    let machine_loads = loads(&matrix, &alloc)?;
    let mut text = format!("mechanism: {}\nallocation (machine per task): {:?}\n", mech.id(), alloc.assignment());
    for (i, l) in machine_loads.iter().enumerate() {
        let _ = writeln!(text, "  load of machine {i}: {}", dec(l));
    }
    let _ = writeln!(text, "Mech = {}", dec(&cost));
    let _ = writeln!(text, "Opt  = {}", dec(&opt.makespan));
    let _ = writeln!(text, "ratio = {}", dec(&ratio));
    let mut csv = String::from("task,machine,cost\n");
    for (j, &i) in alloc.assignment().iter().enumerate() {
        let _ = writeln!(csv, "{j},{i},{}", format_rational(matrix.get(i, j)));
    }
    Ok(Done {
        outcome: json!({
            "mechanism": mech.id(),
            "allocation": alloc.assignment(),
            "loads": machine_loads.iter().map(format_rational).collect::<Vec<_>>(),
            "mech_cost": format_rational(&cost),
            "opt": format_rational(&opt.makespan),
            "opt_allocation": opt.allocation.assignment(),
            "ratio": format_rational(&ratio),
        }),
        text,
        csv,
        artifacts: Vec::new(),
        flagged: false,
        report_to: g.out.clone(),
    })
}

fn wmon_check(g: &GlobalArgs, a: &WmonArgs) -> Result<Done> {
    let (base, block) = match &a.instance {
        Some(p) => {
            let (inst, block) = read_instance(p)?;
            (Some(inst.matrix()), block)
        }
        None => (None, None),
    };
    let (_, mech) = load_mech(&a.mech, block.as_ref())?;
    let generator = Generator::parse(&a.generator)?;
    let report = wmon_scan(mech.as_ref(), base.as_ref(), generator, a.trials, g.seed, 0)?;
    let mut text = format!("{}: {}\n", report.mechanism, report.verdict);
    if let Some((trial, v)) = &report.first_violation {
        let _ = writeln!(
            text,
            "first violation at trial {trial}: machine {} changes its row from {:?} to {:?}; \
             allocation {:?} becomes {:?}; monotonicity sum {}",
            v.machine,
            v.original_row.iter().map(format_rational).collect::<Vec<_>>(),
            v.deviated_row.iter().map(format_rational).collect::<Vec<_>>(),
            v.allocation.assignment(),
            v.deviated_allocation.assignment(),
            dec(&v.sum)
        );
    }
    let csv = format!(
        "mechanism,generator,seed,trials,violations\n{},{},{},{},{}\n",
        report.mechanism, report.generator, report.seed, report.trials, report.violations
    );
    Ok(Done {
        outcome: serde_json::to_value(&report)?,
        text,
        csv,
        artifacts: Vec::new(),
        flagged: !report.clean(),
        report_to: g.out.clone(),
    })
}

/// Two columns of a two-machine matrix, player 0 bidding `t`, player 1 `s`.
struct MatrixSlice<'a> {
    mech: &'a dyn Mechanism,
    matrix: CostMatrix,
    cols: [usize; 2],
}

impl SliceOracle for MatrixSlice<'_> {
    fn bundle(&self, t: [&Rational; 2], s: [&Rational; 2]) -> Result<Bundle, SliceError> {
        let mut m = self.matrix.clone();
        for k in 0..2 {
            m.set(0, self.cols[k], t[k].clone()).map_err(MechanismError::from)?;
            m.set(1, self.cols[k], s[k].clone()).map_err(MechanismError::from)?;
        }
        let alloc = self.mech.allocate(&m)?;
        Ok(Bundle::from_tasks(
            alloc.machine_of(self.cols[0]) == 0,
            alloc.machine_of(self.cols[1]) == 0,
        ))
    }
}

fn classify(g: &GlobalArgs, a: &ClassifyArgs) -> Result<Done> {
    let (inst, block) = read_instance(&a.instance)?;
    let (_, mech) = load_mech(&a.mech, block.as_ref())?;
    let tol = match &a.tol {
        Some(t) => parse_q("--tol", t)?,
        None => default_tol(),
    };
    let cfg = ClassifyConfig {
        tol,
        budget: a.budget,
        seed: g.seed,
        ..ClassifyConfig::default()
    };
    let (oracle, s): (Box<dyn SliceOracle + '_>, [Rational; 2]) = match inst {
        Instance::Clustered(c) => {
            let spec = SliceSpec::new(c, a.p, a.pprime)?;
            let task_s = |j: usize| spec.base.task_at(j).expect("slice columns are cluster tasks").s.clone();
            let s = [task_s(a.p), task_s(a.pprime)];
            (Box::new(ClusteredSlice::new(mech.as_ref(), &spec)), s)
        }
        Instance::Matrix(m) => {
            if m.machines() != 2 {
                bail!("a matrix slice needs exactly two machines, got {}", m.machines());
            }
            if a.p == a.pprime || a.p >= m.tasks() || a.pprime >= m.tasks() {
                bail!("--p and --pprime must be distinct columns below {}", m.tasks());
            }
            let s = [m.get(1, a.p).clone(), m.get(1, a.pprime).clone()];
            mech.check_shape(&m)?;
            (
                Box::new(MatrixSlice {
                    mech: mech.as_ref(),
                    matrix: m,
                    cols: [a.p, a.pprime],
                }),
                s,
            )
        }
    };
    let classification = classify_2x2(oracle.as_ref(), &cfg)?;
    let shape = shape_classify(oracle.as_ref(), [&s[0], &s[1]], a.grid);
    let csv = region_map_csv(oracle.as_ref(), [&s[0], &s[1]], a.grid)?;
    let mut text = format!(
        "mechanism: {}\nslice: columns {} and {} at s = ({}, {})\nclass: {}\n",
        mech.id(),
        a.p,
        a.pprime,
        dec(&s[0]),
        dec(&s[1]),
        serde_json::to_value(classification.class)?.as_str().unwrap_or("?")
    );
    if let Some(l) = &classification.evidence.lambda_estimate {
        let _ = writeln!(text, "fitted lambda: {}", dec(l));
    }
    match &shape {
        Ok(sh) => {
            let _ = writeln!(
                text,
                "region shape at these s-values: {} ({} witnesses)",
                serde_json::to_value(sh.kind)?.as_str().unwrap_or("?"),
                sh.witnesses.len()
            );
        }
        Err(e) => {
            let _ = writeln!(text, "region shape: {e}");
        }
    }
    for n in &classification.evidence.notes {
        let _ = writeln!(text, "note: {n}");
    }
    let _ = writeln!(text, "probes used: {}", classification.evidence.probes_used);
    let shape_json = match &shape {
        Ok(sh) => serde_json::to_value(sh)?,
        Err(e) => json!({ "error": e.to_string() }),
    };
    Ok(Done {
        outcome: json!({
            "mechanism": mech.id(),
            "p": a.p,
            "pprime": a.pprime,
            "s": [format_rational(&s[0]), format_rational(&s[1])],
            "classification": classification,
            "shape": shape_json,
        }),
        text,
        csv,
        artifacts: Vec::new(),
        flagged: false,
        report_to: g.out.clone(),
    })
}

fn certify(g: &GlobalArgs, a: &CertifyArgs) -> Result<Done> {
    let consts = load_consts(g, a.n)?;
    let (_, mech) = load_mech(&a.mech, None)?;
    let opts = CertifyOptions {
        samples: a.samples,
        search_budget: a.search_budget,
        direct: !a.no_direct,
    };
    let outcome = certify_lower_bound(mech.as_ref(), &consts, g.seed, &opts)?;
    let target = 1.0 + ((consts.n - 1) as f64).sqrt();
    let mut text = format!("mechanism: {} (n = {})\n{}\n", mech.id(), consts.n, outcome.message);
    let mut artifacts = Vec::new();
    if let Some(best) = &outcome.best {
        let _ = writeln!(text, "best: {}", best.description);
        let _ = writeln!(text, "  Mech = {}", dec(&best.mech_cost));
        let _ = writeln!(text, "  Opt  = {}", dec(&best.opt));
        let _ = writeln!(
            text,
            "  ratio = {} ({:.4} of 1 + sqrt(n-1) = {:.6})",
            dec(&best.ratio),
            to_f64(&best.ratio) / target,
            target
        );
        if let Some(path) = &g.out {
            write(path, &pretty(best))?;
            artifacts.push(path.display().to_string());
        }
    }
    if let Some(branch) = &outcome.branch {
        if outcome.best.as_ref() != Some(branch) {
            let _ = writeln!(
                text,
                "{:?} certificate: ratio {}",
                branch.kind,
                dec(&branch.ratio)
            );
        }
    }
    if let Some(s) = &outcome.search {
        let _ = writeln!(text, "good-set search: {} ({} tests)", s.note, s.tests_used);
    }
    let mut csv = String::from("kind,ratio,ratio_decimal,description\n");
    for c in &outcome.candidates {
        let _ = writeln!(
            csv,
            "{},{},{:.9},\"{}\"",
            serde_json::to_value(c.kind)?.as_str().unwrap_or("?"),
            format_rational(&c.ratio),
            to_f64(&c.ratio),
            c.description.replace('"', "'")
        );
    }
    Ok(Done {
        flagged: outcome.best.is_some(),
        outcome: serde_json::to_value(&outcome)?,
        text,
        csv,
        artifacts,
        report_to: None,
    })
}

fn estimate(g: &GlobalArgs, a: &EstimateArgs) -> Result<Done> {
    let consts = load_consts(g, a.n)?;
    let (_, mech) = load_mech(&a.mech, None)?;
    let est = estimate_bad_fraction(mech.as_ref(), &consts, a.k, a.trials, g.seed, a.samples)?;
    let text = format!(
        "mechanism: {} (n = {}, k = {}, ell = {})\n\
         not good: {} of {} trials ({} inconclusive)\n\
         estimate {:.4}, 95% interval [{:.4}, {:.4}]\n\
         comparison bound at this ell: {}\n\
         {}\n",
        est.mechanism,
        est.n,
        est.k,
        est.ell,
        est.bad,
        est.trials,
        est.inconclusive,
        est.estimate,
        est.ci_low,
        est.ci_high,
        dec(&est.comparison_bound),
        est.caveat
    );
    let csv = format!(
        "mechanism,n,k,ell,trials,bad,inconclusive,estimate,ci_low,ci_high\n{},{},{},{},{},{},{},{},{},{}\n",
        est.mechanism, est.n, est.k, est.ell, est.trials, est.bad, est.inconclusive, est.estimate,
        est.ci_low, est.ci_high
    );
    Ok(Done {
        outcome: serde_json::to_value(&est)?,
        text,
        csv,
        artifacts: Vec::new(),
        flagged: false,
        report_to: g.out.clone(),
    })
}

fn verify(g: &GlobalArgs, a: &VerifyArgs) -> Result<Done> {
    let cert: Certificate = serde_json::from_str(&read(&a.cert)?)
        .with_context(|| format!("certificate {}", a.cert.display()))?;
    cert.consts
        .validate()
        .with_context(|| format!("constants in {}", a.cert.display()))?;
    let replay = if a.mech.mech.is_some() || a.mech.spec.is_some() {
        Some(load_mech(&a.mech, None)?.1)
    } else {
        None
    };
    let result = match &replay {
        Some(m) => cert.verify_with(m.as_ref()),
        None => cert.verify(),
    };
    let ok = result.is_ok();
    let detail = match &result {
        Ok(()) => format!("verified: ratio {}", dec(&cert.ratio)),
        Err(e) => format!("FAILED: {e}"),
    };
    let text = format!("{}: {detail}\n", a.cert.display());
    let csv = format!("certificate,verified,ratio\n{},{},{}\n", a.cert.display(), ok, format_rational(&cert.ratio));
    Ok(Done {
        outcome: json!({
            "certificate": a.cert.display().to_string(),
            "verified": ok,
            "replayed": replay.is_some(),
            "ratio": format_rational(&cert.ratio),
            "detail": detail,
        }),
        text,
        csv,
        artifacts: Vec::new(),
        flagged: !ok,
        report_to: g.out.clone(),
    })
}
