use std::path::Path;

use serde::Serialize;
use serde_json::json;

use excursets::excursions::{ExcursionProblem, ExcursionResult};
use excursets::families::{Direction, Family, FamilyKind, Side};
use excursets::gauss_prob::IntegrationConfig;
use excursets::io::{load_config_set, load_posterior, MatrixFile};
use excursets::posterior_methods::{posterior_excursion, ParamConfigSet};

use crate::output::{csv_bytes, digest_file, finish, CliError, CliResult, FileDigest, OutDir, RunManifest};
use crate::{DirectionArg, FamilyArg, RunArgs};

pub fn excursion(args: &RunArgs, contour: bool) -> u8 {
    finish(run(args, contour).map(|_| true), &args.out)
}

fn input(msg: impl Into<String>) -> CliError {
    CliError::Input(msg.into())
}

fn load_set(args: &RunArgs) -> CliResult<(ParamConfigSet<f64>, Vec<FileDigest>)> {
    if let Some(cfg) = &args.configs {
        if args.mean.is_some() {
            return Err(input("--mean cannot be combined with --configs"));
        }
        let set = load_config_set(cfg)?;
        return Ok((set, vec![digest_file(cfg)?]));
    }
    let matrix = match (&args.precision, &args.covariance) {
        (Some(p), None) => MatrixFile::Precision(p.clone()),
        (None, Some(c)) => MatrixFile::Covariance(c.clone()),
        _ => return Err(input("one of --precision, --covariance or --configs is required")),
    };
    let mean = args.mean.as_ref().ok_or_else(|| input("--mean is required with --precision/--covariance"))?;
    let posterior = load_posterior(&matrix, mean)?;
    let mpath = match &matrix {
        MatrixFile::Precision(p) | MatrixFile::Covariance(p) => p,
    };
    Ok((ParamConfigSet::single(posterior), vec![digest_file(mpath)?, digest_file(mean)?]))
}

fn read_coords(path: &Path, n: usize) -> CliResult<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_path(path)
        .map_err(|e| input(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| input(format!("{}: {e}", path.display())))?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| input(format!("{}: row {}: {e}", path.display(), k + 1)))?;
        out.push(row);
    }
    if out.len() != n {
        return Err(input(format!("{}: expected {n} coordinate rows, found {}", path.display(), out.len())));
    }
    Ok(out)
}

fn family_kind(args: &RunArgs, contour: bool, n: usize) -> CliResult<FamilyKind<f64>> {
    let default = if contour { FamilyArg::Avoid1 } else { FamilyArg::One };
    Ok(match args.family.unwrap_or(default) {
        FamilyArg::One => FamilyKind::OneParam,
        FamilyArg::TwoLevel => FamilyKind::TwoParamLevel,
        FamilyArg::TwoSmooth => {
            let path = args.coords.as_ref().ok_or_else(|| input("--family two-smooth needs --coords"))?;
            FamilyKind::TwoParamSmoothing { coords: read_coords(path, n)? }
        }
        FamilyArg::Avoid1 => FamilyKind::LevelAvoidOne,
        FamilyArg::Avoid2 => FamilyKind::LevelAvoidTwo,
    })
}

fn side_str(s: Option<Side>) -> &'static str {
    s.map(Side::as_str).unwrap_or("none")
}

#[derive(Serialize)]
struct Summary<'a> {
    command: &'a str,
    n: usize,
    level: f64,
    alpha: f64,
    direction: Direction,
    family: &'a str,
    method: &'a str,
    set_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    positive_set_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    negative_set_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    contour_region_size: Option<usize>,
    u1_size: usize,
    l2_size: usize,
    set_probability: f64,
    set_std_error: f64,
    family_parameter: Option<f64>,
    search: &'a [(f64, usize)],
    refined: bool,
    manifest: RunManifest,
}

fn run(args: &RunArgs, contour: bool) -> CliResult<()> {
    let command = if contour { "contour" } else { "excursion" };
    let dir_arg = args.direction.unwrap_or(if contour { DirectionArg::Contour } else { DirectionArg::Pos });
    let direction = dir_arg.direction();
    if contour != direction.is_avoiding() {
        return Err(input(format!("direction {dir_arg:?} is not valid for the {command} command")));
    }
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(input("--alpha must lie in (0, 1)"));
    }
    if args.particles == 0 {
        return Err(input("--particles must be positive"));
    }
    let (set, inputs) = load_set(args)?;
    let n = set.dim();
    let kind = family_kind(args, contour, n)?;
    let family_name = kind.name();
    let family = Family::new(kind, direction, args.level)?;
    let integration = IntegrationConfig::default().with_particles(args.particles).with_seed(args.seed);
    let mut problem = ExcursionProblem::new(family, args.alpha, integration)?;
    problem.refine = !args.no_refine;
    let method = args.method.method();
    let result = posterior_excursion(method, &problem, &set)?;

    let mut out = OutDir::create(&args.out)?;
    out.write("function.csv", &function_csv(&result, contour))?;
    out.write("trace.csv", &trace_csv(&result))?;

    let config = json!({
        "precision": args.precision,
        "covariance": args.covariance,
        "mean": args.mean,
        "configs": args.configs,
        "coords": args.coords,
        "level": args.level,
        "alpha": args.alpha,
        "direction": direction,
        "family": family_name,
        "method": method.as_str(),
        "particles": args.particles,
        "seed": args.seed,
        "refine": problem.refine,
    });
    let manifest = out.manifest(command, config, inputs, args.seed, args.timing);
    let side_count = |s: Side| result.set.iter().filter(|&&i| result.sides[i] == Some(s)).count();
    let summary = Summary {
        command,
        n,
        level: args.level,
        alpha: args.alpha,
        direction,
        family: family_name,
        method: method.as_str(),
        set_size: result.len(),
        positive_set_size: contour.then(|| side_count(Side::Positive)),
        negative_set_size: contour.then(|| side_count(Side::Negative)),
        contour_region_size: contour.then(|| result.contour_region(args.alpha).len()),
        u1_size: result.u1.len(),
        l2_size: result.l2.len(),
        set_probability: result.set_probability,
        set_std_error: result.set_std_error,
        family_parameter: result.parameter,
        search: &result.search,
        refined: result.refined,
        manifest,
    };
    out.write_json("summary.json", &summary)?;
    Ok(())
}

fn function_csv(result: &ExcursionResult<f64>, contour: bool) -> Vec<u8> {
    let in_set = result.in_set();
    let fc = result.contour_function();
    if contour {
        csv_bytes(
            &["node_id", "F", "F_c", "side", "in_set_at_alpha", "in_region_at_alpha", "marginal_p"],
            (0..result.function.len()).map(|i| {
                vec![
                    i.to_string(),
                    result.function[i].to_string(),
                    fc[i].to_string(),
                    side_str(result.sides[i]).to_string(),
                    u8::from(in_set[i]).to_string(),
                    u8::from(!in_set[i]).to_string(),
                    result.marginal[i].to_string(),
                ]
            }),
        )
    } else {
        csv_bytes(
            &["node_id", "F", "in_set_at_alpha", "marginal_p"],
            (0..result.function.len()).map(|i| {
                vec![
                    i.to_string(),
                    result.function[i].to_string(),
                    u8::from(in_set[i]).to_string(),
                    result.marginal[i].to_string(),
                ]
            }),
        )
    }
}

fn trace_csv(result: &ExcursionResult<f64>) -> Vec<u8> {
    csv_bytes(
        &["step", "node", "side", "class", "probability", "std_error"],
        result.trace.iter().enumerate().map(|(k, t)| {
            vec![
                (k + 1).to_string(),
                t.node.to_string(),
                t.side.as_str().to_string(),
                (t.class as u8).to_string(),
                t.probability.to_string(),
                t.std_error.to_string(),
            ]
        }),
    )
}
