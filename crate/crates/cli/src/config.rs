use std::fs;
use std::path::{Path, PathBuf};

use cmj_core::{
    builtin, find_roots, laurent_coeffs, validate_assumptions, Ancestor, Complex64, LaurentData, OffspringModel,
    Region,
};

use crate::args::{Cli, Command};
use crate::error::{CliError, CliResult};

/// Largest distance between `--lambda` and the root it selects.
pub const ROOT_SELECTION_RADIUS: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub enum ModelSource {
    File(PathBuf),
    Builtin { name: String, rate: f64 },
}

/// Parameter overrides shared by the commands.
#[derive(Clone, Debug)]
pub struct Overrides {
    pub horizon: Option<f64>,
    pub t_grid: Option<Vec<f64>>,
    pub n_replicas: usize,
    pub q: f64,
    pub lambda: Option<Complex64>,
    pub region: Option<Region>,
    pub tail_tolerance: f64,
}

impl Overrides {
    /// No overrides: the root at `α`, the default region and tolerance.
    pub fn defaults() -> Self {
        Self {
            horizon: None,
            t_grid: None,
            n_replicas: 1000,
            q: 2.0,
            lambda: None,
            region: None,
            tail_tolerance: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub command: Command,
    pub source: ModelSource,
    /// Zero-based.
    pub ancestor: Option<usize>,
    pub output: PathBuf,
    pub seed: u64,
    pub overrides: Overrides,
    pub threads: Option<usize>,
    pub strict: bool,
}

fn usage<T>(message: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(message.into()))
}

fn finite(name: &str, x: f64) -> CliResult<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        usage(format!("--{name} must be finite, got {x}"))
    }
}

impl RunConfig {
    pub fn from_cli(cli: Cli) -> CliResult<Self> {
        let o = cli.options;
        let source = match (o.model, o.example) {
            (Some(path), None) => ModelSource::File(path),
            (None, Some(name)) => {
                if builtin::lookup(&name, 1.0).is_none() {
                    return usage(format!("unknown example {name:?}; expected 1, 2, nerman, chain or primitive"));
                }
                if !(finite("rate", o.rate)? > 0.0) {
                    return usage("--rate must be positive");
                }
                ModelSource::Builtin { name, rate: o.rate }
            }
            (Some(_), Some(_)) => return usage("--model and --example are mutually exclusive"),
            (None, None) => return usage("one of --model or --example is required"),
        };
        let ancestor = match o.ancestor {
            Some(0) => return usage("--ancestor is 1-based"),
            a => a.map(|a| a - 1),
        };
        let horizon = match o.horizon {
            Some(h) if !(finite("horizon", h)? >= 0.0) => return usage("--horizon must be nonnegative"),
            h => h,
        };
        if let Some(grid) = &o.t_grid {
            if grid.is_empty() || grid.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
                return usage("--t-grid values must be finite and nonnegative");
            }
            if grid.windows(2).any(|w| w[0] >= w[1]) {
                return usage("--t-grid must be strictly increasing");
            }
            if let Some(h) = horizon {
                if grid.iter().any(|&t| t > h) {
                    return usage(format!("--t-grid extends past --horizon {h}"));
                }
            }
        }
        let lambda = match o.lambda.as_deref() {
            None => None,
            Some(&[re, im]) => Some(Complex64::new(finite("lambda", re)?, finite("lambda", im)?)),
            Some(_) => return usage("--lambda takes RE,IM"),
        };
        let region = match o.region.as_deref() {
            None => None,
            Some(&[a, b, c, d]) => {
                for x in [a, b, c, d] {
                    finite("region", x)?;
                }
                if !(a < b && c < d) {
                    return usage("--region needs RE0 < RE1 and IM0 < IM1");
                }
                Some(Region::new(a, b, c, d))
            }
            Some(_) => return usage("--region takes RE0,RE1,IM0,IM1"),
        };
        if !(finite("tail-tol", o.tail_tol)? > 0.0) {
            return usage("--tail-tol must be positive");
        }
        if o.threads == Some(0) {
            return usage("--threads must be at least 1");
        }
        Ok(Self {
            command: cli.command,
            source,
            ancestor,
            output: o.out,
            seed: o.seed,
            overrides: Overrides {
                horizon,
                t_grid: o.t_grid,
                n_replicas: o.replicas,
                q: finite("q", o.q)?,
                lambda,
                region,
                tail_tolerance: o.tail_tol,
            },
            threads: o.threads,
            strict: o.strict,
        })
    }

    /// The model with any ancestor override applied.
    pub fn load_model(&self) -> CliResult<OffspringModel> {
        let model = match &self.source {
            ModelSource::File(path) => {
                let text = fs::read_to_string(path).map_err(|source| CliError::Io { path: path.clone(), source })?;
                OffspringModel::from_json(&text)?
            }
            ModelSource::Builtin { name, rate } => builtin::lookup(name, *rate).expect("checked in from_cli"),
        };
        match self.ancestor {
            Some(i) if i >= model.p() => usage(format!("--ancestor {} exceeds the {} types", i + 1, model.p())),
            Some(i) => Ok(model.with_ancestor(Ancestor::Fixed(i))?),
            None => Ok(model),
        }
    }

    pub fn describe_source(&self) -> String {
        match &self.source {
            ModelSource::File(path) => path.display().to_string(),
            ModelSource::Builtin { name, rate } => format!("example {name} (rate {rate})"),
        }
    }

    pub fn output_file(&self, name: &str) -> CliResult<PathBuf> {
        fs::create_dir_all(&self.output).map_err(|source| CliError::Io { path: self.output.clone(), source })?;
        Ok(self.output.join(name))
    }
}

pub fn write_file(path: &Path, contents: &[u8]) -> CliResult<()> {
    fs::write(path, contents).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

/// Fails with an assumption error unless (A1) and (A2) hold; returns `α`.
pub fn require_assumptions(model: &OffspringModel) -> CliResult<f64> {
    let report = validate_assumptions(model);
    if !report.a1_passed {
        return Err(CliError::Assumption {
            assumption: "A1",
            detail: format!("spectral radius of the atom at zero is {} (must be < 1)", report.a1_spectral_radius),
        });
    }
    match report.alpha {
        Some(alpha) if report.a2_passed => Ok(alpha),
        _ => Err(CliError::Assumption {
            assumption: "A2",
            detail: report.a2_detail.unwrap_or_else(|| "no Malthusian parameter".into()),
        }),
    }
}

/// Laurent data at the verified root nearest `--lambda`, or at `α`.
pub fn select_root(model: &OffspringModel, alpha: f64, overrides: &Overrides) -> CliResult<LaurentData> {
    let region = overrides.region.unwrap_or_else(|| Region::around_alpha(model, alpha));
    let target = overrides.lambda.unwrap_or(Complex64::new(alpha, 0.0));
    let roots = find_roots(model, &region)?;
    let nearest = roots.into_iter().min_by(|a, b| (a.lambda - target).norm().total_cmp(&(b.lambda - target).norm()));
    match nearest {
        Some(root) if (root.lambda - target).norm() <= ROOT_SELECTION_RADIUS => Ok(laurent_coeffs(model, &root)?),
        other => Err(CliError::RootSelection {
            target,
            nearest: other.map(|r| r.lambda),
            max_distance: ROOT_SELECTION_RADIUS,
        }),
    }
}

#[cfg(test)]
mod tests {
    use clap::Parser;

    use super::*;

    fn parse(args: &[&str]) -> CliResult<RunConfig> {
        let cli = Cli::try_parse_from(std::iter::once("cmj").chain(args.iter().copied())).expect("clap accepts");
        RunConfig::from_cli(cli)
    }

    #[test]
    fn flags_after_the_subcommand_fill_the_overrides() {
        let c = parse(&[
            "montecarlo", "--example", "2", "--rate", "2", "--t-grid", "0,1.5,3", "--lambda", "2,-0.5",
            "--region", "0.5,4,-1,1", "--ancestor", "2", "--replicas", "500", "--threads", "2",
        ])
        .unwrap();
        assert_eq!(c.command, Command::Montecarlo);
        assert_eq!(c.source, ModelSource::Builtin { name: "2".into(), rate: 2.0 });
        assert_eq!(c.ancestor, Some(1));
        assert_eq!(c.overrides.t_grid, Some(vec![0.0, 1.5, 3.0]));
        assert_eq!(c.overrides.lambda, Some(Complex64::new(2.0, -0.5)));
        assert_eq!(c.overrides.n_replicas, 500);
        assert_eq!(c.threads, Some(2));
        assert!(c.overrides.region.is_some());
        assert_eq!(c.load_model().unwrap().ancestor(), &Ancestor::Fixed(1));
    }

    #[test]
    fn out_of_range_values_are_usage_errors() {
        for args in [
            vec!["analyze", "--example", "1", "--ancestor", "0"],
            vec!["analyze", "--example", "1", "--rate", "-1"],
            vec!["analyze", "--example", "1", "--tail-tol", "0"],
            vec!["analyze", "--example", "1", "--threads", "0"],
            vec!["simulate", "--example", "1", "--horizon", "1", "--t-grid", "0,2"],
            vec!["simulate", "--example", "1", "--t-grid", "0,-1"],
            vec!["analyze", "--example", "1", "--region", "0,1,2"],
            vec!["analyze", "--example", "1", "--model", "m.json"],
        ] {
            assert!(matches!(parse(&args), Err(CliError::Usage(_))), "{args:?}");
        }
        let c = parse(&["analyze", "--example", "1", "--ancestor", "3"]).unwrap();
        assert!(matches!(c.load_model(), Err(CliError::Usage(_))));
    }

    #[test]
    fn root_selection_honours_the_radius() {
        let model = builtin::example1();
        let mut overrides = Overrides::defaults();
        overrides.lambda = Some(Complex64::new(1.0 + 5e-4, 0.0));
        assert_eq!(select_root(&model, 1.0, &overrides).unwrap().root.lambda, Complex64::new(1.0, 0.0));
        overrides.lambda = Some(Complex64::new(1.01, 0.0));
        assert!(matches!(select_root(&model, 1.0, &overrides), Err(CliError::RootSelection { .. })));
    }

    #[test]
    fn assumptions_map_to_their_own_errors() {
        assert!((require_assumptions(&builtin::example1()).unwrap() - 1.0).abs() < 1e-10);
        let err = require_assumptions(&builtin::deterministic_chain()).unwrap_err();
        assert!(matches!(err, CliError::Assumption { assumption: "A2", .. }));
    }
}
