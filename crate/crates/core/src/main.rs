use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use sqfn_core::lab::probes::realize_zoo;
use sqfn_core::lab::report::{fmt_f64, Table};
use sqfn_core::lab::{emit_reports, fit_kernel_envelopes, run_theorem_a_suite, ProbeZoo, ReportBundle, RunConfig};
use sqfn_core::potential::build_covering;
use sqfn_core::semigroup::{
    heat_kernel, multiplier_mismatch, poisson_multiplier, poisson_subordinated, spectral_decompose, tderiv_fd_mismatch, OperatorMatrix,
    Subordination, DEFAULT_SUBORDINATION_NODES,
};
use sqfn_core::spaces::{bmo_l_norm, make_atom, write_atoms, AtomKind, BallFamily};
use sqfn_core::squarefn::SquareFunction;
use sqfn_core::{Error, Result};

#[derive(Parser)]
#[command(name = "sqfn", version, about = "Square functions of Schrödinger operators on a grid")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, or a `.csv` path for table-producing commands.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Boundedness suite and envelope fits.
    Run(Common),
    /// Critical radius table.
    Rho(Common),
    /// Critical covering with coverage and overlap.
    Covering(Common),
    /// Heat kernel of L at time t, as binary plus JSON sidecar.
    Heat {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        t: f64,
    },
    /// Subordinated Poisson kernel at time t.
    Poisson {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        t: f64,
        #[arg(long)]
        check_subordination: bool,
        #[arg(long, default_value_t = DEFAULT_SUBORDINATION_NODES)]
        n_quad: usize,
    },
    /// Square function of one probe of the zoo.
    Gfunc {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "gauss-0")]
        probe: String,
        /// Index into the surrogate list of the config.
        #[arg(long, default_value_t = 0)]
        surrogate: usize,
    },
    /// BMO_L norm of one probe of the zoo.
    Bmo {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "gauss-0")]
        probe: String,
        #[arg(long, default_value_t = 0)]
        surrogate: usize,
    },
    /// Random atoms centred at the origin node.
    Atoms {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 4)]
        count: usize,
    },
    /// Boundedness suite only.
    TheoremA(Common),
    /// Envelope fits only.
    Envelopes(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sqfn: {e}");
            ExitCode::FAILURE
        }
    }
}

fn load(common: &Common) -> Result<(RunConfig, PathBuf)> {
    let cfg = RunConfig::from_path(&common.config)?;
    let out = common
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| Error::Config("no --out given and no output_dir in the config".into()))?;
    Ok((cfg, out))
}

/// A `.csv` target receives `table` alone; anything else is a report directory.
fn write(bundle: &ReportBundle, out: &Path, table: &str) -> Result<()> {
    if out.extension().is_some_and(|e| e == "csv") {
        let t = bundle.tables.iter().find(|t| t.name == table).ok_or_else(|| Error::Argument(format!("no table {table}")))?;
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let mut w = csv::Writer::from_path(out)?;
        w.write_record(&t.header)?;
        for row in &t.rows {
            w.write_record(row)?;
        }
        w.flush()?;
    } else {
        emit_reports(bundle, out)?;
    }
    eprintln!("sqfn: wrote {}", out.display());
    Ok(())
}

fn timed<T>(label: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let v = f()?;
    eprintln!("sqfn: {label} in {:.1}s", start.elapsed().as_secs_f64());
    Ok(v)
}

#[derive(Serialize)]
struct CoveringSummary {
    balls: usize,
    overlap: usize,
    covered_nodes: usize,
    node_count: usize,
}

#[derive(Serialize)]
struct PoissonSummary {
    t: f64,
    n_quad: usize,
    weight_mass: Option<f64>,
    multiplier_mismatch: Option<f64>,
    tderiv_fd_mismatch: Option<f64>,
    kernel: String,
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run(c) => {
            let (cfg, out) = load(&c)?;
            let suite = timed("suite", || run_theorem_a_suite(&cfg))?;
            let mut bundle = suite.to_bundle(&cfg)?;
            let env = timed("envelopes", || fit_kernel_envelopes(&cfg))?;
            bundle.merge(env.to_bundle()?);
            write(&bundle, &out, "norm_reports")
        }
        Command::TheoremA(c) => {
            let (cfg, out) = load(&c)?;
            let suite = timed("suite", || run_theorem_a_suite(&cfg))?;
            write(&suite.to_bundle(&cfg)?, &out, "norm_reports")
        }
        Command::Envelopes(c) => {
            let (cfg, out) = load(&c)?;
            let env = timed("envelopes", || fit_kernel_envelopes(&cfg))?;
            let mut bundle = env.to_bundle()?;
            bundle.section("config", &cfg)?;
            write(&bundle, &out, "envelope_bins")
        }
        Command::Rho(c) => {
            let (cfg, out) = load(&c)?;
            let grid = cfg.base_grid()?;
            let profile = timed("rho", || cfg.profile_on(&grid))?;
            let mut buf = Vec::new();
            profile.write_rho_csv(&grid, &mut buf)?;
            let mut rdr = csv::Reader::from_reader(buf.as_slice());
            let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
            let mut bundle = ReportBundle::new();
            let mut t = Table { name: "rho".into(), header, rows: Vec::new() };
            for rec in rdr.records() {
                t.rows.push(rec?.iter().map(String::from).collect());
            }
            bundle.tables.push(t);
            bundle.section("config", &cfg)?;
            write(&bundle, &out, "rho")
        }
        Command::Covering(c) => {
            let (cfg, out) = load(&c)?;
            let grid = cfg.base_grid()?;
            let profile = cfg.profile_on(&grid)?;
            let cov = timed("covering", || build_covering(&grid, &profile))?;
            let mut bundle = ReportBundle::new();
            let header: Vec<String> = (1..=grid.dim()).map(|k| format!("x{k}")).chain(["radius".into(), "overlap".into()]).collect();
            let counts = cov.overlap_counts(&grid);
            let mut t = Table { name: "covering".into(), header, rows: Vec::new() };
            for k in 0..cov.len() {
                let mut row: Vec<String> = grid.node(cov.centers[k]).iter().map(|v| fmt_f64(*v)).collect();
                row.push(fmt_f64(cov.radii[k]));
                row.push(counts[k].to_string());
                t.rows.push(row);
            }
            bundle.tables.push(t);
            bundle.section(
                "covering",
                &CoveringSummary { balls: cov.len(), overlap: cov.overlap, covered_nodes: cov.covered_nodes(&grid), node_count: grid.node_count() },
            )?;
            write(&bundle, &out, "covering")
        }
        Command::Heat { common, t } => {
            let (cfg, out) = load(&common)?;
            let grid = cfg.base_grid()?;
            let profile = cfg.profile_on(&grid)?;
            let dec = timed("eigensolve", || spectral_decompose(&OperatorMatrix::assemble(&grid, profile.values(), cfg.node_cap)?))?;
            let k = heat_kernel(&dec, t)?;
            std::fs::create_dir_all(&out)?;
            k.write_binary(&out.join("heat.bin"))?;
            eprintln!("sqfn: wrote {}", out.join("heat.bin").display());
            Ok(())
        }
        Command::Poisson { common, t, check_subordination, n_quad } => {
            let (cfg, out) = load(&common)?;
            let grid = cfg.base_grid()?;
            let profile = cfg.profile_on(&grid)?;
            let dec = timed("eigensolve", || spectral_decompose(&OperatorMatrix::assemble(&grid, profile.values(), cfg.node_cap)?))?;
            let k = poisson_subordinated(&dec, t, n_quad)?;
            std::fs::create_dir_all(&out)?;
            k.write_binary(&out.join("poisson.bin"))?;
            let mut summary = PoissonSummary { t, n_quad, weight_mass: None, multiplier_mismatch: None, tderiv_fd_mismatch: None, kernel: "poisson.bin".into() };
            if check_subordination {
                let sub = Subordination::new(t, n_quad)?;
                summary.weight_mass = Some(sub.weight_mass());
                summary.multiplier_mismatch = Some(multiplier_mismatch(&sub.multiplier(dec.eigenvalues()), &poisson_multiplier(dec.eigenvalues(), t)));
                summary.tderiv_fd_mismatch = Some(tderiv_fd_mismatch(&dec, t, n_quad)?);
            }
            let mut bundle = ReportBundle::new();
            bundle.section("poisson", &summary)?;
            emit_reports(&bundle, &out)?;
            eprintln!("sqfn: wrote {}", out.display());
            Ok(())
        }
        Command::Gfunc { common, probe, surrogate } => {
            let (cfg, out) = load(&common)?;
            let x = *cfg.surrogates.get(surrogate).ok_or_else(|| Error::Argument(format!("no surrogate {surrogate}")))?;
            let grid = cfg.base_grid()?;
            let profile = cfg.profile_on(&grid)?;
            let dec = timed("eigensolve", || spectral_decompose(&OperatorMatrix::assemble(&grid, profile.values(), cfg.node_cap)?))?;
            let zoo = ProbeZoo::generate(grid.dim(), grid.half_width(), &cfg.probes, cfg.seed);
            let probes = realize_zoo(&grid, &profile, &zoo, &x, cfg.seed)?;
            let p = probes.iter().find(|p| p.id == probe).ok_or_else(|| Error::Argument(format!("no probe {probe}")))?;
            let sq = SquareFunction::new(&cfg.square_function, &dec)?;
            let g = timed("g", || sq.g(&p.field, &x))?;
            let mut bundle = ReportBundle::new();
            let header: Vec<String> = (1..=grid.dim()).map(|k| format!("x{k}")).chain(["f_norm".into(), "g".into()]).collect();
            let norms = p.field.norms(&x)?;
            let mut t = Table { name: "gfunc".into(), header, rows: Vec::new() };
            for i in 0..grid.node_count() {
                let mut row: Vec<String> = grid.node(i).iter().map(|v| fmt_f64(*v)).collect();
                row.push(fmt_f64(norms[i]));
                row.push(fmt_f64(g[i]));
                t.rows.push(row);
            }
            bundle.tables.push(t);
            write(&bundle, &out, "gfunc")
        }
        Command::Bmo { common, probe, surrogate } => {
            let (cfg, out) = load(&common)?;
            let x = *cfg.surrogates.get(surrogate).ok_or_else(|| Error::Argument(format!("no surrogate {surrogate}")))?;
            let grid = cfg.base_grid()?;
            let profile = cfg.profile_on(&grid)?;
            let zoo = ProbeZoo::generate(grid.dim(), grid.half_width(), &cfg.probes, cfg.seed);
            let probes = realize_zoo(&grid, &profile, &zoo, &x, cfg.seed)?;
            let p = probes.iter().find(|p| p.id == probe).ok_or_else(|| Error::Argument(format!("no probe {probe}")))?;
            let family = BallFamily::ladder(&grid, &profile, cfg.ball_family.stride, cfg.ball_family.steps)?;
            let rep = timed("bmo", || bmo_l_norm(&grid, &p.field, &x, &family, cfg.ball_family.prune))?;
            let mut buf = Vec::new();
            rep.write_csv(&mut buf)?;
            let mut rdr = csv::Reader::from_reader(buf.as_slice());
            let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
            let mut t = Table { name: "bmo".into(), header, rows: Vec::new() };
            for rec in rdr.records() {
                t.rows.push(rec?.iter().map(String::from).collect());
            }
            let mut bundle = ReportBundle::new();
            bundle.tables.push(t);
            bundle.section("bmo", &serde_json::json!({"probe": probe, "norm": rep.norm, "classical": rep.classical, "argmax_ball": rep.argmax_ball}))?;
            write(&bundle, &out, "bmo")
        }
        Command::Atoms { common, count } => {
            let (cfg, out) = load(&common)?;
            let x = cfg.surrogates[0];
            let grid = cfg.base_grid()?;
            let profile = cfg.profile_on(&grid)?;
            let center = grid.nearest_node(&vec![0.0; grid.dim()]);
            let rho = profile.rho(center);
            let atoms = (0..count)
                .map(|k| {
                    let (r, kind) = if k % 2 == 0 { (0.5 * rho, AtomKind::Small) } else { (1.25 * rho, AtomKind::Big) };
                    make_atom(&grid, center, r, kind, &profile, &x, sqfn_core::lab::derive_seed(cfg.seed, &format!("atom/{k}")))
                })
                .collect::<Result<Vec<_>>>()?;
            write_atoms(&out, &atoms)?;
            eprintln!("sqfn: wrote {}", out.display());
            Ok(())
        }
    }
}
