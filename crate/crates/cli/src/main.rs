use clap::{Parser, Subcommand, ValueEnum};
use rq1_cli::{
    run_convergence, run_infsup, run_mesh, run_poiseuille, run_solve, verify_element, CliError,
    MeshRequest,
};
use rq1_core::analysis::StudyDomain;
use rq1_core::assembly::{DivergenceForm, OperatorKind};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "rq1",
    version,
    about = "Nonconforming rotated-Q1 tetrahedral Stokes solver and verification harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormArg {
    /// pressure-consistent form
    B,
    /// pressure-inconsistent form
    Btilde,
}

impl From<FormArg> for DivergenceForm {
    fn from(value: FormArg) -> Self {
        match value {
            FormArg::B => DivergenceForm::Consistent,
            FormArg::Btilde => DivergenceForm::Tilde,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OperatorArg {
    Laplacian,
    Strain,
}

impl From<OperatorArg> for OperatorKind {
    fn from(value: OperatorArg) -> Self {
        match value {
            OperatorArg::Laplacian => OperatorKind::Laplacian,
            OperatorArg::Strain => OperatorKind::Strain,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DomainArg {
    Box,
    Ball,
}

#[derive(Subcommand)]
enum Command {
    /// Run the element and reference-identity verification suite
    VerifyElement {
        /// Machine-readable JSON report
        #[arg(long)]
        json: bool,
        /// Negative control: corrupt an expected constant; the suite must fail
        #[arg(long, hide = true)]
        inject_bad_constant: bool,
    },
    /// Manufactured-solution convergence study with slope gates
    Convergence {
        /// Number of refinement levels (at least 3)
        #[arg(long, default_value_t = 4)]
        levels: usize,
        #[arg(long, value_enum, default_value = "b")]
        form: FormArg,
        #[arg(long, value_enum, default_value = "laplacian")]
        operator: OperatorArg,
        #[arg(long, value_enum, default_value = "box")]
        domain: DomainArg,
        /// Output CSV path
        #[arg(long, default_value = "convergence.csv")]
        out: PathBuf,
    },
    /// Numerical inf-sup constants over a mesh sequence
    Infsup {
        #[arg(long, default_value_t = 3)]
        levels: usize,
        #[arg(long, value_enum, default_value = "b")]
        form: FormArg,
        /// Subdivisions of the coarsest box (each level adds 2)
        #[arg(long, default_value_t = 4)]
        coarsest: usize,
        /// Output CSV path
        #[arg(long, default_value = "infsup.csv")]
        out: PathBuf,
    },
    /// Channel-flow demo with natural outflow
    Poiseuille {
        #[arg(long, value_enum, default_value = "laplacian")]
        operator: OperatorArg,
        /// Base path for VTK output (writes `<out>.vtk` and `<out>_midpoints.vtk`)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve a manufactured case on a mesh file
    Solve {
        /// Mesh in the rq1mesh text format
        #[arg(long)]
        mesh: PathBuf,
        /// Manufactured case: cubic, affine or zero
        #[arg(long, default_value = "cubic")]
        case: String,
        #[arg(long, value_enum, default_value = "b")]
        form: FormArg,
        #[arg(long, value_enum, default_value = "laplacian")]
        operator: OperatorArg,
        /// Base path for VTK output
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate, check and export meshes
    Mesh {
        #[arg(long, value_enum, default_value = "box")]
        domain: DomainArg,
        /// Box extent as X,Y,Z
        #[arg(long, default_value = "1,1,1")]
        extent: String,
        /// Box subdivisions as NX,NY,NZ
        #[arg(long, default_value = "2,2,2")]
        subdivisions: String,
        /// Ball radius
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
        /// Ball refinement level
        #[arg(long, default_value_t = 0)]
        refine: usize,
        /// Output path for the rq1mesh file
        #[arg(long)]
        out: Option<PathBuf>,
        /// Validate invariants and the internal-edge assumption
        #[arg(long)]
        check: bool,
    },
}

fn parse_triple<T: std::str::FromStr>(text: &str, what: &str) -> Result<[T; 3], CliError> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 3 {
        return Err(CliError::Input(format!(
            "{what} must be three comma-separated values, got '{text}'"
        )));
    }
    let mut out = Vec::with_capacity(3);
    for p in parts {
        out.push(
            p.trim()
                .parse::<T>()
                .map_err(|_| CliError::Input(format!("invalid {what} component '{p}'")))?,
        );
    }
    Ok([
        out.remove(0),
        out.remove(0),
        out.remove(0),
    ])
}

fn write_file(path: &PathBuf, contents: &str) -> Result<(), CliError> {
    let mut w = BufWriter::new(
        File::create(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?,
    );
    w.write_all(contents.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::VerifyElement {
            json,
            inject_bad_constant,
        } => {
            let report = verify_element(inject_bad_constant);
            if json {
                println!("{}", report.render_json());
            } else {
                print!("{}", report.render_text());
            }
            if report.pass() {
                Ok(())
            } else {
                Err(CliError::Gate("element verification failed".into()))
            }
        }
        Command::Convergence {
            levels,
            form,
            operator,
            domain,
            out,
        } => {
            let domain = match domain {
                DomainArg::Box => StudyDomain::Box,
                DomainArg::Ball => StudyDomain::Ball,
            };
            let outcome = run_convergence(levels, form.into(), operator.into(), domain)?;
            let mut csv = Vec::new();
            outcome
                .table
                .write_csv(&mut csv)
                .map_err(|e| CliError::Input(e.to_string()))?;
            let csv = String::from_utf8(csv).expect("CSV is ASCII");
            write_file(&out, &csv)?;
            print!("{csv}");
            for (row, bp) in outcome
                .table
                .rows
                .iter()
                .zip(outcome.boundary_pressure.iter())
            {
                println!("boundary_pressure_eL2 h={:.6e} value={:.16e}", row.h, bp);
            }
            let slopes = outcome.gate()?;
            println!(
                "finest slopes: eL2u={:.3} eH1u={:.3} eL2p={:.3}",
                slopes[0], slopes[1], slopes[2]
            );
            Ok(())
        }
        Command::Infsup {
            levels,
            form,
            coarsest,
            out,
        } => {
            let study = run_infsup(levels, coarsest, form.into());
            let csv = study.csv();
            write_file(&out, &csv)?;
            print!("{csv}");
            study.gate()?;
            println!("inf-sup constants stable");
            Ok(())
        }
        Command::Poiseuille { operator, out } => {
            let report = run_poiseuille(operator.into(), out.as_deref())?;
            print!("{}", report.render_text());
            report.gate()?;
            Ok(())
        }
        Command::Solve {
            mesh,
            case,
            form,
            operator,
            out,
        } => {
            let report = run_solve(&mesh, &case, form.into(), operator.into(), out.as_deref())?;
            println!("eL2u={:.16e}", report.errors.velocity_l2);
            println!("eH1u={:.16e}", report.errors.velocity_h1_broken);
            println!("eL2p={:.16e}", report.errors.pressure_l2);
            print!("{}", report.diagnostics_report);
            Ok(())
        }
        Command::Mesh {
            domain,
            extent,
            subdivisions,
            radius,
            refine,
            out,
            check,
        } => {
            let request = match domain {
                DomainArg::Box => MeshRequest::Box {
                    extent: parse_triple::<f64>(&extent, "extent")?,
                    subdivisions: parse_triple::<usize>(&subdivisions, "subdivisions")?,
                },
                DomainArg::Ball => MeshRequest::Ball {
                    radius,
                    refinement: refine,
                },
            };
            let report = run_mesh(&request, out.as_deref(), check)?;
            println!("vertices={}", report.n_vertices);
            println!("cells={}", report.n_cells);
            println!("edges={}", report.n_edges);
            println!("faces={}", report.n_faces);
            println!("h={:.16e}", report.h);
            if let Some(pass) = report.internal_edge_pass {
                println!("internal_edge_assumption={}", if pass { "pass" } else { "fail" });
                if !pass {
                    return Err(CliError::Gate(
                        "internal-edge assumption violated".into(),
                    ));
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    // RQ1_THREADS caps the assembly parallelism (the factorization backend
    // stays sequential for reproducibility)
    if let Ok(threads) = std::env::var("RQ1_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global();
        }
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
