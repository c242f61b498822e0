// The command-line workflow driven in-process: write a panel, match,
// estimate, then print the artifacts the run left behind.

use rollmatch::cli;
use rollmatch::simlab::{generate_scenario, Scenario, ScenarioSpec};
use rollmatch::{Error, Result};

pub fn run_example() -> Result<()> {
    let dir = std::env::temp_dir().join(format!("rollmatch-cli-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let csv = dir.join("panel.csv");
    let study = generate_scenario(&ScenarioSpec::new(Scenario::Linear, 1))?;
    study.dataset.write_csv(std::fs::File::create(&csv)?)?;

    let out = dir.join("run");
    let (csv, out) = (csv.to_string_lossy().into_owned(), out.to_string_lossy().into_owned());
    let (matched, estimated) = (format!("{out}/match"), format!("{out}/estimate"));
    let design = format!("{matched}/design.json");
    let steps: [&[&str]; 2] = [
        &["match", "--data", &csv, "--C", "2", "--out", &matched],
        &["estimate", "--data", &csv, "--design", &design, "--B", "500", "--variance", "corrected,cluster", "--seed", "3", "--out", &estimated],
    ];
    for args in steps {
        let code = cli::run(std::iter::once("rollmatch").chain(args.iter().copied()));
        if code != cli::EXIT_OK {
            return Err(Error::Config(format!("`{}` exited with {code}", args[0])));
        }
    }
    for run in [&matched, &estimated] {
        let mut names: Vec<_> = std::fs::read_dir(run)?
            .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
            .collect::<std::io::Result<_>>()?;
        names.sort();
        println!("{run}: {}", names.join(", "));
    }
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}
