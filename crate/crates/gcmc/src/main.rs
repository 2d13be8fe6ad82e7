use clap::Parser;

fn main() -> std::process::ExitCode {
    let cli = gcmc::cli::Cli::parse();
    match gcmc::cli::run(cli) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}
