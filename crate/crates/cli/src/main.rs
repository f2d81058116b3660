use clap::Parser;

fn main() -> std::process::ExitCode {
    let cli = volsmile_cli::Cli::parse();
    std::process::ExitCode::from(volsmile_cli::run(&cli).code())
}
