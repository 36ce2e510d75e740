use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dinf::cli::main_with(dinf::cli::Cli::parse()) {
        Ok(summary) => println!("{summary}"),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(match e {
                dinf::Error::Config(_) | dinf::Error::ConfigViolations(_) => 2,
                dinf::Error::Provenance(_) => 3,
                _ => 1,
            });
        }
    }
}
