use clap::Parser;

fn main() {
    dbp::tune_allocator();
    let cli = dbp::cli::Cli::parse();
    if let Err(err) = dbp::cli::run(cli) {
        eprintln!("error: {err}");
        std::process::exit(1);
    }
}
