fn main() {
    env_logger::Builder::new()
        .filter_level(log::LevelFilter::Warn)
        .init();
    let outcome = qvec_cli::dispatch(std::env::args_os());
    std::process::exit(outcome.code);
}
