fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HIERSEG_LOG", "warn")).init();
    std::process::exit(hierseg_cli::run(std::env::args_os()));
}
