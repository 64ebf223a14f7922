use env_logger::Env;

fn main() {
    env_logger::Builder::from_env(Env::new().filter("EPIKIT_LOG")).format_timestamp(None).init();
    std::process::exit(epikit::cli::main_with_args(std::env::args_os()));
}
