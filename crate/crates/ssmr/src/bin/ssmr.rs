fn main() {
    std::process::exit(ssmr::cli::main_with_args(std::env::args_os()));
}
