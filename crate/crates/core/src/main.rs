fn main() {
    std::process::exit(creditflow::cli::run(std::env::args_os()));
}
