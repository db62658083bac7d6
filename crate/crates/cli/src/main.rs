fn main() {
    std::process::exit(crossroads_cli::cli::run(std::env::args_os()));
}
