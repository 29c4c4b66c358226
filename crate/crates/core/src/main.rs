fn main() {
    std::process::exit(uqtab::cli::run_command(std::env::args_os()));
}
