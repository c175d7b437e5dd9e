fn main() {
    std::process::exit(qfield_cli::run(std::env::args_os()));
}
