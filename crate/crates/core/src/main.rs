fn main() {
    std::process::exit(fgdd::cli::run(std::env::args_os()));
}
