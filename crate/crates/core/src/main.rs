fn main() {
    std::process::exit(tscot::cli::run(std::env::args_os()));
}
